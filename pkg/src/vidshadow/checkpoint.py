"""Self-describing checkpoint container shared by both models.

A checkpoint is a torch-serialized dict:

    {"format": "vidshadow-checkpoint/1",
     "blocks": {block_name: state_dict},
     "frozen": {block_name: bool},
     "meta": {...}}            # model kind + construction config

Named blocks with frozen flags let tools verify that frozen parameter
groups survive fine-tuning bit-identically.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import torch

from .errors import FormatError, NotFoundError

CHECKPOINT_FORMAT = "vidshadow-checkpoint/1"


@dataclass
class Checkpoint:
    blocks: dict[str, dict]
    frozen: dict[str, bool]
    meta: dict


def save_checkpoint(
    path: Path | str,
    blocks: dict[str, dict],
    frozen: dict[str, bool],
    meta: dict,
) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format": CHECKPOINT_FORMAT,
        "blocks": {name: state for name, state in blocks.items()},
        "frozen": dict(frozen),
        "meta": dict(meta),
    }
    torch.save(payload, path)


def load_checkpoint(path: Path | str) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise NotFoundError(f"checkpoint not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise FormatError(f"{path}: not a {CHECKPOINT_FORMAT} checkpoint")
    return Checkpoint(
        blocks=payload["blocks"], frozen=payload["frozen"], meta=payload["meta"]
    )


def state_dict_digest(state: dict) -> str:
    """Stable content hash of a state dict, for frozen-block comparisons."""
    hasher = hashlib.sha256()
    for key in sorted(state):
        hasher.update(key.encode())
        tensor = state[key]
        hasher.update(str(tensor.dtype).encode())
        hasher.update(str(tuple(tensor.shape)).encode())
        hasher.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return hasher.hexdigest()
