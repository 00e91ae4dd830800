"""Dataset loading and mask/config persistence.

On-disk layout (one directory per video, frames paired with masks by sorted
filename order):

    root/videos/<video_id>/<frame>.jpg|png
    root/annotations/<video_id>/<frame>.png

Mask files are single-channel 8-bit PNGs: binary masks use {0, 255},
probability maps use the full 0..255 range. Prediction trees mirror the
input tree under an output root.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigError, ContractError, FormatError, NotFoundError

FRAME_EXTENSIONS = (".jpg", ".jpeg", ".png", ".bmp")


@dataclass
class ShadowMask:
    """Per-frame shadow map, either probabilities in [0, 1] or binary {0, 1}.

    Binary masks are stored as uint8 {0, 1}; probability masks as float32.
    """

    values: np.ndarray
    kind: str = "probability"
    threshold_used: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("probability", "binary"):
            raise ContractError(f"unknown mask kind: {self.kind!r}")
        values = np.asarray(self.values)
        if values.ndim != 2:
            raise ContractError(f"mask must be 2-D, got shape {values.shape}")
        if self.kind == "binary":
            values = values.astype(np.uint8, copy=False)
            if not np.isin(values, (0, 1)).all():
                raise ContractError("binary mask values must be in {0, 1}")
        else:
            values = values.astype(np.float32, copy=False)
            if values.size and (values.min() < 0.0 or values.max() > 1.0):
                raise ContractError("probability mask values must lie in [0, 1]")
        self.values = values

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape  # type: ignore[return-value]

    def binarize(self, threshold: float = 0.5) -> "ShadowMask":
        """Threshold a probability mask; pixels with p >= threshold become 1."""
        if self.kind != "probability":
            raise ContractError("binarize expects a probability mask")
        if not 0.0 <= threshold <= 1.0:
            raise ContractError(f"threshold must be in [0, 1], got {threshold}")
        return ShadowMask(
            (self.values >= threshold).astype(np.uint8),
            kind="binary",
            threshold_used=threshold,
        )


@dataclass
class VideoSequence:
    """Ordered frames of one video plus optional ground-truth masks."""

    id: str
    frames: list[np.ndarray]
    gt_masks: list[ShadowMask] | None = None
    frame_names: list[str] | None = None

    def __post_init__(self) -> None:
        if not self.frames:
            raise ContractError("a video needs at least one frame")
        shape = self.frames[0].shape
        for i, frame in enumerate(self.frames):
            if frame.ndim != 3 or frame.shape[2] != 3:
                raise FormatError(f"frame {i} is not an H x W x 3 RGB image")
            if frame.shape != shape:
                raise FormatError(
                    f"frame {i} has shape {frame.shape}, expected {shape}"
                )
        if self.gt_masks is not None:
            if len(self.gt_masks) != len(self.frames):
                raise FormatError(
                    f"{len(self.gt_masks)} masks for {len(self.frames)} frames"
                )
            for i, mask in enumerate(self.gt_masks):
                if mask.shape != shape[:2]:
                    raise FormatError(
                        f"mask {i} resolution {mask.shape} != frame {shape[:2]}"
                    )
        if self.frame_names is None:
            width = max(5, len(str(len(self.frames) - 1)))
            self.frame_names = [f"{i:0{width}d}" for i in range(len(self.frames))]
        elif len(self.frame_names) != len(self.frames):
            raise FormatError("frame_names length must match frame count")

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def frame_shape(self) -> tuple[int, int]:
        return self.frames[0].shape[:2]


def save_mask(mask: ShadowMask, path: Path | str) -> None:
    """Write a mask as a single-channel 8-bit PNG.

    Binary masks map {0, 1} -> {0, 255}. Probability values are quantized
    round-half-up to 0..255.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if mask.kind == "binary":
        data = (mask.values * 255).astype(np.uint8)
    else:
        data = np.floor(mask.values.astype(np.float64) * 255.0 + 0.5).astype(np.uint8)
    Image.fromarray(data, mode="L").save(path)


def load_mask(path: Path | str, kind: str = "auto") -> ShadowMask:
    """Load a mask PNG.

    kind="auto" infers binary when all pixel values are in {0, 255},
    probability otherwise. Non-grayscale files raise FormatError.
    """
    path = Path(path)
    if not path.exists():
        raise NotFoundError(f"mask file not found: {path}")
    with Image.open(path) as img:
        if img.mode != "L":
            raise FormatError(
                f"{path}: expected single-channel 8-bit grayscale, got mode {img.mode!r}"
            )
        data = np.asarray(img, dtype=np.uint8)
    binary_encoded = bool(np.isin(data, (0, 255)).all())
    if kind == "auto":
        kind = "binary" if binary_encoded else "probability"
    if kind == "binary":
        if not binary_encoded:
            raise FormatError(f"{path}: binary mask must contain only {{0, 255}}")
        return ShadowMask((data // 255).astype(np.uint8), kind="binary")
    if kind == "probability":
        return ShadowMask(data.astype(np.float32) / 255.0, kind="probability")
    raise ContractError(f"unknown mask kind: {kind!r}")


def load_image(path: Path | str) -> np.ndarray:
    """Load an RGB frame as an H x W x 3 uint8 array."""
    path = Path(path)
    if not path.exists():
        raise NotFoundError(f"image file not found: {path}")
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.uint8)


def save_image(image: np.ndarray, path: Path | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.asarray(image, dtype=np.uint8), mode="RGB").save(path)


def _sorted_frame_files(directory: Path) -> list[Path]:
    # Lexicographic filename order defines frame order.
    return sorted(
        (p for p in directory.iterdir() if p.suffix.lower() in FRAME_EXTENSIONS),
        key=lambda p: p.name,
    )


def load_video_sequence(root_path: Path | str, video_id: str) -> VideoSequence:
    """Load one video (and its masks, when an annotations directory exists)."""
    root = Path(root_path)
    video_dir = root / "videos" / video_id
    if not video_dir.is_dir():
        raise NotFoundError(f"video directory not found: {video_dir}")
    frame_files = _sorted_frame_files(video_dir)
    if not frame_files:
        raise NotFoundError(f"no frame files in {video_dir}")
    frames = [load_image(p) for p in frame_files]

    gt_masks = None
    ann_dir = root / "annotations" / video_id
    if ann_dir.is_dir():
        mask_files = _sorted_frame_files(ann_dir)
        if len(mask_files) != len(frame_files):
            raise FormatError(
                f"{video_id}: {len(mask_files)} masks for {len(frame_files)} frames"
            )
        gt_masks = [load_mask(p, kind="binary") for p in mask_files]

    return VideoSequence(
        id=video_id,
        frames=frames,
        gt_masks=gt_masks,
        frame_names=[p.stem for p in frame_files],
    )


def list_videos(root_path: Path | str) -> list[str]:
    """Video ids under root/videos, sorted."""
    videos_dir = Path(root_path) / "videos"
    if not videos_dir.is_dir():
        raise NotFoundError(f"videos directory not found: {videos_dir}")
    return sorted(p.name for p in videos_dir.iterdir() if p.is_dir())


def save_prediction(
    out_root: Path | str, video_id: str, frame_name: str, mask: ShadowMask
) -> Path:
    """Write one predicted mask; the output tree mirrors the input tree."""
    path = Path(out_root) / video_id / f"{frame_name}.png"
    save_mask(mask, path)
    return path


@dataclass(frozen=True)
class RunConfig:
    """Pipeline configuration with documented defaults.

    Training-schedule defaults follow the reference recipe: 3 attention
    blocks, 465 crop, batch 16 for 50000 steps, weight decay 0.07, learning
    rates 2e-5 (pretrained backbone) / 2e-4 (scratch layers), decoder
    fine-tuning for 50 epochs at 1e-4, and a 0.75 IoU gate for bidirectional
    re-prediction.
    """

    lst_blocks: int = 3
    short_window_w: int = 15
    crop_size: int = 465
    batch_size: int = 16
    steps: int = 50000
    weight_decay: float = 0.07
    lr_pretrained: float = 2e-5
    lr_scratch: float = 2e-4
    finetune_epochs: int = 50
    lr_finetune: float = 1e-4
    binarize_threshold: float = 0.5
    plus_iou_gate: float = 0.75
    plus_average: bool = False
    min_region_area: int = 50
    max_boxes: int = 8
    max_box_shift: int = 20
    use_long: bool = True
    use_short: bool = True
    rollout_frames: int = 3
    crop_scale_min: float = 0.6
    seed: int = 0

    def replace(self, **updates) -> "RunConfig":
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update(updates)
        return RunConfig(**values)


def _parse_config_value(key: str, raw: str, target_type: type):
    raw = raw.strip()
    try:
        if target_type is bool:
            lowered = raw.lower()
            if lowered in ("true", "1", "yes"):
                return True
            if lowered in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if target_type is int:
            value = int(raw)
        elif target_type is float:
            value = float(raw)
            if math.isnan(value) or math.isinf(value):
                raise ValueError(raw)
        else:
            return raw
    except ValueError as exc:
        raise ConfigError(f"cannot parse {key}={raw!r} as {target_type.__name__}") from exc
    return value


def load_config(path: Path | str) -> RunConfig:
    """Parse a flat key=value config file; '#' starts a comment.

    Unknown keys and unparseable values raise ConfigError. Missing keys take
    the documented defaults.
    """
    path = Path(path)
    if not path.exists():
        raise NotFoundError(f"config file not found: {path}")
    known = {f.name: f.type for f in fields(RunConfig)}
    type_map = {"int": int, "float": float, "bool": bool, "str": str}
    overrides: dict = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        if key in overrides:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        target = known[key]
        target_type = type_map[target] if isinstance(target, str) else target
        overrides[key] = _parse_config_value(key, raw, target_type)
    return RunConfig(**overrides)
