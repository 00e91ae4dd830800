"""Long short-term attention network for mask propagation.

Per frame, a stride-16 encoder feeds a stack of attention blocks. Each
block refines its input through self-attention, then augments the result
with two memory lookups: dense attention over the first frame's stored
keys/values (long term, spatial correspondence) and attention restricted
to a w x w neighborhood in the previous frame (short term, temporal
smoothness). A feature-pyramid decoder turns the final block's output into
a full-resolution probability mask.

Block wiring (LayerNorm pre-attention; the normalized post-attention
feature is the one written to memory):

    a       = x + SelfAttn(LN_in(x))
    f_tilde = LN_feat(a)
    u       = f_tilde + Attn_long(phi(f_tilde), k_first, v_first)
                      + Attn_short(phi(f_tilde), k_prev, v_prev)
    out     = u + MLP(u)          # Linear -> GroupNorm -> ReLU -> Linear

The projection phi is shared between queries and memory keys, so q and k
of the same frame are numerically identical by construction. Memory values
are psi(f_tilde + MaskConv(M)) where MaskConv strides the full-resolution
mask down to the feature grid. No positional encodings by default, which
keeps every op permutation-equivariant over spatial positions.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .checkpoint import load_checkpoint, save_checkpoint
from .data_io import RunConfig, ShadowMask, VideoSequence
from .errors import ConfigError, ContractError, FormatError

STRIDE = 16


@dataclass(frozen=True)
class LstnConfig:
    channels: int = 256
    key_channels: int = 0  # 0 -> channels
    num_blocks: int = 3
    short_window: int = 15
    heads: int = 1
    encoder: str = "tiny"  # "tiny" | "mobilenet_v2"
    encoder_channels: tuple[int, ...] = (16, 32, 64)
    mlp_hidden: int = 0  # 0 -> 2 * channels
    gn_groups: int = 8
    decoder_channels: int = 32

    def __post_init__(self) -> None:
        if self.num_blocks < 1:
            raise ConfigError("num_blocks must be >= 1")
        if self.short_window < 1 or self.short_window % 2 == 0:
            raise ConfigError("short_window must be an odd positive integer")
        if self.encoder not in ("tiny", "mobilenet_v2"):
            raise ConfigError(f"unknown encoder {self.encoder!r}")
        if self.key_dim % self.heads or self.channels % self.heads:
            raise ConfigError("heads must divide channels and key_channels")
        if self.hidden_dim % self.gn_groups:
            raise ConfigError("gn_groups must divide mlp_hidden")

    @property
    def key_dim(self) -> int:
        return self.key_channels or self.channels

    @property
    def hidden_dim(self) -> int:
        return self.mlp_hidden or 2 * self.channels

    @classmethod
    def toy(cls, channels: int = 16, num_blocks: int = 1, **kwargs) -> "LstnConfig":
        kwargs.setdefault("encoder_channels", (8, 8, 16))
        kwargs.setdefault("gn_groups", 4)
        kwargs.setdefault("decoder_channels", 16)
        kwargs.setdefault("short_window", 5)
        return cls(channels=channels, num_blocks=num_blocks, **kwargs)


@dataclass
class FrameFeature:
    """Stride-16 feature grid of one frame plus the encoder skip maps."""

    tensor: torch.Tensor  # (C, H_f, W_f)
    skips: dict[str, torch.Tensor]
    frame_size: tuple[int, int]

    @property
    def spatial(self) -> tuple[int, int]:
        return tuple(self.tensor.shape[1:])  # type: ignore[return-value]

    def tokens(self) -> torch.Tensor:
        channels = self.tensor.shape[0]
        return self.tensor.reshape(channels, -1).T


@dataclass
class MemoryEntry:
    key: torch.Tensor  # (H_f * W_f, C_k)
    value: torch.Tensor  # (H_f * W_f, C_v)
    frame_index: int
    spatial: tuple[int, int]


class MemoryBank:
    """Long-term (first-frame) and short-term (previous-frame) entries.

    The long-term slot is write-once per video; the short-term slot is
    overwritten after every processed frame. Access counters let tests
    verify the read/write discipline.
    """

    def __init__(self) -> None:
        self.long_term: MemoryEntry | None = None
        self.short_term: MemoryEntry | None = None
        self.writes_long = 0
        self.writes_short = 0
        self.reads_long = 0
        self.reads_short = 0

    def write_long(self, entry: MemoryEntry) -> None:
        if self.long_term is not None:
            raise ContractError("long-term memory is written exactly once per video")
        self.long_term = entry
        self.writes_long += 1

    def write_short(self, entry: MemoryEntry) -> None:
        self.short_term = entry
        self.writes_short += 1

    def read_long(self) -> MemoryEntry:
        if self.long_term is None:
            raise ContractError("memory bank has no long-term entry")
        self.reads_long += 1
        return self.long_term

    def read_short(self) -> MemoryEntry:
        if self.short_term is None:
            raise ContractError("memory bank has no short-term entry")
        self.reads_short += 1
        return self.short_term


def _split_heads(x: torch.Tensor, heads: int) -> torch.Tensor:
    n, dim = x.shape
    return x.reshape(n, heads, dim // heads).permute(1, 0, 2)


def dense_attention(
    query: torch.Tensor,
    key: torch.Tensor,
    value: torch.Tensor,
    heads: int = 1,
    return_weights: bool = False,
):
    """Scaled dot-product attention over all key positions.

    query (N, C_k), key (M, C_k), value (M, C_v) -> (N, C_v).
    """
    if query.shape[1] != key.shape[1]:
        raise ContractError("query/key channel mismatch")
    if key.shape[0] != value.shape[0]:
        raise ContractError("key/value length mismatch")
    scale = 1.0 / math.sqrt(query.shape[1] // heads)
    q = _split_heads(query, heads)
    k = _split_heads(key, heads)
    v = _split_heads(value, heads)
    weights = torch.softmax(q @ k.transpose(-2, -1) * scale, dim=-1)
    out = (weights @ v).permute(1, 0, 2).reshape(query.shape[0], value.shape[1])
    if return_weights:
        return out, weights
    return out


def windowed_attention(
    query: torch.Tensor,
    key: torch.Tensor,
    value: torch.Tensor,
    window: int,
    heads: int = 1,
) -> torch.Tensor:
    """Attention where position p sees only the w x w neighborhood centered
    at p in the key/value maps, clipped at the borders.

    query/key (C_k, H, W), value (C_v, H, W) -> (C_v, H, W).
    """
    if window < 1 or window % 2 == 0:
        raise ConfigError("window size must be an odd positive integer")
    if query.shape != key.shape:
        raise ContractError("query/key shape mismatch")
    if key.shape[1:] != value.shape[1:]:
        raise ContractError("key/value spatial mismatch")
    key_dim, height, width = query.shape
    value_dim = value.shape[0]
    radius = window // 2
    positions = height * width

    key_win = F.unfold(key.unsqueeze(0), window, padding=radius)
    key_win = key_win.reshape(key_dim, window * window, positions)
    value_win = F.unfold(value.unsqueeze(0), window, padding=radius)
    value_win = value_win.reshape(value_dim, window * window, positions)
    valid = F.unfold(
        torch.ones(1, 1, height, width, dtype=query.dtype, device=query.device),
        window,
        padding=radius,
    ).reshape(window * window, positions) > 0.5

    scale = 1.0 / math.sqrt(key_dim // heads)
    q = query.reshape(heads, key_dim // heads, 1, positions)
    k = key_win.reshape(heads, key_dim // heads, window * window, positions)
    scores = (q * k).sum(dim=1) * scale  # (heads, w^2, positions)
    scores = scores.masked_fill(~valid.unsqueeze(0), float("-inf"))
    weights = torch.softmax(scores, dim=1)
    v = value_win.reshape(heads, value_dim // heads, window * window, positions)
    out = (v * weights.unsqueeze(1)).sum(dim=2)  # (heads, C_v/heads, positions)
    return out.reshape(value_dim, height, width)


class SelfAttention(nn.Module):
    """Single projection per role, no output projection: at one position the
    attention output reduces to the value projection of its input."""

    def __init__(self, dim: int, key_dim: int, heads: int = 1) -> None:
        super().__init__()
        self.wq = nn.Linear(dim, key_dim)
        self.wk = nn.Linear(dim, key_dim)
        self.wv = nn.Linear(dim, dim)
        self.heads = heads

    def forward(self, tokens: torch.Tensor, return_weights: bool = False):
        return dense_attention(
            self.wq(tokens),
            self.wk(tokens),
            self.wv(tokens),
            heads=self.heads,
            return_weights=return_weights,
        )


class MaskEncoder(nn.Module):
    """Strided convolution chain: full-resolution mask down to the feature
    grid (stride 16), matching the frame feature's channel width."""

    def __init__(self, dim: int) -> None:
        super().__init__()
        mid = max(dim // 4, 4)
        self.layers = nn.Sequential(
            nn.Conv2d(1, mid, 3, stride=2, padding=1),
            nn.ReLU(),
            nn.Conv2d(mid, mid, 3, stride=2, padding=1),
            nn.ReLU(),
            nn.Conv2d(mid, mid, 3, stride=2, padding=1),
            nn.ReLU(),
            nn.Conv2d(mid, dim, 3, stride=2, padding=1),
        )

    def forward(self, mask: torch.Tensor) -> torch.Tensor:
        return self.layers(mask)

    def zero_bias_(self) -> None:
        for module in self.layers:
            if isinstance(module, nn.Conv2d):
                nn.init.zeros_(module.bias)


class LSTBlock(nn.Module):
    def __init__(self, config: LstnConfig) -> None:
        super().__init__()
        dim, key_dim = config.channels, config.key_dim
        self.heads = config.heads
        self.norm_in = nn.LayerNorm(dim)
        self.self_attn = SelfAttention(dim, key_dim, config.heads)
        self.norm_feat = nn.LayerNorm(dim)
        # phi produces both queries and memory keys (shared weights).
        self.phi = nn.Linear(dim, key_dim)
        self.psi = nn.Linear(dim, dim)
        self.mask_encoder = MaskEncoder(dim)
        self.mlp = nn.Sequential(
            nn.Linear(dim, config.hidden_dim),
            nn.GroupNorm(config.gn_groups, config.hidden_dim),
            nn.ReLU(),
            nn.Linear(config.hidden_dim, dim),
        )

    def self_attend(self, tokens: torch.Tensor) -> torch.Tensor:
        """x -> f_tilde: pre-norm residual self-attention, then LayerNorm."""
        return self.norm_feat(tokens + self.self_attn(self.norm_in(tokens)))

    def forward(
        self,
        x: torch.Tensor,
        bank: MemoryBank | None,
        window: int,
        use_long: bool = True,
        use_short: bool = True,
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """x (C, H_f, W_f) -> (refined (C, H_f, W_f), f_tilde (H_f*W_f, C))."""
        channels, height, width = x.shape
        tokens = x.reshape(channels, -1).T
        f_tilde = self.self_attend(tokens)
        u = f_tilde
        if bank is not None and (use_long or use_short):
            query = self.phi(f_tilde)
            if use_long:
                entry = bank.read_long()
                self._check_entry(entry, (height, width))
                u = u + dense_attention(query, entry.key, entry.value, self.heads)
            if use_short:
                entry = bank.read_short()
                self._check_entry(entry, (height, width))
                q_map = query.T.reshape(-1, height, width)
                k_map = entry.key.T.reshape(-1, height, width)
                v_map = entry.value.T.reshape(-1, height, width)
                short = windowed_attention(q_map, k_map, v_map, window, self.heads)
                u = u + short.reshape(channels, -1).T
        out = u + self.mlp(u)
        return out.T.reshape(channels, height, width), f_tilde

    @staticmethod
    def _check_entry(entry: MemoryEntry, spatial: tuple[int, int]) -> None:
        if entry.spatial != spatial:
            raise ContractError(
                f"memory entry spatial {entry.spatial} != frame grid {spatial}"
            )

    def update_memory(
        self, f_tilde: torch.Tensor, mask: torch.Tensor, frame_index: int,
        spatial: tuple[int, int],
    ) -> MemoryEntry:
        """k = phi(f_tilde), v = psi(f_tilde + MaskConv(M)); the mask arrives
        at frame resolution and is strided down to the feature grid."""
        if mask.ndim != 2:
            raise ContractError("mask must be a 2-D map at frame resolution")
        encoded = self.mask_encoder(mask.unsqueeze(0).unsqueeze(0).to(f_tilde.dtype))
        if tuple(encoded.shape[2:]) != spatial:
            raise ContractError(
                f"mask conv produced {tuple(encoded.shape[2:])}, expected {spatial}"
            )
        mask_tokens = encoded[0].reshape(encoded.shape[1], -1).T
        return MemoryEntry(
            key=self.phi(f_tilde),
            value=self.psi(f_tilde + mask_tokens),
            frame_index=frame_index,
            spatial=spatial,
        )


class TinyFrameEncoder(nn.Module):
    """Four stride-2 stages; exposes stride-4 and stride-8 skips."""

    def __init__(self, config: LstnConfig) -> None:
        super().__init__()
        c1, c2, c3 = config.encoder_channels
        self.stage1 = nn.Sequential(nn.Conv2d(3, c1, 3, 2, 1), nn.ReLU())
        self.stage2 = nn.Sequential(nn.Conv2d(c1, c2, 3, 2, 1), nn.ReLU())
        self.stage3 = nn.Sequential(nn.Conv2d(c2, c3, 3, 2, 1), nn.ReLU())
        self.stage4 = nn.Conv2d(c3, config.channels, 3, 2, 1)
        self.skip_channels = {"s4": c2, "s8": c3}

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, dict[str, torch.Tensor]]:
        s2 = self.stage1(x)
        s4 = self.stage2(s2)
        s8 = self.stage3(s4)
        s16 = self.stage4(s8)
        return s16, {"s4": s4, "s8": s8}


class MobileNetV2Encoder(nn.Module):
    """MobileNetV2 trunk cut at stride 16, with a projection to the working
    width. Weights load from a local file when given; never downloaded."""

    def __init__(self, config: LstnConfig, weights_path: Path | str | None = None) -> None:
        super().__init__()
        from torchvision.models import mobilenet_v2

        backbone = mobilenet_v2(weights=None)
        if weights_path is not None:
            state = torch.load(weights_path, map_location="cpu", weights_only=False)
            backbone.load_state_dict(state)
        features = backbone.features
        self.stage_s4 = features[:4]    # 24 channels, stride 4
        self.stage_s8 = features[4:7]   # 32 channels, stride 8
        self.stage_s16 = features[7:14]  # 96 channels, stride 16
        self.project = nn.Conv2d(96, config.channels, 1)
        self.skip_channels = {"s4": 24, "s8": 32}

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, dict[str, torch.Tensor]]:
        s4 = self.stage_s4(x)
        s8 = self.stage_s8(s4)
        s16 = self.project(self.stage_s16(s8))
        return s16, {"s4": s4, "s8": s8}


class FpnDecoder(nn.Module):
    """Top-down pyramid over the stride-16 output and encoder skips, ending
    in single-channel logits upsampled to frame resolution."""

    def __init__(self, config: LstnConfig, skip_channels: dict[str, int]) -> None:
        super().__init__()
        dc = config.decoder_channels
        self.reduce = nn.Conv2d(config.channels, dc, 1)
        self.lateral_s8 = nn.Conv2d(skip_channels["s8"], dc, 1)
        self.lateral_s4 = nn.Conv2d(skip_channels["s4"], dc, 1)
        self.smooth_s8 = nn.Sequential(nn.Conv2d(dc, dc, 3, 1, 1), nn.ReLU())
        self.smooth_s4 = nn.Sequential(nn.Conv2d(dc, dc, 3, 1, 1), nn.ReLU())
        self.head = nn.Conv2d(dc, 1, 3, 1, 1)

    def forward(
        self,
        x: torch.Tensor,
        skips: dict[str, torch.Tensor],
        frame_size: tuple[int, int],
    ) -> torch.Tensor:
        p16 = self.reduce(x.unsqueeze(0))
        p8 = self.smooth_s8(
            F.interpolate(p16, size=skips["s8"].shape[2:], mode="bilinear",
                          align_corners=False)
            + self.lateral_s8(skips["s8"])
        )
        p4 = self.smooth_s4(
            F.interpolate(p8, size=skips["s4"].shape[2:], mode="bilinear",
                          align_corners=False)
            + self.lateral_s4(skips["s4"])
        )
        logits = self.head(p4)
        logits = F.interpolate(
            logits, size=frame_size, mode="bilinear", align_corners=False
        )
        return logits[0, 0]


def mask_from_logits(logits: torch.Tensor) -> ShadowMask:
    values = torch.sigmoid(logits.detach()).float().cpu().numpy()
    return ShadowMask(np.clip(values, 0.0, 1.0), kind="probability")


def lstn_loss(logits: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Cross-entropy plus (1 - soft Jaccard), unweighted.

    The soft Jaccard uses the dot-product form <p,g> / (|p|^2 + |g|^2 - <p,g>),
    which is 1 exactly when the predicted probabilities equal the target.
    """
    if logits.shape != target.shape:
        raise ContractError(f"shape mismatch: {logits.shape} vs {target.shape}")
    target = target.to(logits.dtype)
    ce = F.binary_cross_entropy_with_logits(logits, target)
    probs = torch.sigmoid(logits)
    intersection = (probs * target).sum()
    denom = (probs * probs).sum() + (target * target).sum() - intersection
    if float(denom.detach()) <= 0.0:
        return ce
    return ce + (1.0 - intersection / denom)


class LstnModel(nn.Module):
    def __init__(self, config: LstnConfig, encoder_weights: Path | str | None = None) -> None:
        super().__init__()
        self.config = config
        if config.encoder == "mobilenet_v2":
            self.encoder: nn.Module = MobileNetV2Encoder(config, encoder_weights)
        else:
            self.encoder = TinyFrameEncoder(config)
        self.blocks = nn.ModuleList(
            LSTBlock(config) for _ in range(config.num_blocks)
        )
        self.decoder = FpnDecoder(config, self.encoder.skip_channels)

    def _dtype(self) -> torch.dtype:
        return next(self.parameters()).dtype

    def new_banks(self) -> list[MemoryBank]:
        return [MemoryBank() for _ in self.blocks]

    def frame_tensor(self, frame: np.ndarray | torch.Tensor) -> torch.Tensor:
        if isinstance(frame, torch.Tensor):
            tensor = frame
        else:
            frame = np.asarray(frame)
            if frame.ndim != 3 or frame.shape[2] != 3:
                raise ContractError(f"expected an H x W x 3 frame, got {frame.shape}")
            tensor = torch.from_numpy(frame.astype(np.float32) / 255.0 - 0.5)
            tensor = tensor.permute(2, 0, 1)
        return tensor.to(self._dtype())

    def encode_frame(self, frame: np.ndarray | torch.Tensor) -> FrameFeature:
        """Stride-16 feature grid: an H x W frame yields ceil(H/16) x ceil(W/16)."""
        tensor = self.frame_tensor(frame).unsqueeze(0)
        s16, skips = self.encoder(tensor)
        return FrameFeature(
            tensor=s16[0], skips=skips, frame_size=tuple(tensor.shape[2:])
        )

    def forward_frame(
        self,
        feature: FrameFeature,
        banks: list[MemoryBank] | None,
        window: int | None = None,
        use_long: bool = True,
        use_short: bool = True,
    ) -> tuple[torch.Tensor, list[torch.Tensor]]:
        """One frame through all blocks; returns logits at frame resolution
        and each block's f_tilde (the features memory entries derive from).

        banks=None runs the self-attention-only path used for the seed frame
        (and for the no-memory ablation)."""
        window = self.config.short_window if window is None else window
        if banks is not None and len(banks) != len(self.blocks):
            raise ContractError("one memory bank per block is required")
        x = feature.tensor
        f_tildes = []
        for index, block in enumerate(self.blocks):
            bank = banks[index] if banks is not None else None
            x, f_tilde = block(x, bank, window, use_long, use_short)
            f_tildes.append(f_tilde)
        logits = self.decoder(x, feature.skips, feature.frame_size)
        return logits, f_tildes

    def memory_entries(
        self,
        feature: FrameFeature,
        f_tildes: list[torch.Tensor],
        mask: torch.Tensor,
        frame_index: int,
    ) -> list[MemoryEntry]:
        return [
            block.update_memory(f_tilde, mask, frame_index, feature.spatial)
            for block, f_tilde in zip(self.blocks, f_tildes)
        ]

    def pretrained_parameters(self) -> list[nn.Parameter]:
        """The encoder group (the backbone that would be ImageNet-pretrained
        at full scale); everything else trains from scratch."""
        return list(self.encoder.parameters())

    def scratch_parameters(self) -> list[nn.Parameter]:
        encoder_ids = {id(p) for p in self.encoder.parameters()}
        return [p for p in self.parameters() if id(p) not in encoder_ids]

    def save(self, path: Path | str) -> None:
        save_checkpoint(
            path,
            blocks={"model": self.state_dict()},
            frozen={"model": False},
            meta={"kind": "lstn", "config": asdict(self.config)},
        )

    @classmethod
    def load(cls, path: Path | str) -> "LstnModel":
        checkpoint = load_checkpoint(path)
        if checkpoint.meta.get("kind") != "lstn":
            raise FormatError(f"{path}: not a propagation-network checkpoint")
        config_dict = dict(checkpoint.meta["config"])
        config_dict["encoder_channels"] = tuple(config_dict["encoder_channels"])
        model = cls(LstnConfig(**config_dict))
        model.load_state_dict(checkpoint.blocks["model"])
        return model


def _random_crop_resize(
    frames: list[np.ndarray],
    masks: list[np.ndarray],
    crop_size: int,
    scale_min: float,
    rng: np.random.Generator,
) -> tuple[list[torch.Tensor], list[torch.Tensor]]:
    """One crop window drawn per clip, applied to every frame, resized to
    crop_size (bilinear frames, nearest masks so targets stay binary)."""
    height, width = frames[0].shape[:2]
    factor = float(rng.uniform(scale_min, 1.0))
    crop_h = max(STRIDE, int(round(height * factor)))
    crop_w = max(STRIDE, int(round(width * factor)))
    crop_h, crop_w = min(crop_h, height), min(crop_w, width)
    top = int(rng.integers(0, height - crop_h + 1))
    left = int(rng.integers(0, width - crop_w + 1))

    out_frames, out_masks = [], []
    for frame, mask in zip(frames, masks):
        frame_crop = frame[top : top + crop_h, left : left + crop_w]
        mask_crop = mask[top : top + crop_h, left : left + crop_w]
        tensor = torch.from_numpy(frame_crop.astype(np.float32) / 255.0 - 0.5)
        tensor = tensor.permute(2, 0, 1).unsqueeze(0)
        tensor = F.interpolate(
            tensor, size=(crop_size, crop_size), mode="bilinear", align_corners=False
        )
        target = torch.from_numpy(mask_crop.astype(np.float32))
        target = F.interpolate(
            target.unsqueeze(0).unsqueeze(0), size=(crop_size, crop_size), mode="nearest"
        )
        out_frames.append(tensor[0])
        out_masks.append(target[0, 0])
    return out_frames, out_masks


def rollout_loss(
    model: LstnModel,
    frames: list[torch.Tensor],
    targets: list[torch.Tensor],
    window: int | None = None,
    use_long: bool = True,
    use_short: bool = True,
) -> torch.Tensor:
    """Training rollout: seed memory from frame 1 with its ground truth,
    then predict the remaining frames, updating short-term memory with the
    predicted (differentiable) masks. Returns the mean per-frame loss."""
    banks = model.new_banks()
    feature = model.encode_frame(frames[0])
    _, f_tildes = model.forward_frame(
        feature, None, window, use_long=False, use_short=False
    )
    entries = model.memory_entries(feature, f_tildes, targets[0], frame_index=0)
    for bank, entry in zip(banks, entries):
        bank.write_long(entry)
        bank.write_short(entry)

    losses = []
    for t in range(1, len(frames)):
        feature = model.encode_frame(frames[t])
        logits, f_tildes = model.forward_frame(
            feature, banks, window, use_long=use_long, use_short=use_short
        )
        losses.append(lstn_loss(logits, targets[t]))
        entries = model.memory_entries(
            feature, f_tildes, torch.sigmoid(logits), frame_index=t
        )
        for bank, entry in zip(banks, entries):
            bank.write_short(entry)
    if not losses:
        raise ContractError("rollout needs at least two frames")
    return torch.stack(losses).mean()


def train_lstn(
    model: LstnModel,
    dataset: list[VideoSequence],
    config: RunConfig | None = None,
    rng: np.random.Generator | None = None,
    log_path: Path | str | None = None,
) -> tuple[LstnModel, list[dict]]:
    """Train on random ordered clips. The (would-be pretrained) encoder group
    uses lr_pretrained, everything else lr_scratch; Adam with weight decay."""
    config = config or RunConfig()
    rng = rng or np.random.default_rng(config.seed)
    if not dataset:
        raise ContractError("train_lstn needs a nonempty dataset")
    for video in dataset:
        if video.gt_masks is None:
            raise ContractError(f"video {video.id!r} has no ground-truth masks")
        if len(video) < 2:
            raise ContractError(f"video {video.id!r} is too short to form a clip")

    optimizer = torch.optim.Adam(
        [
            {"params": model.pretrained_parameters(), "lr": config.lr_pretrained},
            {"params": model.scratch_parameters(), "lr": config.lr_scratch},
        ],
        weight_decay=config.weight_decay,
    )
    model.train()
    log: list[dict] = []
    log_file = None
    if log_path is not None:
        path = Path(log_path)
        path.parent.mkdir(parents=True, exist_ok=True)
        log_file = path.open("w", encoding="utf-8")
    try:
        for step in range(1, config.steps + 1):
            batch_losses = []
            for _ in range(config.batch_size):
                video = dataset[int(rng.integers(len(dataset)))]
                clip_len = min(config.rollout_frames, len(video))
                start = int(rng.integers(len(video) - clip_len + 1))
                frames = video.frames[start : start + clip_len]
                masks = [m.values for m in video.gt_masks[start : start + clip_len]]
                clip_frames, clip_targets = _random_crop_resize(
                    frames, masks, config.crop_size, config.crop_scale_min, rng
                )
                batch_losses.append(
                    rollout_loss(
                        model,
                        clip_frames,
                        clip_targets,
                        window=config.short_window_w,
                        use_long=config.use_long,
                        use_short=config.use_short,
                    )
                )
            loss = torch.stack(batch_losses).mean()
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            entry = {
                "step": step,
                "loss": float(loss.detach()),
                "lr_pretrained": config.lr_pretrained,
                "lr_scratch": config.lr_scratch,
            }
            log.append(entry)
            if log_file is not None:
                log_file.write(json.dumps(entry) + "\n")
    finally:
        if log_file is not None:
            log_file.close()
    return model, log
