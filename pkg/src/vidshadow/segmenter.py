"""Promptable single-image shadow segmenter.

The model keeps the encoder / prompt-encoder / mask-decoder split of
promptable segmentation foundation models: a convolutional image encoder
produces a stride-16 embedding grid, box prompts become corner tokens
(Fourier position features plus a learned corner-type embedding), and a
small two-way transformer decoder turns an output token into mask logits.

Both encoders are frozen; only the mask decoder trains. Two geometries are
exercised here: the reference geometry (1024 input, 256-channel 64x64
embedding) matching public pretrained weights, and a toy geometry small
enough to fine-tune on a CPU in seconds. An adapter entry point loads
external weights through a name-mapping manifest.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .checkpoint import load_checkpoint, save_checkpoint
from .data_io import RunConfig, ShadowMask
from .errors import ContractError, FormatError
from .prompt_gen import BoxPrompt, extract_boxes, perturb_boxes

STRIDE = 16


@dataclass(frozen=True)
class SegmenterConfig:
    input_size: int = 1024
    embed_dim: int = 256
    encoder_channels: tuple[int, ...] = (16, 32, 64)
    decoder_layers: int = 2
    decoder_mlp_dim: int = 0  # 0 -> 2 * embed_dim
    pe_seed: int = 17

    def __post_init__(self) -> None:
        if self.input_size % STRIDE != 0:
            raise ContractError(f"input_size must be divisible by {STRIDE}")
        if self.embed_dim % 4 != 0:
            raise ContractError("embed_dim must be divisible by 4")
        if len(self.encoder_channels) != 3:
            raise ContractError("encoder_channels needs the 3 intermediate widths")

    @property
    def grid_size(self) -> int:
        return self.input_size // STRIDE

    @property
    def mlp_dim(self) -> int:
        return self.decoder_mlp_dim or 2 * self.embed_dim

    @classmethod
    def reference(cls) -> "SegmenterConfig":
        return cls()

    @classmethod
    def toy(cls, input_size: int = 64, embed_dim: int = 16) -> "SegmenterConfig":
        return cls(
            input_size=input_size, embed_dim=embed_dim, encoder_channels=(8, 8, 16)
        )


@dataclass
class ImageEmbedding:
    """Stride-16 image embedding plus the rescale/pad bookkeeping needed to
    map boxes into embedding space and masks back out."""

    features: torch.Tensor  # (C, H_e, W_e)
    original_size: tuple[int, int]
    resized_size: tuple[int, int]  # pre-padding size inside the square input
    input_size: int

    @property
    def scale(self) -> float:
        return self.input_size / max(self.original_size)

    def box_to_input(self, box: BoxPrompt) -> np.ndarray:
        """Box corners in model-input pixel coordinates (float, no rounding)."""
        box.validate(self.original_size)
        s = self.scale
        coords = np.array(box.as_tuple(), dtype=np.float64)
        return (coords + 0.5) * s - 0.5

    def box_to_embedding(self, box: BoxPrompt) -> np.ndarray:
        """Continuous embedding-grid coordinates of a pixel box."""
        return self.box_to_input(box) / STRIDE

    def embedding_to_box(self, coords: np.ndarray) -> BoxPrompt:
        """Inverse of box_to_embedding; quantizes back to pixel coordinates."""
        height, width = self.original_size
        pixels = (np.asarray(coords, dtype=np.float64) * STRIDE + 0.5) / self.scale - 0.5
        x_min, y_min, x_max, y_max = np.rint(pixels).astype(int)
        return BoxPrompt(
            min(max(x_min, 0), width - 1),
            min(max(y_min, 0), height - 1),
            min(max(x_max, 0), width - 1),
            min(max(y_max, 0), height - 1),
        )


class ImageEncoder(nn.Module):
    """Four stride-2 convolutions: RGB to a stride-16 embedding grid."""

    def __init__(self, config: SegmenterConfig) -> None:
        super().__init__()
        c1, c2, c3 = config.encoder_channels
        self.layers = nn.Sequential(
            nn.Conv2d(3, c1, 3, stride=2, padding=1),
            nn.ReLU(),
            nn.Conv2d(c1, c2, 3, stride=2, padding=1),
            nn.ReLU(),
            nn.Conv2d(c2, c3, 3, stride=2, padding=1),
            nn.ReLU(),
            nn.Conv2d(c3, config.embed_dim, 3, stride=2, padding=1),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.layers(x)


def fourier_features(coords: torch.Tensor, matrix: torch.Tensor) -> torch.Tensor:
    """Map normalized coordinates (..., 2) to (..., C) Fourier features."""
    projected = 2.0 * math.pi * coords @ matrix
    return torch.cat([torch.sin(projected), torch.cos(projected)], dim=-1)


class PromptEncoder(nn.Module):
    """Boxes to corner tokens: Fourier position features plus a learned
    embedding distinguishing the top-left and bottom-right corners."""

    def __init__(self, config: SegmenterConfig) -> None:
        super().__init__()
        self.input_size = config.input_size
        generator = torch.Generator().manual_seed(config.pe_seed)
        matrix = torch.randn((2, config.embed_dim // 2), generator=generator)
        self.register_buffer("pe_matrix", matrix)
        self.corner_embed = nn.Embedding(2, config.embed_dim)

    def forward(self, boxes_input: torch.Tensor) -> torch.Tensor:
        """boxes_input: (B, 4) float corner coordinates in input space."""
        corners = boxes_input.reshape(-1, 2, 2) / self.input_size
        tokens = fourier_features(corners.to(self.pe_matrix.dtype), self.pe_matrix)
        return tokens + self.corner_embed.weight.unsqueeze(0)

    def grid_position_encoding(self, grid_size: int) -> torch.Tensor:
        """(grid^2, C) position features of embedding-cell centers."""
        centers = (torch.arange(grid_size, dtype=self.pe_matrix.dtype) + 0.5) / grid_size
        ys, xs = torch.meshgrid(centers, centers, indexing="ij")
        coords = torch.stack([xs, ys], dim=-1).reshape(-1, 2)
        return fourier_features(coords, self.pe_matrix)


class _Attention(nn.Module):
    def __init__(self, dim: int) -> None:
        super().__init__()
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(dim, dim)
        self.v = nn.Linear(dim, dim)
        self.out = nn.Linear(dim, dim)
        self.scale = 1.0 / math.sqrt(dim)

    def forward(
        self, query: torch.Tensor, key: torch.Tensor, value: torch.Tensor
    ) -> torch.Tensor:
        weights = torch.softmax(
            self.q(query) @ self.k(key).transpose(-2, -1) * self.scale, dim=-1
        )
        return self.out(weights @ self.v(value))


class _DecoderLayer(nn.Module):
    def __init__(self, dim: int, mlp_dim: int) -> None:
        super().__init__()
        self.self_attn = _Attention(dim)
        self.tokens_to_image = _Attention(dim)
        self.image_to_tokens = _Attention(dim)
        self.mlp = nn.Sequential(
            nn.Linear(dim, mlp_dim), nn.ReLU(), nn.Linear(mlp_dim, dim)
        )
        self.norm_self = nn.LayerNorm(dim)
        self.norm_t2i = nn.LayerNorm(dim)
        self.norm_i2t = nn.LayerNorm(dim)
        self.norm_mlp = nn.LayerNorm(dim)

    def forward(
        self, tokens: torch.Tensor, image: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor]:
        tokens = self.norm_self(tokens + self.self_attn(tokens, tokens, tokens))
        tokens = self.norm_t2i(tokens + self.tokens_to_image(tokens, image, image))
        image = self.norm_i2t(image + self.image_to_tokens(image, tokens, tokens))
        tokens = self.norm_mlp(tokens + self.mlp(tokens))
        return tokens, image


class MaskDecoder(nn.Module):
    """Two-way transformer over [output token; corner tokens] and the image
    grid, a 4x upscaler, and a dot-product mask head."""

    def __init__(self, config: SegmenterConfig) -> None:
        super().__init__()
        dim = config.embed_dim
        self.output_token = nn.Embedding(1, dim)
        self.layers = nn.ModuleList(
            _DecoderLayer(dim, config.mlp_dim) for _ in range(config.decoder_layers)
        )
        self.upscale = nn.Sequential(
            nn.ConvTranspose2d(dim, dim // 2, 2, stride=2),
            nn.GELU(),
            nn.ConvTranspose2d(dim // 2, dim // 4, 2, stride=2),
            nn.GELU(),
        )
        self.head = nn.Sequential(
            nn.Linear(dim, dim), nn.ReLU(), nn.Linear(dim, dim // 4)
        )

    def forward(
        self, features: torch.Tensor, prompt_tokens: torch.Tensor, image_pe: torch.Tensor
    ) -> torch.Tensor:
        """features (C, H_e, W_e), prompt_tokens (B, 2, C), image_pe (H_e*W_e, C)
        -> logits (B, 4*H_e, 4*W_e)."""
        channels, grid_h, grid_w = features.shape
        batch = prompt_tokens.shape[0]
        image = features.reshape(channels, -1).T + image_pe
        image = image.unsqueeze(0).expand(batch, -1, -1)
        tokens = torch.cat(
            [self.output_token.weight.unsqueeze(0).expand(batch, -1, -1), prompt_tokens],
            dim=1,
        )
        for layer in self.layers:
            tokens, image = layer(tokens, image)
        maps = image.transpose(1, 2).reshape(batch, channels, grid_h, grid_w)
        upscaled = self.upscale(maps)
        weights = self.head(tokens[:, 0])
        return torch.einsum("bc,bchw->bhw", weights, upscaled)


class SegmenterModel(nn.Module):
    """Promptable segmenter with frozen encoders and a trainable decoder."""

    def __init__(self, config: SegmenterConfig) -> None:
        super().__init__()
        self.config = config
        self.image_encoder = ImageEncoder(config)
        self.prompt_encoder = PromptEncoder(config)
        self.mask_decoder = MaskDecoder(config)
        self.frozen = {"image_encoder": True, "prompt_encoder": True, "mask_decoder": False}
        self._apply_frozen()

    def _apply_frozen(self) -> None:
        for name, frozen in self.frozen.items():
            for param in getattr(self, name).parameters():
                param.requires_grad_(not frozen)

    def parameter_blocks(self) -> dict[str, nn.Module]:
        return {
            "image_encoder": self.image_encoder,
            "prompt_encoder": self.prompt_encoder,
            "mask_decoder": self.mask_decoder,
        }

    def _dtype(self) -> torch.dtype:
        return next(self.parameters()).dtype

    def preprocess(self, image: np.ndarray) -> tuple[torch.Tensor, tuple[int, int]]:
        image = np.asarray(image)
        if image.ndim != 3 or image.shape[2] != 3 or min(image.shape[:2]) == 0:
            raise ContractError(f"expected a nonempty H x W x 3 image, got {image.shape}")
        height, width = image.shape[:2]
        size = self.config.input_size
        scale = size / max(height, width)
        resized_h = max(1, min(size, round(height * scale)))
        resized_w = max(1, min(size, round(width * scale)))
        tensor = torch.from_numpy(image.astype(np.float32) / 255.0 - 0.5)
        tensor = tensor.permute(2, 0, 1).unsqueeze(0).to(self._dtype())
        tensor = F.interpolate(
            tensor, size=(resized_h, resized_w), mode="bilinear", align_corners=False
        )
        tensor = F.pad(tensor, (0, size - resized_w, 0, size - resized_h))
        return tensor, (resized_h, resized_w)

    def encode_image(self, image: np.ndarray) -> ImageEmbedding:
        tensor, resized = self.preprocess(image)
        with torch.set_grad_enabled(not self.frozen["image_encoder"]):
            features = self.image_encoder(tensor)[0]
        return ImageEmbedding(
            features=features,
            original_size=tuple(np.asarray(image).shape[:2]),
            resized_size=resized,
            input_size=self.config.input_size,
        )

    def _normalize_boxes(
        self, boxes: list[BoxPrompt] | None, image_size: tuple[int, int]
    ) -> list[BoxPrompt]:
        if not boxes:
            return [BoxPrompt.whole_image(image_size)]
        for box in boxes:
            box.validate(image_size)
        return boxes

    def predict_logits(
        self, embedding: ImageEmbedding, boxes: list[BoxPrompt] | None
    ) -> torch.Tensor:
        """Mask logits at the original resolution, merged over boxes by
        pixelwise maximum."""
        boxes = self._normalize_boxes(boxes, embedding.original_size)
        coords = np.stack([embedding.box_to_input(b) for b in boxes])
        box_tensor = torch.from_numpy(coords).to(self._dtype())
        with torch.set_grad_enabled(not self.frozen["prompt_encoder"]):
            tokens = self.prompt_encoder(box_tensor)
            image_pe = self.prompt_encoder.grid_position_encoding(self.config.grid_size)
        logits = self.mask_decoder(embedding.features, tokens, image_pe)
        size = self.config.input_size
        logits = F.interpolate(
            logits.unsqueeze(1), size=(size, size), mode="bilinear", align_corners=False
        )
        resized_h, resized_w = embedding.resized_size
        logits = logits[:, :, :resized_h, :resized_w]
        logits = F.interpolate(
            logits, size=embedding.original_size, mode="bilinear", align_corners=False
        )
        return logits[:, 0].amax(dim=0)

    @torch.no_grad()
    def predict_mask(
        self, image: np.ndarray, boxes: list[BoxPrompt] | None = None
    ) -> ShadowMask:
        """Probability mask at the image's resolution. An empty box list is
        replaced by the whole-image box; warns when nothing is detected."""
        self.eval()
        embedding = self.encode_image(image)
        probs = torch.sigmoid(self.predict_logits(embedding, boxes))
        values = probs.float().cpu().numpy()
        if not (values >= 0.5).any():
            warnings.warn("segmenter predicted no shadow regions; emitting an "
                          "(effectively) empty mask", stacklevel=2)
        return ShadowMask(np.clip(values, 0.0, 1.0), kind="probability")

    def frozen_state_dicts(self) -> dict[str, dict]:
        return {
            name: {
                key: value.detach().clone()
                for key, value in module.state_dict().items()
            }
            for name, module in self.parameter_blocks().items()
            if self.frozen[name]
        }

    def save(self, path: Path | str) -> None:
        save_checkpoint(
            path,
            blocks={
                name: module.state_dict()
                for name, module in self.parameter_blocks().items()
            },
            frozen=dict(self.frozen),
            meta={"kind": "segmenter", "config": asdict(self.config)},
        )

    @classmethod
    def load(cls, path: Path | str) -> "SegmenterModel":
        checkpoint = load_checkpoint(path)
        if checkpoint.meta.get("kind") != "segmenter":
            raise FormatError(f"{path}: not a segmenter checkpoint")
        config_dict = dict(checkpoint.meta["config"])
        config_dict["encoder_channels"] = tuple(config_dict["encoder_channels"])
        model = cls(SegmenterConfig(**config_dict))
        for name, module in model.parameter_blocks().items():
            module.load_state_dict(checkpoint.blocks[name])
        model.frozen = dict(checkpoint.frozen)
        model._apply_frozen()
        return model


def load_adapted_segmenter(
    weights_path: Path | str, manifest_path: Path | str
) -> SegmenterModel:
    """Build a segmenter from externally produced weights.

    The manifest is JSON with a "geometry" section (construction config) and
    a "mapping" of external tensor names to this model's parameter names.
    Unmapped decoder parameters keep their fresh initialization; anything
    else missing, and any leftover external tensor, is an error.
    """
    manifest = json.loads(Path(manifest_path).read_text(encoding="utf-8"))
    geometry = dict(manifest.get("geometry", {}))
    if "encoder_channels" in geometry:
        geometry["encoder_channels"] = tuple(geometry["encoder_channels"])
    model = SegmenterModel(SegmenterConfig(**geometry))
    external = torch.load(Path(weights_path), map_location="cpu", weights_only=False)
    mapping = manifest["mapping"]
    renamed = {}
    for external_name, internal_name in mapping.items():
        if external_name not in external:
            raise FormatError(f"manifest maps missing tensor {external_name!r}")
        renamed[internal_name] = external[external_name]
    unmapped = set(external) - set(mapping)
    if unmapped:
        raise FormatError(f"external tensors not covered by manifest: {sorted(unmapped)}")
    missing, unexpected = model.load_state_dict(renamed, strict=False)
    if unexpected:
        raise FormatError(f"manifest targets unknown parameters: {sorted(unexpected)}")
    hard_missing = [name for name in missing if not name.startswith("mask_decoder.")]
    if hard_missing:
        raise FormatError(f"frozen blocks not fully covered: {sorted(hard_missing)}")
    return model


def finetune(
    model: SegmenterModel,
    dataset: list[tuple[np.ndarray, ShadowMask]],
    config: RunConfig | None = None,
    rng: np.random.Generator | None = None,
    log_path: Path | str | None = None,
) -> tuple[SegmenterModel, list[dict]]:
    """Fine-tune the mask decoder on (image, binary mask) pairs.

    Encoders stay frozen; prompts are regenerated per epoch from the ground
    truth (minimum-area filter, box cap, random boundary perturbation).
    Returns the model and a per-epoch log of mean cross-entropy.
    """
    if not dataset:
        raise ContractError("finetune needs a nonempty dataset")
    config = config or RunConfig()
    rng = rng or np.random.default_rng(config.seed)
    for _, gt in dataset:
        if gt.kind != "binary":
            raise ContractError("finetune needs binary ground-truth masks")

    model.frozen.update({"image_encoder": True, "prompt_encoder": True})
    model._apply_frozen()
    model.train()

    # Frozen encoders make per-sample embeddings and base boxes reusable.
    samples = []
    for image, gt in dataset:
        embedding = model.encode_image(image)
        base_boxes = extract_boxes(gt, config.min_region_area, config.max_boxes)
        target = torch.from_numpy(gt.values.astype(np.float32)).to(model._dtype())
        samples.append((embedding, base_boxes, target, gt.shape))

    optimizer = torch.optim.Adam(
        model.mask_decoder.parameters(), lr=config.lr_finetune
    )
    log: list[dict] = []
    for epoch in range(1, config.finetune_epochs + 1):
        losses = []
        for embedding, base_boxes, target, shape in samples:
            boxes = perturb_boxes(base_boxes, shape, config.max_box_shift, rng)
            logits = model.predict_logits(embedding, boxes)
            loss = F.binary_cross_entropy_with_logits(logits, target)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            losses.append(float(loss.detach()))
        log.append({"epoch": epoch, "mean_ce": float(np.mean(losses))})

    if log_path is not None:
        path = Path(log_path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(json.dumps(entry) for entry in log) + "\n")
    return model, log
