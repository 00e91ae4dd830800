"""Box prompt generation from binary shadow masks.

Training prompts are derived from ground truth: every 8-connected region
with at least ``min_area`` pixels contributes its minimal bounding box, and
masks with more than ``max_boxes`` qualifying regions fall back to a single
whole-image box. Boundaries are then randomly perturbed to simulate loose
user-drawn boxes.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .data_io import ShadowMask
from .errors import ContractError, FormatError

EIGHT_CONNECTED = np.ones((3, 3), dtype=np.uint8)


@dataclass(frozen=True)
class BoxPrompt:
    """Axis-aligned box in pixel coordinates, corners inclusive."""

    x_min: int
    y_min: int
    x_max: int
    y_max: int

    def validate(self, image_size: tuple[int, int]) -> None:
        height, width = image_size
        if not (0 <= self.x_min <= self.x_max < width):
            raise ContractError(f"{self} x-range invalid for width {width}")
        if not (0 <= self.y_min <= self.y_max < height):
            raise ContractError(f"{self} y-range invalid for height {height}")

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)

    @staticmethod
    def whole_image(image_size: tuple[int, int]) -> "BoxPrompt":
        height, width = image_size
        return BoxPrompt(0, 0, width - 1, height - 1)


@dataclass
class Region:
    """One 8-connected foreground region: pixels as (y, x) rows."""

    pixels: np.ndarray
    area: int
    bbox: BoxPrompt

    def __post_init__(self) -> None:
        if self.area != len(self.pixels):
            raise ContractError("region area must equal its pixel count")


def _binary_values(mask: ShadowMask | np.ndarray) -> np.ndarray:
    if isinstance(mask, ShadowMask):
        if mask.kind != "binary":
            raise ContractError("expected a binary mask")
        return mask.values
    values = np.asarray(mask)
    if values.ndim != 2:
        raise ContractError(f"mask must be 2-D, got shape {values.shape}")
    if values.dtype == bool:
        return values.astype(np.uint8)
    if not np.isin(values, (0, 1)).all():
        raise ContractError("expected a binary mask")
    return values.astype(np.uint8)


def connected_components(mask: ShadowMask | np.ndarray) -> list[Region]:
    """All maximal 8-connected foreground regions, ordered by their first
    pixel in row-major scan order."""
    values = _binary_values(mask)
    labels, count = ndimage.label(values, structure=EIGHT_CONNECTED)
    regions = []
    for index, slices in enumerate(ndimage.find_objects(labels), start=1):
        if slices is None:
            continue
        ys, xs = np.nonzero(labels[slices] == index)
        ys = ys + slices[0].start
        xs = xs + slices[1].start
        pixels = np.stack([ys, xs], axis=1)
        bbox = BoxPrompt(
            int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max())
        )
        regions.append(Region(pixels=pixels, area=len(pixels), bbox=bbox))
    width = values.shape[1]
    regions.sort(key=lambda r: int(r.pixels[0, 0]) * width + int(r.pixels[0, 1]))
    return regions


def extract_boxes(
    mask: ShadowMask | np.ndarray, min_area: int = 50, max_boxes: int = 8
) -> list[BoxPrompt]:
    """Minimal bounding boxes of regions with area >= min_area.

    More than max_boxes qualifying regions collapse to one whole-image box.
    An empty mask yields an empty list.
    """
    values = _binary_values(mask)
    boxes = [r.bbox for r in connected_components(values) if r.area >= min_area]
    if len(boxes) > max_boxes:
        return [BoxPrompt.whole_image(values.shape)]
    return boxes


def perturb_boxes(
    boxes: list[BoxPrompt],
    image_size: tuple[int, int],
    max_shift: int = 20,
    rng: np.random.Generator | None = None,
) -> list[BoxPrompt]:
    """Shift each boundary by an independent uniform integer offset in
    [-max_shift, +max_shift], clamped to the image.

    A boundary pair that would invert (min > max) is reset to its
    unperturbed values, so outputs always satisfy box invariants.
    """
    if rng is None:
        rng = np.random.default_rng()
    height, width = image_size
    out = []
    for box in boxes:
        box.validate(image_size)
        dx_min, dy_min, dx_max, dy_max = (
            int(d) for d in rng.integers(-max_shift, max_shift + 1, size=4)
        )
        x_min = min(max(box.x_min + dx_min, 0), width - 1)
        x_max = min(max(box.x_max + dx_max, 0), width - 1)
        y_min = min(max(box.y_min + dy_min, 0), height - 1)
        y_max = min(max(box.y_max + dy_max, 0), height - 1)
        if x_min > x_max:
            x_min, x_max = box.x_min, box.x_max
        if y_min > y_max:
            y_min, y_max = box.y_min, box.y_max
        out.append(BoxPrompt(x_min, y_min, x_max, y_max))
    return out


def save_boxes(boxes: list[BoxPrompt], path: Path | str) -> None:
    """Write boxes one per line as `x_min y_min x_max y_max`."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [" ".join(str(v) for v in box.as_tuple()) for box in boxes]
    path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def load_boxes(path: Path | str) -> list[BoxPrompt]:
    """Parse a box prompt file (0-indexed inclusive integer coordinates)."""
    boxes = []
    for lineno, line in enumerate(
        Path(path).read_text(encoding="utf-8").splitlines(), 1
    ):
        line = line.strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 4:
            raise FormatError(f"{path}:{lineno}: expected 4 integers, got {line!r}")
        try:
            x_min, y_min, x_max, y_max = (int(p) for p in parts)
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: non-integer coordinate") from exc
        if x_min > x_max or y_min > y_max:
            raise FormatError(f"{path}:{lineno}: inverted box {line!r}")
        boxes.append(BoxPrompt(x_min, y_min, x_max, y_max))
    return boxes
