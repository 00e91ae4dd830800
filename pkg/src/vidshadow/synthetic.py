"""Synthetic moving-blob videos for desk-scale training and tests.

A "shadow" is a dark rectangle sliding over a fixed textured background;
the ground truth is the rectangle's support. Small, high-contrast, and
learnable by tiny models within a few hundred steps.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .data_io import ShadowMask, VideoSequence, save_image, save_mask


def _textured_background(size: tuple[int, int], rng: np.random.Generator) -> np.ndarray:
    height, width = size
    base = rng.integers(140, 200, size=(height // 8 + 1, width // 8 + 1, 3))
    # Nearest-neighbor upsample for a blocky texture the encoder can latch onto.
    texture = np.repeat(np.repeat(base, 8, axis=0), 8, axis=1)[:height, :width]
    return texture.astype(np.uint8)


def blob_frame(
    background: np.ndarray, top: int, left: int, blob: int, darken: float = 0.35
) -> tuple[np.ndarray, ShadowMask]:
    """Render one frame with a dark blob at (top, left)."""
    height, width = background.shape[:2]
    frame = background.copy()
    y0, y1 = max(0, top), min(height, top + blob)
    x0, x1 = max(0, left), min(width, left + blob)
    frame[y0:y1, x0:x1] = (frame[y0:y1, x0:x1] * darken).astype(np.uint8)
    mask = np.zeros((height, width), dtype=np.uint8)
    mask[y0:y1, x0:x1] = 1
    return frame, ShadowMask(mask, kind="binary")


def blob_image(
    size: int = 64, blob: int = 32, seed: int = 0
) -> tuple[np.ndarray, ShadowMask]:
    """One centered-blob image with its mask (segmenter fine-tune sample)."""
    rng = np.random.default_rng(seed)
    background = _textured_background((size, size), rng)
    offset = (size - blob) // 2
    return blob_frame(background, offset, offset, blob)


def moving_blob_video(
    video_id: str = "toy",
    num_frames: int = 5,
    size: int = 64,
    blob: int = 32,
    step: tuple[int, int] = (2, 3),
    seed: int = 0,
) -> VideoSequence:
    """A video whose blob translates by ``step`` pixels per frame."""
    rng = np.random.default_rng(seed)
    background = _textured_background((size, size), rng)
    start_top = (size - blob) // 2 - step[0] * (num_frames // 2)
    start_left = (size - blob) // 2 - step[1] * (num_frames // 2)
    frames, masks = [], []
    for t in range(num_frames):
        frame, mask = blob_frame(
            background, start_top + step[0] * t, start_left + step[1] * t, blob
        )
        frames.append(frame)
        masks.append(mask)
    return VideoSequence(id=video_id, frames=frames, gt_masks=masks)


def static_video(video: VideoSequence, num_frames: int) -> VideoSequence:
    """Repeat a video's first frame (and mask) num_frames times."""
    masks = None
    if video.gt_masks is not None:
        masks = [video.gt_masks[0]] * num_frames
    return VideoSequence(
        id=f"{video.id}-static", frames=[video.frames[0]] * num_frames, gt_masks=masks
    )


def write_video_tree(root: Path | str, video: VideoSequence) -> None:
    """Write a video (and gt masks) in the standard dataset layout."""
    root = Path(root)
    for name, frame in zip(video.frame_names, video.frames):
        save_image(frame, root / "videos" / video.id / f"{name}.png")
    if video.gt_masks is not None:
        for name, mask in zip(video.frame_names, video.gt_masks):
            save_mask(mask, root / "annotations" / video.id / f"{name}.png")


def make_toy_dataset(
    root: Path | str,
    num_videos: int = 2,
    num_frames: int = 5,
    size: int = 64,
    blob: int = 32,
    seed: int = 0,
) -> list[str]:
    """Write a small multi-video dataset; returns the video ids."""
    ids = []
    for v in range(num_videos):
        video = moving_blob_video(
            video_id=f"v{v:02d}",
            num_frames=num_frames,
            size=size,
            blob=blob,
            step=((v % 3) - 1, ((v + 1) % 3) - 1) if v else (2, 3),
            seed=seed + v,
        )
        write_video_tree(root, video)
        ids.append(video.id)
    return ids
