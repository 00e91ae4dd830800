"""Shadow detection evaluation: MAE, F-beta, IoU, and the BER family.

BER is reported in percent and decomposes as BER = (SBER + NBER) / 2, where
SBER/NBER are the error rates inside the shadow / non-shadow regions.
Aggregation is an unweighted mean over frames by default; a per-video mode
averages video means instead.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data_io import ShadowMask, load_mask
from .errors import ContractError, NotFoundError

METRIC_COLUMNS = ("mae", "f_beta", "iou", "ber", "sber", "nber")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def n_pos(self) -> int:
        return self.tp + self.fn

    @property
    def n_neg(self) -> int:
        return self.tn + self.fp

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def _binary_values(mask: ShadowMask | np.ndarray) -> np.ndarray:
    if isinstance(mask, ShadowMask):
        if mask.kind != "binary":
            raise ContractError("expected a binary mask")
        return mask.values
    values = np.asarray(mask)
    if values.dtype == bool:
        return values.astype(np.uint8)
    if not np.isin(values, (0, 1)).all():
        raise ContractError("expected a binary mask")
    return values.astype(np.uint8)


def confusion(
    pred: ShadowMask | np.ndarray, gt: ShadowMask | np.ndarray
) -> ConfusionCounts:
    """Pixel confusion counts between two binary masks of equal shape."""
    p = _binary_values(pred).astype(bool)
    g = _binary_values(gt).astype(bool)
    if p.shape != g.shape:
        raise ContractError(f"shape mismatch: pred {p.shape} vs gt {g.shape}")
    return ConfusionCounts(
        tp=int(np.count_nonzero(p & g)),
        fp=int(np.count_nonzero(p & ~g)),
        tn=int(np.count_nonzero(~p & ~g)),
        fn=int(np.count_nonzero(~p & g)),
    )


def mae(pred: ShadowMask | np.ndarray, gt: ShadowMask | np.ndarray) -> float:
    """Mean absolute error between a (probability) prediction and binary gt."""
    p = pred.values if isinstance(pred, ShadowMask) else np.asarray(pred)
    g = _binary_values(gt)
    if p.shape != g.shape:
        raise ContractError(f"shape mismatch: pred {p.shape} vs gt {g.shape}")
    return float(np.mean(np.abs(p.astype(np.float64) - g.astype(np.float64))))


def f_beta(counts: ConfusionCounts, beta_sq: float = 0.3) -> float:
    """Weighted F-measure; 0 when precision or recall is undefined or zero."""
    if counts.tp == 0:
        return 0.0
    precision = counts.tp / (counts.tp + counts.fp)
    recall = counts.tp / (counts.tp + counts.fn)
    return (1.0 + beta_sq) * precision * recall / (beta_sq * precision + recall)


def iou(counts: ConfusionCounts) -> float:
    """Intersection over union; 1 when both masks are empty."""
    denom = counts.tp + counts.fp + counts.fn
    if denom == 0:
        return 1.0
    return counts.tp / denom


def ber_family(
    counts: ConfusionCounts,
) -> tuple[float | None, float | None, float | None]:
    """(ber, sber, nber) in percent; None marks components undefined because
    the frame has no positive (or no negative) ground-truth pixels."""
    sber = 100.0 * (1.0 - counts.tp / counts.n_pos) if counts.n_pos > 0 else None
    nber = 100.0 * (1.0 - counts.tn / counts.n_neg) if counts.n_neg > 0 else None
    ber = (sber + nber) / 2.0 if sber is not None and nber is not None else None
    return ber, sber, nber


def mask_iou(
    a: ShadowMask | np.ndarray, b: ShadowMask | np.ndarray
) -> float:
    """IoU between two binary masks (1.0 when both are empty)."""
    return iou(confusion(a, b))


@dataclass
class FrameMetrics:
    video: str
    frame: str
    mae: float
    f_beta: float
    iou: float
    ber: float | None
    sber: float | None
    nber: float | None

    def as_record(self) -> dict:
        return {
            "video": self.video,
            "frame": self.frame,
            **{name: getattr(self, name) for name in METRIC_COLUMNS},
        }


def frame_metrics(
    video: str,
    frame: str,
    pred: ShadowMask,
    gt: ShadowMask,
    threshold: float = 0.5,
    beta_sq: float = 0.3,
    mae_on_binary: bool = False,
) -> FrameMetrics:
    """Metrics for one frame; MAE uses raw probabilities unless told otherwise."""
    pred_bin = pred.binarize(threshold) if pred.kind == "probability" else pred
    counts = confusion(pred_bin, gt)
    ber, sber, nber = ber_family(counts)
    mae_pred = pred_bin if mae_on_binary else pred
    return FrameMetrics(
        video=video,
        frame=frame,
        mae=mae(mae_pred, gt),
        f_beta=f_beta(counts, beta_sq),
        iou=iou(counts),
        ber=ber,
        sber=sber,
        nber=nber,
    )


def _mean_metrics(frames: list[FrameMetrics]) -> dict:
    """Mean of each metric over frames, skipping undefined BER components.

    The aggregate ber is reconstructed as (sber + nber) / 2 so the
    decomposition identity holds at every level by construction.
    """
    out: dict = {}
    for name in ("mae", "f_beta", "iou", "sber", "nber"):
        values = [getattr(f, name) for f in frames if getattr(f, name) is not None]
        out[name] = float(np.mean(values)) if values else None
    if out["sber"] is not None and out["nber"] is not None:
        out["ber"] = (out["sber"] + out["nber"]) / 2.0
    else:
        out["ber"] = None
    return {name: out[name] for name in METRIC_COLUMNS}


@dataclass
class MetricsReport:
    """Per-frame records plus per-video and dataset aggregates."""

    frames: list[FrameMetrics]
    header: dict
    errors: list[dict] = field(default_factory=list)

    @property
    def per_video(self) -> dict[str, dict]:
        videos: dict[str, list[FrameMetrics]] = {}
        for fm in self.frames:
            videos.setdefault(fm.video, []).append(fm)
        return {vid: _mean_metrics(fms) for vid, fms in sorted(videos.items())}

    @property
    def dataset(self) -> dict:
        if self.header.get("aggregation") == "per_video":
            per_video = self.per_video
            out: dict = {}
            for name in METRIC_COLUMNS:
                values = [m[name] for m in per_video.values() if m[name] is not None]
                out[name] = float(np.mean(values)) if values else None
            if out["sber"] is not None and out["nber"] is not None:
                out["ber"] = (out["sber"] + out["nber"]) / 2.0
            return out
        return _mean_metrics(self.frames)

    def to_table(self) -> str:
        """Human-readable table in MAE / F-beta / IoU / BER / SBER / NBER order."""
        header_line = " ".join(f"{k}={v}" for k, v in sorted(self.header.items()))
        titles = ("MAE", "Fbeta", "IoU", "BER", "SBER", "NBER")
        lines = [f"# {header_line}"]
        lines.append(f"{'scope':<24} " + " ".join(f"{t:>8}" for t in titles))

        def fmt(values: dict) -> str:
            cells = []
            for name in METRIC_COLUMNS:
                value = values[name]
                cells.append(f"{value:>8.4f}" if value is not None else f"{'n/a':>8}")
            return " ".join(cells)

        for vid, values in self.per_video.items():
            lines.append(f"{vid:<24} " + fmt(values))
        lines.append(f"{'dataset':<24} " + fmt(self.dataset))
        return "\n".join(lines) + "\n"

    def to_records(self) -> list[dict]:
        records = [
            {"scope": "frame", **fm.as_record()} for fm in self.frames
        ]
        for vid, values in self.per_video.items():
            records.append({"scope": "video", "video": vid, **values})
        records.append({"scope": "dataset", **self.dataset})
        records.extend({"scope": "error", **err} for err in self.errors)
        return records

    def to_jsonl(self) -> str:
        return "\n".join(json.dumps(r) for r in self.to_records()) + "\n"


def evaluate(
    pred_root: Path | str,
    gt_root: Path | str,
    threshold: float = 0.5,
    beta_sq: float = 0.3,
    aggregation: str = "frame",
    mae_on_binary: bool = False,
) -> MetricsReport:
    """Evaluate a prediction tree against a ground-truth tree.

    Both trees hold <video>/<frame>.png masks; predictions are loaded as
    probability maps and binarized at ``threshold``. Missing predictions are
    reported as error entries and excluded from aggregation.
    """
    pred_root = Path(pred_root)
    gt_root = Path(gt_root)
    if not gt_root.is_dir():
        raise NotFoundError(f"ground-truth root not found: {gt_root}")
    if aggregation not in ("frame", "per_video"):
        raise ContractError(f"unknown aggregation mode {aggregation!r}")

    frames: list[FrameMetrics] = []
    errors: list[dict] = []
    for video_dir in sorted(p for p in gt_root.iterdir() if p.is_dir()):
        for gt_file in sorted(video_dir.glob("*.png")):
            pred_file = pred_root / video_dir.name / gt_file.name
            if not pred_file.exists():
                warnings.warn(f"missing prediction: {pred_file}", stacklevel=2)
                errors.append(
                    {"video": video_dir.name, "frame": gt_file.stem,
                     "error": "missing prediction"}
                )
                continue
            gt = load_mask(gt_file, kind="binary")
            pred = load_mask(pred_file, kind="probability")
            frames.append(
                frame_metrics(
                    video_dir.name, gt_file.stem, pred, gt,
                    threshold=threshold, beta_sq=beta_sq,
                    mae_on_binary=mae_on_binary,
                )
            )
    header = {
        "threshold": threshold,
        "beta_sq": beta_sq,
        "aggregation": aggregation,
        "mae_on_binary": mae_on_binary,
    }
    return MetricsReport(frames=frames, header=header, errors=errors)
