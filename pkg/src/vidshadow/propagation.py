"""Inference orchestration: seed a video from the segmenter's mask, then
propagate it frame by frame through the attention network's memory.

Two modes mirror the evaluation protocol: forward-only propagation from the
first frame, and bidirectional propagation that also seeds the last frame,
measures per-frame agreement (IoU of the binarized forward and backward
masks), and re-predicts low-agreement frames with the segmenter using boxes
extracted from the union of the two masks.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .data_io import RunConfig, ShadowMask, VideoSequence
from .errors import ContractError
from .lstn import LstnModel, MemoryBank, mask_from_logits
from .metrics import mask_iou
from .prompt_gen import BoxPrompt, extract_boxes
from .segmenter import SegmenterModel


@dataclass
class AgreementRecord:
    frame: int
    iou: float
    gated: bool
    action: str

    def as_record(self) -> dict:
        return {
            "frame": self.frame,
            "iou": self.iou,
            "gated": self.gated,
            "action": self.action,
        }


class PropagationSession:
    """Sequential propagation over one video in one direction.

    The seed frame's mask is stored verbatim (bit-identical passthrough);
    every later frame is predicted from the memory bank, whose short-term
    entry then moves to that frame.
    """

    def __init__(
        self,
        model: LstnModel,
        video: VideoSequence,
        seed_mask: ShadowMask,
        direction: str = "forward",
        config: RunConfig | None = None,
    ) -> None:
        if direction not in ("forward", "backward"):
            raise ContractError(f"unknown direction {direction!r}")
        if seed_mask.shape != video.frame_shape:
            raise ContractError(
                f"seed mask {seed_mask.shape} does not match frames {video.frame_shape}"
            )
        self.model = model
        self.video = video
        self.direction = direction
        self.config = config or RunConfig()
        self.order = list(range(len(video)))
        if direction == "backward":
            self.order.reverse()
        self.masks: dict[int, ShadowMask] = {}
        self.status: dict[int, str] = {}
        self.banks: list[MemoryBank] = model.new_banks()
        self._cursor = 1  # position in self.order; 0 is the seed

        seed_index = self.order[0]
        self.masks[seed_index] = seed_mask
        self.status[seed_index] = "seeded"
        with torch.no_grad():
            feature = model.encode_frame(video.frames[seed_index])
            _, f_tildes = model.forward_frame(
                feature, None, self._window(), use_long=False, use_short=False
            )
            seed_values = torch.from_numpy(seed_mask.values.astype(np.float32))
            entries = model.memory_entries(feature, f_tildes, seed_values, seed_index)
        # The seed frame serves both memory roles until the next frame lands.
        for bank, entry in zip(self.banks, entries):
            bank.write_long(entry)
            bank.write_short(entry)

    def _window(self) -> int:
        return self.config.short_window_w

    @property
    def exhausted(self) -> bool:
        return self._cursor >= len(self.order)

    @property
    def current_frame(self) -> int:
        """The frame the next step() will predict."""
        if self.exhausted:
            raise ContractError("session exhausted")
        return self.order[self._cursor]

    def step(self) -> tuple[int, ShadowMask]:
        """Predict the next frame and update short-term memory with it."""
        if self.exhausted:
            raise ContractError("session exhausted")
        frame_index = self.order[self._cursor]
        with torch.no_grad():
            feature = self.model.encode_frame(self.video.frames[frame_index])
            logits, f_tildes = self.model.forward_frame(
                feature,
                self.banks,
                self._window(),
                use_long=self.config.use_long,
                use_short=self.config.use_short,
            )
            mask = mask_from_logits(logits)
            entries = self.model.memory_entries(
                feature, f_tildes, torch.sigmoid(logits), frame_index
            )
        for bank, entry in zip(self.banks, entries):
            bank.write_short(entry)
        self.masks[frame_index] = mask
        self.status[frame_index] = "propagated"
        self._cursor += 1
        return frame_index, mask

    def run(self) -> list[ShadowMask]:
        """Run to exhaustion; masks returned in video frame order."""
        while not self.exhausted:
            self.step()
        return [self.masks[i] for i in range(len(self.video))]


def _seed_mask(
    segmenter: SegmenterModel,
    video: VideoSequence,
    frame_index: int,
    boxes: list[BoxPrompt] | None,
) -> ShadowMask:
    return segmenter.predict_mask(video.frames[frame_index], boxes)


def run_forward(
    video: VideoSequence,
    segmenter: SegmenterModel,
    lstn: LstnModel,
    boxes: list[BoxPrompt] | None = None,
    config: RunConfig | None = None,
) -> list[ShadowMask]:
    """Forward-only propagation; frame 1 is the segmenter's mask verbatim."""
    config = config or RunConfig()
    seed = _seed_mask(segmenter, video, 0, boxes)
    if len(video) == 1:
        return [seed]
    session = PropagationSession(lstn, video, seed, "forward", config)
    return session.run()


def gate_agreement(
    forward_masks: list[ShadowMask],
    backward_masks: list[ShadowMask],
    threshold: float = 0.5,
    gate: float = 0.75,
) -> list[AgreementRecord]:
    """Per-frame forward/backward agreement; a frame is gated for
    re-prediction when IoU is strictly below the gate."""
    if len(forward_masks) != len(backward_masks):
        raise ContractError("forward/backward mask counts differ")
    records = []
    for index, (fwd, bwd) in enumerate(zip(forward_masks, backward_masks)):
        fwd_bin = fwd.binarize(threshold) if fwd.kind == "probability" else fwd
        bwd_bin = bwd.binarize(threshold) if bwd.kind == "probability" else bwd
        iou_val = mask_iou(fwd_bin, bwd_bin)
        gated = iou_val < gate
        records.append(
            AgreementRecord(frame=index, iou=float(iou_val), gated=gated, action="")
        )
    return records


def run_plus(
    video: VideoSequence,
    segmenter: SegmenterModel,
    lstn: LstnModel,
    boxes_first: list[BoxPrompt] | None = None,
    boxes_last: list[BoxPrompt] | None = None,
    config: RunConfig | None = None,
) -> tuple[list[ShadowMask], list[AgreementRecord]]:
    """Bidirectional propagation with agreement gating.

    Frames whose forward/backward IoU falls below the gate are re-predicted
    by the segmenter, prompted with boxes extracted from the union of the
    two binarized masks. Non-gated frames keep the forward mask (or the
    probability average when configured).
    """
    config = config or RunConfig()
    forward_masks = run_forward(video, segmenter, lstn, boxes_first, config)

    seed_last = _seed_mask(segmenter, video, len(video) - 1, boxes_last)
    if len(video) == 1:
        backward_masks = [seed_last]
    else:
        session = PropagationSession(lstn, video, seed_last, "backward", config)
        backward_masks = session.run()

    records = gate_agreement(
        forward_masks, backward_masks, config.binarize_threshold, config.plus_iou_gate
    )
    final: list[ShadowMask] = []
    for record, fwd, bwd in zip(records, forward_masks, backward_masks):
        if record.gated:
            union = (
                fwd.binarize(config.binarize_threshold).values.astype(bool)
                | bwd.binarize(config.binarize_threshold).values.astype(bool)
            )
            boxes = extract_boxes(
                union.astype(np.uint8), config.min_region_area, config.max_boxes
            )
            final.append(segmenter.predict_mask(video.frames[record.frame], boxes))
            record.action = "repredicted"
        elif config.plus_average:
            final.append(
                ShadowMask((fwd.values + bwd.values) / 2.0, kind="probability")
            )
            record.action = "averaged"
        else:
            final.append(fwd)
            record.action = "keep_forward"
    return final, records


def write_agreement_report(
    records: list[AgreementRecord], path: Path | str
) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(
        "".join(json.dumps(r.as_record()) + "\n" for r in records), encoding="utf-8"
    )
