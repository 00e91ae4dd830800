#!/usr/bin/env python3
"""End-to-end desk-scale demo: synthesize a dataset, fine-tune the
segmenter, train the propagation network, run forward and bidirectional
inference, and print the evaluation table.

    python3 scripts/run_toy_pipeline.py --out /tmp/vidshadow-demo
"""

import argparse
import sys
from pathlib import Path

import numpy as np
import torch

from vidshadow.data_io import RunConfig, load_video_sequence, save_prediction
from vidshadow.lstn import LstnConfig, LstnModel, train_lstn
from vidshadow.metrics import evaluate
from vidshadow.prompt_gen import extract_boxes
from vidshadow.propagation import run_forward, run_plus, write_agreement_report
from vidshadow.segmenter import SegmenterConfig, SegmenterModel, finetune
from vidshadow.synthetic import make_toy_dataset


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", required=True, help="working directory")
    parser.add_argument("--videos", type=int, default=2)
    parser.add_argument("--frames", type=int, default=5)
    parser.add_argument("--finetune-epochs", type=int, default=150)
    parser.add_argument("--train-steps", type=int, default=150)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    out = Path(args.out)
    torch.manual_seed(args.seed)
    rng = np.random.default_rng(args.seed)

    data_root = out / "data"
    ids = make_toy_dataset(
        data_root, num_videos=args.videos, num_frames=args.frames, seed=args.seed
    )
    print(f"dataset: {len(ids)} videos under {data_root}")

    config = RunConfig().replace(
        crop_size=64,
        crop_scale_min=1.0,
        batch_size=2,
        short_window_w=5,
        steps=args.train_steps,
        finetune_epochs=args.finetune_epochs,
        lr_finetune=2e-3,
        lr_pretrained=1e-3,
        lr_scratch=2e-3,
        weight_decay=0.0,
        seed=args.seed,
    )

    videos = [load_video_sequence(data_root, vid) for vid in ids]
    samples = [(v.frames[i], v.gt_masks[i]) for v in videos for i in (0, len(v) - 1)]
    segmenter = SegmenterModel(SegmenterConfig.toy())
    print(f"fine-tuning segmenter on {len(samples)} frames ...")
    finetune(segmenter, samples, config, rng=rng, log_path=out / "finetune_log.jsonl")
    segmenter.save(out / "segmenter.pt")

    lstn = LstnModel(LstnConfig.toy(short_window=config.short_window_w))
    print(f"training propagation network for {config.steps} steps ...")
    train_lstn(lstn, videos, config, rng=rng, log_path=out / "train_log.jsonl")
    lstn.save(out / "lstn.pt")

    for video in videos:
        boxes = extract_boxes(video.gt_masks[0])
        masks = run_forward(video, segmenter, lstn, boxes, config)
        for name, mask in zip(video.frame_names, masks):
            save_prediction(out / "preds_forward", video.id, name, mask)
        plus_masks, records = run_plus(
            video, segmenter, lstn,
            boxes, extract_boxes(video.gt_masks[-1]), config,
        )
        for name, mask in zip(video.frame_names, plus_masks):
            save_prediction(out / "preds_plus", video.id, name, mask)
        write_agreement_report(records, out / "preds_plus" / video.id / "agreement.jsonl")
        gated = sum(r.gated for r in records)
        print(f"{video.id}: {len(masks)} frames propagated, {gated} re-predicted")

    for label, pred_root in (("forward", "preds_forward"), ("plus", "preds_plus")):
        report = evaluate(out / pred_root, data_root / "annotations")
        print(f"\n== {label} ==")
        print(report.to_table(), end="")
    return 0


if __name__ == "__main__":
    sys.exit(main())
