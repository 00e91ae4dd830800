"""Command-line entry points for every pipeline stage.

    vidshadow finetune    --data ROOT --out DIR [--preset toy]
    vidshadow train-lstn  --data ROOT --out DIR [--preset toy]
    vidshadow infer       --data ROOT --video ID --segmenter CKPT --lstn CKPT --out DIR
    vidshadow infer-plus  --data ROOT --video ID ... --boxes-first F --boxes-last L
    vidshadow eval        --pred DIR --gt DIR [--out DIR]
    vidshadow ablate      {blocks|window|components} --data ROOT --out DIR
    vidshadow serve       --data ROOT --segmenter CKPT --lstn CKPT --state DIR

Every command honors --config (key=value file) plus repeatable --set
overrides, writes its artifacts under --out, and exits nonzero on failure
(2 for usage errors, 1 for runtime errors).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np
import torch

from .data_io import (
    RunConfig,
    ShadowMask,
    load_config,
    load_video_sequence,
    list_videos,
    save_prediction,
)
from .errors import ConfigError, VidshadowError
from .lstn import LstnConfig, LstnModel, train_lstn
from .metrics import evaluate
from .prompt_gen import load_boxes
from .propagation import (
    PropagationSession,
    run_forward,
    run_plus,
    write_agreement_report,
)
from .segmenter import SegmenterConfig, SegmenterModel, finetune
from .synthetic import make_toy_dataset


def _resolve_config(args: argparse.Namespace) -> RunConfig:
    config = load_config(args.config) if args.config else RunConfig()
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        base = RunConfig()
        if not hasattr(base, key):
            raise ConfigError(f"unknown config key {key!r}")
        current = getattr(base, key)
        if isinstance(current, bool):
            overrides[key] = raw.lower() in ("true", "1", "yes")
        else:
            overrides[key] = type(current)(raw)
    return config.replace(**overrides) if overrides else config


def _segmenter_config(preset: str) -> SegmenterConfig:
    return SegmenterConfig.toy() if preset == "toy" else SegmenterConfig.reference()


def _lstn_config(preset: str, config: RunConfig) -> LstnConfig:
    if preset == "toy":
        return LstnConfig.toy(
            num_blocks=config.lst_blocks, short_window=config.short_window_w
        )
    return LstnConfig(
        num_blocks=config.lst_blocks, short_window=config.short_window_w
    )


def _load_training_samples(root: Path, max_samples: int | None):
    samples = []
    for video_id in list_videos(root):
        video = load_video_sequence(root, video_id)
        if video.gt_masks is None:
            continue
        for frame, mask in zip(video.frames, video.gt_masks):
            samples.append((frame, mask))
            if max_samples and len(samples) >= max_samples:
                return samples
    return samples


def cmd_finetune(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    torch.manual_seed(config.seed)
    out = Path(args.out)
    samples = _load_training_samples(Path(args.data), args.max_samples)
    if not samples:
        raise VidshadowError(f"no annotated frames under {args.data}")
    model = SegmenterModel(_segmenter_config(args.preset))
    finetune(
        model, samples, config,
        rng=np.random.default_rng(config.seed),
        log_path=out / "finetune_log.jsonl",
    )
    model.save(out / "segmenter.pt")
    print(f"saved {out / 'segmenter.pt'} ({len(samples)} samples)")
    return 0


def cmd_train_lstn(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    torch.manual_seed(config.seed)
    out = Path(args.out)
    root = Path(args.data)
    videos = [load_video_sequence(root, vid) for vid in list_videos(root)]
    videos = [v for v in videos if v.gt_masks is not None]
    if not videos:
        raise VidshadowError(f"no annotated videos under {args.data}")
    model = LstnModel(_lstn_config(args.preset, config))
    train_lstn(
        model, videos, config,
        rng=np.random.default_rng(config.seed),
        log_path=out / "train_log.jsonl",
    )
    model.save(out / "lstn.pt")
    print(f"saved {out / 'lstn.pt'} ({len(videos)} videos)")
    return 0


def _load_models(args: argparse.Namespace) -> tuple[SegmenterModel, LstnModel]:
    return SegmenterModel.load(args.segmenter), LstnModel.load(args.lstn)


def _write_masks(out: Path, video, masks) -> None:
    for name, mask in zip(video.frame_names, masks):
        save_prediction(out, video.id, name, mask)


def cmd_infer(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    segmenter, lstn = _load_models(args)
    video = load_video_sequence(Path(args.data), args.video)
    boxes = load_boxes(args.boxes) if args.boxes else None
    masks = run_forward(video, segmenter, lstn, boxes, config)
    _write_masks(Path(args.out), video, masks)
    print(f"wrote {len(masks)} masks to {Path(args.out) / video.id}")
    return 0


def cmd_infer_plus(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    segmenter, lstn = _load_models(args)
    video = load_video_sequence(Path(args.data), args.video)
    boxes_first = load_boxes(args.boxes_first) if args.boxes_first else None
    boxes_last = load_boxes(args.boxes_last) if args.boxes_last else None
    masks, records = run_plus(video, segmenter, lstn, boxes_first, boxes_last, config)
    out = Path(args.out)
    _write_masks(out, video, masks)
    write_agreement_report(records, out / video.id / "agreement.jsonl")
    gated = sum(r.gated for r in records)
    print(f"wrote {len(masks)} masks to {out / video.id} ({gated} re-predicted)")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    report = evaluate(
        Path(args.pred),
        Path(args.gt),
        threshold=args.threshold,
        beta_sq=args.beta_sq,
        aggregation="per_video" if args.per_video else "frame",
        mae_on_binary=args.mae_on_binary,
    )
    table = report.to_table()
    print(table, end="")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.txt").write_text(table, encoding="utf-8")
        (out / "records.jsonl").write_text(report.to_jsonl(), encoding="utf-8")
        print(f"report written to {out}")
    return 0


def _ablate_run(
    root: Path, out: Path, config: RunConfig, label: dict
) -> dict:
    """Train a model with the given config on the dataset, propagate every
    video from its ground-truth first frame, and evaluate."""
    torch.manual_seed(config.seed)
    videos = [load_video_sequence(root, vid) for vid in list_videos(root)]
    videos = [v for v in videos if v.gt_masks is not None]
    if not videos:
        raise VidshadowError(f"no annotated videos under {root}")
    model = LstnModel(LstnConfig.toy(
        num_blocks=config.lst_blocks, short_window=config.short_window_w
    ))
    train_lstn(model, videos, config, rng=np.random.default_rng(config.seed))

    tag = "_".join(f"{k}-{v}" for k, v in label.items())
    pred_root = out / "preds" / tag
    for video in videos:
        seed_mask = video.gt_masks[0].values.astype(np.float32)
        if len(video) == 1:
            masks = [ShadowMask(seed_mask)]
        else:
            session = PropagationSession(
                model, video, ShadowMask(seed_mask), "forward", config
            )
            masks = session.run()
        _write_masks(pred_root, video, masks)
    report = evaluate(pred_root, root / "annotations", threshold=config.binarize_threshold)
    row = {**label, **report.dataset}
    return row


def cmd_ablate(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    root = Path(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    if args.axis == "blocks":
        for blocks in (1, 2, 3, 4):
            rows.append(
                _ablate_run(root, out, config.replace(lst_blocks=blocks), {"blocks": blocks})
            )
    elif args.axis == "window":
        for window in (int(w) for w in args.windows.split(",")):
            rows.append(
                _ablate_run(
                    root, out, config.replace(short_window_w=window), {"window": window}
                )
            )
    else:  # components: the 2x2 long/short grid
        choices = [(False, False), (False, True), (True, False), (True, True)]
        if args.long != "both":
            choices = [c for c in choices if c[0] == (args.long == "on")]
        if args.short != "both":
            choices = [c for c in choices if c[1] == (args.short == "on")]
        for use_long, use_short in choices:
            rows.append(
                _ablate_run(
                    root,
                    out,
                    config.replace(use_long=use_long, use_short=use_short),
                    {"long": use_long, "short": use_short},
                )
            )
    (out / "rows.jsonl").write_text(
        "".join(json.dumps(row) + "\n" for row in rows), encoding="utf-8"
    )
    for row in rows:
        print(json.dumps(row))
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service import create_app

    config = _resolve_config(args)
    segmenter, lstn = _load_models(args)
    app = create_app(Path(args.data), segmenter, lstn, Path(args.state), config)
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


def cmd_make_toy_data(args: argparse.Namespace) -> int:
    ids = make_toy_dataset(
        Path(args.out),
        num_videos=args.videos,
        num_frames=args.frames,
        size=args.size,
        blob=args.blob,
        seed=args.seed,
    )
    print(f"wrote {len(ids)} videos to {args.out}: {' '.join(ids)}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vidshadow",
        description="Video shadow detection: first-frame promptable "
        "segmentation plus memory-based propagation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="key=value config file")
        p.add_argument(
            "--set", action="append", metavar="KEY=VALUE",
            help="override one config value (repeatable)",
        )

    p = sub.add_parser("finetune", help="fine-tune the segmenter's mask decoder")
    p.add_argument("--data", required=True, help="dataset root (videos/ + annotations/)")
    p.add_argument("--out", required=True)
    p.add_argument("--preset", choices=("toy", "reference"), default="toy")
    p.add_argument("--max-samples", type=int, default=None)
    add_common(p)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("train-lstn", help="train the propagation network")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--preset", choices=("toy", "reference"), default="toy")
    add_common(p)
    p.set_defaults(func=cmd_train_lstn)

    p = sub.add_parser("infer", help="forward propagation for one video")
    p.add_argument("--data", required=True)
    p.add_argument("--video", required=True)
    p.add_argument("--segmenter", required=True, help="segmenter checkpoint")
    p.add_argument("--lstn", required=True, help="propagation-network checkpoint")
    p.add_argument("--boxes", help="first-frame box prompt file")
    p.add_argument("--out", required=True)
    add_common(p)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("infer-plus", help="bidirectional propagation with re-prediction")
    p.add_argument("--data", required=True)
    p.add_argument("--video", required=True)
    p.add_argument("--segmenter", required=True)
    p.add_argument("--lstn", required=True)
    p.add_argument("--boxes-first", help="first-frame box prompt file")
    p.add_argument("--boxes-last", help="last-frame box prompt file")
    p.add_argument("--out", required=True)
    add_common(p)
    p.set_defaults(func=cmd_infer_plus)

    p = sub.add_parser("eval", help="evaluate a prediction tree")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--beta-sq", type=float, default=0.3)
    p.add_argument("--per-video", action="store_true",
                   help="average video means instead of all frames")
    p.add_argument("--mae-on-binary", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="sweep attention depth, window, or components")
    p.add_argument("axis", choices=("blocks", "window", "components"))
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--windows", default="1,3,5,7", help="window sizes for the window axis")
    p.add_argument("--long", choices=("on", "off", "both"), default="both")
    p.add_argument("--short", choices=("on", "off", "both"), default="both")
    add_common(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser(
        "serve",
        help="run the annotation HTTP service",
        description="Flags fall back to VIDSHADOW_DATA, VIDSHADOW_SEGMENTER, "
        "VIDSHADOW_LSTN, VIDSHADOW_STATE, and VIDSHADOW_PORT.",
    )

    def env_arg(flag: str, var: str, **kwargs) -> None:
        if var in os.environ:
            p.add_argument(flag, default=os.environ[var], **kwargs)
        else:
            p.add_argument(flag, required=True, **kwargs)

    env_arg("--data", "VIDSHADOW_DATA")
    env_arg("--segmenter", "VIDSHADOW_SEGMENTER")
    env_arg("--lstn", "VIDSHADOW_LSTN")
    env_arg("--state", "VIDSHADOW_STATE", help="session persistence directory")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument(
        "--port", type=int, default=int(os.environ.get("VIDSHADOW_PORT", "8000"))
    )
    add_common(p)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("make-toy-data", help="write a synthetic moving-blob dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--videos", type=int, default=2)
    p.add_argument("--frames", type=int, default=5)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--blob", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_make_toy_data)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except VidshadowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - surface anything as exit 1
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
