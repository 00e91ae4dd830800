#!/usr/bin/env python3
"""Desk-scale ablation sweeps over the attention stack: block depth, the
short-term window, and the long/short component grid.

    python3 scripts/run_ablations.py --out /tmp/vidshadow-ablate
"""

import argparse
import sys
from pathlib import Path

from vidshadow.cli import main as cli_main
from vidshadow.synthetic import make_toy_dataset


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", required=True)
    parser.add_argument("--steps", type=int, default=60)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    out = Path(args.out)
    data_root = out / "data"
    make_toy_dataset(data_root, num_videos=2, num_frames=5, seed=args.seed)

    flags = [
        "--data", str(data_root),
        "--set", f"steps={args.steps}",
        "--set", "batch_size=2",
        "--set", "crop_size=64",
        "--set", "crop_scale_min=1.0",
        "--set", "short_window_w=5",
        "--set", "lr_pretrained=1e-3",
        "--set", "lr_scratch=2e-3",
        "--set", "weight_decay=0.0",
        "--set", f"seed={args.seed}",
    ]
    for axis in ("blocks", "window", "components"):
        print(f"\n== ablate {axis} ==")
        code = cli_main(["ablate", axis, "--out", str(out / axis), *flags])
        if code != 0:
            return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
