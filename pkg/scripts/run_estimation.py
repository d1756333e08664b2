"""Train both networks, then compare channel and distortion-variance estimators.

Usage: python scripts/run_estimation.py [--config configs/desk_estimation.json] [--out results/estimation]
"""

import argparse
import sys
from pathlib import Path

from nlmimo import cli


def main() -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", default="configs/desk_estimation.json")
    p.add_argument("--out", default="results/estimation")
    p.add_argument("--seed", default=None)
    args = p.parse_args()
    out = Path(args.out)
    common = ["--config", args.config, "--out", str(out)] + (["--seed", args.seed] if args.seed else [])
    models = [f"--override=channel_model={out / 'channel_model.json'}",
              f"--override=variance_model={out / 'variance_model.json'}"]
    steps = [
        ["train"] + common,
        ["nmse-channel"] + common + models + ["--estimator", "dua-lmmse", "--estimator", "da-lmmse",
                                              "--estimator", "dl"],
        ["nmse-variance"] + common + models + ["--estimator", "mc-lmmse-lin", "--estimator", "mc-lmmse-log",
                                               "--estimator", "dl"],
    ]
    for argv in steps:
        code = cli.main(argv)
        if code:
            return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
