"""Train networks for the BER configuration, then compare receiver and estimator pairs by BER.

Usage: python scripts/run_ber.py [--config configs/desk_ber.json] [--out results/ber] [--skip-train]
"""

import argparse
import sys
from pathlib import Path

from nlmimo import cli


def main() -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", default="configs/desk_ber.json")
    p.add_argument("--out", default="results/ber")
    p.add_argument("--skip-train", action="store_true", help="reuse models already in --out")
    args = p.parse_args()
    out = Path(args.out)
    common = ["--config", args.config, "--out", str(out)]
    if not args.skip_train:
        code = cli.main(["train"] + common)
        if code:
            return code
    return cli.main(["ber"] + common + [f"--override=channel_model={out / 'channel_model.json'}",
                                        f"--override=variance_model={out / 'variance_model.json'}"])


if __name__ == "__main__":
    sys.exit(main())
