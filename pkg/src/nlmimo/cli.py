"""Command-line entry point: ``nlmimo <experiment> --config <file> [--seed N] [--out DIR] [--override key=value]``.

Exit codes: 0 success, 2 configuration error, 3 missing model file.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import harness as h

EXIT_OK, EXIT_CONFIG, EXIT_MODEL = 0, 2, 3

log = logging.getLogger("nlmimo")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nlmimo", description=__doc__.splitlines()[0])
    p.add_argument("experiment", choices=h.EXPERIMENTS)
    p.add_argument("--config", required=True, help="JSON experiment config")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--out", default="results", help="output directory")
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                   help="dotted config key, value parsed as JSON when possible; repeatable")
    p.add_argument("--estimator", action="append", choices=h.CHANNEL_ESTIMATORS + h.VARIANCE_ESTIMATORS[:2],
                   help="estimator(s) for nmse-* experiments; repeatable")
    p.add_argument("--receiver", action="append", choices=tuple(h.rx.COMBINERS[:4]) + h.BER_COMBOS,
                   help="receiver(s) for se-cdf or ber; repeatable")
    p.add_argument("--append", action="store_true", help="append to existing CSVs (same config hash only)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def load_spec(args) -> h.ExperimentSpec:
    path = Path(args.config)
    try:
        d = json.loads(path.read_text())
    except FileNotFoundError:
        raise h.ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as e:
        raise h.ConfigError(f"{path}: {e}") from None
    if not isinstance(d, dict):
        raise h.ConfigError(f"{path} must hold a JSON object")
    for ov in args.override:
        h.apply_override(d, ov)
    if args.seed is not None:
        d["seed"] = args.seed
    if args.estimator:
        d["estimators"] = args.estimator
    if args.receiver:
        d["receivers"] = args.receiver
    d.pop("experiment", None)
    return h.ExperimentSpec.from_dict(d, args.experiment)


def _emit(out: Path, name: str, spec, rows, columns, append, plot=None):
    sink = h.CsvSink(out / f"{name}.csv", spec.hash, columns, append=append)
    sink.write(rows)
    if plot is not None:
        h.write_plot_script(out, f"{name}.csv", *plot)


def run(args) -> dict:
    spec = load_spec(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    exp = spec.experiment
    if exp in ("nmse-channel", "nmse-variance"):
        target = exp.split("-")[1]
        if not spec.estimators:
            spec.estimators = (["dua-lmmse", "da-lmmse", "dl"] if target == "channel"
                               else ["mc-lmmse-lin", "mc-lmmse-log", "dl"])
        rows, summary = h.run_nmse_experiment(spec, target)
        cols = ["setup", "ue", "snr_db", "estimator", "nmse_db"] if target == "channel" else ["setup", "estimator", "nmse_db"]
        _emit(out, exp, spec, rows, cols, args.append, ("estimator", "nmse_db", "NMSE (dB)", "cdf"))
    elif exp == "se-cdf":
        rows, summary = h.run_se_experiment(spec)
        _emit(out, exp, spec, rows, ["setup", "ue", "receiver", "se"], args.append,
              ("receiver", "se", "SE (bit/s/Hz)", "cdf"))
    elif exp == "ber":
        rows, summary = h.run_ber_experiment(spec)
        _emit(out, exp, spec, rows, ["setup", "ue_rank", "combo", "errors", "bits", "ber"], args.append,
              ("combo", "ber", "BER", "lines"))
    elif exp == "dataset-gen":
        summary = {"dataset": str(h.generate_dataset(spec, out)), "samples": spec.samples}
    elif exp == "train":
        summary = h.run_train(spec, out)
    elif exp == "eval":
        summary = h.run_eval(spec)
    else:
        summary = h.run_export(spec, out)
    summary = {"experiment": exp, "config_hash": spec.hash, "seed": spec.seed, "results": summary}
    (out / f"{exp}_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        summary = run(args)
    except h.MissingModelError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_MODEL
    except h.ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    print(json.dumps(summary["results"], indent=2, sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
