"""Command-line entry point: one subcommand per study.

Every subcommand accepts --config (JSON file) plus flag overrides; flags
win over the file. Exit codes: 0 success, 1 study failure (a partial
report with the failure note is still written), 2 invalid configuration.
The GRAVALLOC_THREADS environment variable overrides --threads.
"""

from __future__ import annotations

import argparse
import json
import sys

from .errors import ConfigInvalid, StudyFailed
from .report import ExperimentReport
from .studies import run, study_names, validate_config


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="JSON study configuration file")
    sub.add_argument("--seed", type=int, help="master seed")
    sub.add_argument("--out", help="report JSON path (default <study>.json)")
    sub.add_argument("--csv", action="store_true", default=None,
                     help="also write the per-sample CSV table next to the report")
    sub.add_argument("--threads", type=int,
                     help="worker threads (default: machine cores; "
                          "GRAVALLOC_THREADS overrides)")


_INT_FLAGS = {
    "allocate": ["n", "samples"],
    "tau": ["n", "samples"],
    "identity": ["n", "samples"],
    "distance": ["samples", "configs"],
    "maxima": ["trials", "seeds-per-source"],
    "matching": ["n", "trials"],
    "kostlan-force": ["n", "trials", "identity-draws"],
    "kostlan-distance": ["samples", "configs"],
    "square-baseline": ["trials"],
    "raster": ["n", "width", "height"],
}

_LIST_FLAGS = {
    "distance": ["ns"],
    "maxima": ["ns"],
    "kostlan-force": ["identity-ns"],
    "kostlan-distance": ["ns"],
    "square-baseline": ["ns"],
}

_STR_FLAGS = {
    "allocate": ["process"],
    "tau": ["process"],
    "identity": ["process"],
    "distance": ["process"],
    "maxima": ["process"],
    "kostlan-force": ["method"],
    "raster": ["process", "image-out", "sidecar-out"],
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gravalloc",
        description="Gravitational allocation studies on the sphere",
    )
    parser.add_argument("--version", action="version", version="gravalloc 0.1.0")
    subs = parser.add_subparsers(dest="study", required=True, metavar="study")
    for study in study_names():
        sub = subs.add_parser(study, help=f"run the {study} study")
        _add_common(sub)
        for flag in _INT_FLAGS.get(study, []):
            sub.add_argument(f"--{flag}", type=int)
        for flag in _LIST_FLAGS.get(study, []):
            sub.add_argument(f"--{flag}", type=_int_list,
                             help="comma-separated integers")
        for flag in _STR_FLAGS.get(study, []):
            sub.add_argument(f"--{flag}")
    return parser


def _int_list(text: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _load_config(args: argparse.Namespace) -> dict:
    config = {}
    if args.config:
        try:
            with open(args.config, "r", encoding="utf-8") as fh:
                config = json.load(fh)
        except OSError as exc:
            raise ConfigInvalid(f"cannot read config file: {exc}")
        except json.JSONDecodeError as exc:
            raise ConfigInvalid(f"config file is not valid JSON: {exc}")
        if not isinstance(config, dict):
            raise ConfigInvalid("config file must hold a JSON object")
    if config.get("study") not in (None, args.study):
        raise ConfigInvalid(
            f"config file is for study {config.get('study')!r}, not {args.study!r}"
        )
    config["study"] = args.study
    skip = {"study", "config", "threads"}
    for key, value in vars(args).items():
        if key in skip or value is None:
            continue
        config[key] = value
    return config


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = _load_config(args)
        resolved = validate_config(config)
    except ConfigInvalid as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    out_path = resolved.get("out") or f"{resolved['study']}.json"
    try:
        report = run(resolved, threads=args.threads)
    except StudyFailed as exc:
        partial = ExperimentReport(
            study=resolved["study"],
            parameters=resolved,
            summary={"failed": True, "error": str(exc)},
        )
        try:
            partial.write_json(out_path)
        except OSError:
            pass
        print(f"study failed: {exc}", file=sys.stderr)
        return 1
    try:
        report.write_json(out_path)
        if resolved.get("csv"):
            report.write_csv(out_path.rsplit(".", 1)[0] + ".csv")
    except OSError as exc:
        print(f"study failed: cannot write report: {exc}", file=sys.stderr)
        return 1
    print(f"{resolved['study']}: report written to {out_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
