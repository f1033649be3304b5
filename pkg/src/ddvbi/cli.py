"""Command line entry point: ``ddvbi {simulate,track,sweep}``."""

from __future__ import annotations

import argparse
import json
import sys

from .config import FIELD_TYPES, build_config
from .errors import ConfigurationError
from .harness import check_writable, resolve_output, run_sweep, simulate_record, track_diagnostics


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat 'key = value' configuration file")
    common.add_argument("--out", help="output file or directory (default: $DDVBI_OUT_DIR or .)")
    keys = common.add_argument_group("configuration keys (override the file)")
    for key, (kind, typ) in sorted(FIELD_TYPES.items()):
        flags = ["--" + key]
        if "_" in key:
            flags.append("--" + key.replace("_", "-"))
        hint = "comma-separated %s list" % typ.__name__ if kind == "list" else typ.__name__
        keys.add_argument(*flags, dest="key_" + key, metavar="VALUE", help=hint)

    p = argparse.ArgumentParser(prog="ddvbi", description=(
        "Doppler-aware dynamic VBI channel tracking: simulator, solver and Monte-Carlo harness."))
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common],
                   help="dump the ground-truth frames of trial 0 as JSON")
    sub.add_parser("track", parents=[common],
                   help="run one designed-training track and emit JSON-lines diagnostics")
    sub.add_parser("sweep", parents=[common],
                   help="Monte-Carlo campaign, CSV results plus JSON sidecar")
    return p


def _emit(text: str, out: str | None, default_name: str):
    if out is None:
        sys.stdout.write(text)
        return
    path = resolve_output(out, default_name)
    check_writable(path)
    with open(path, "w", newline="") as fh:
        fh.write(text)
    print(path)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    overrides = {k[4:]: v for k, v in vars(args).items() if k.startswith("key_") and v is not None}
    try:
        text = None
        if args.config:
            try:
                with open(args.config) as fh:
                    text = fh.read()
            except OSError as exc:
                raise ConfigurationError("cannot read config: %s" % exc) from None
        cfg = build_config(text, overrides)
        if args.command == "simulate":
            rec = simulate_record(cfg)
            _emit(json.dumps(rec, sort_keys=True) + "\n", args.out, "simulate.json")
        elif args.command == "track":
            lines = [json.dumps(d, sort_keys=True) for d in track_diagnostics(cfg)]
            _emit("\n".join(lines) + "\n", args.out, "track.jsonl")
        else:
            csv_path, side = run_sweep(cfg, args.out)
            print(csv_path)
            print(side)
    except ConfigurationError as exc:
        print("ddvbi: error: %s" % exc, file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
