"""Command line: `stress-adapter serve ...` and `stress-adapter gen-fixtures ...`."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import fixtures, serve


def _parse_input(text: str) -> tuple[int, int, int]:
    parts = text.split("x")
    if len(parts) != 3:
        raise SystemExit(f"--input must be CxHxW, got {text!r}")
    return int(parts[0]), int(parts[1]), int(parts[2])


def cmd_serve(args) -> int:
    c, h, w = _parse_input(args.input)
    classes = tuple(args.classes.split(","))
    identity = args.identity or f"torchscript:{Path(args.model).name}"
    config = serve.AdapterConfig(
        model_path=Path(args.model),
        class_names=classes,
        channels=c,
        height=h,
        width=w,
        identity=identity,
    )
    serve.serve(config)
    return 0


def cmd_gen_fixtures(args) -> int:
    config = fixtures.load_suite_config(Path(args.suite_config) if args.suite_config else None)
    stats = fixtures.generate(Path(args.images), Path(args.out), config)
    print(
        f"wrote {stats['fixtures']} fixtures ({stats['inputs']} inputs x {stats['specs']} specs)"
    )
    for line in stats["skipped"]:
        print(f"skipped {line}", file=sys.stderr)
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="stress-adapter", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve", help="answer scoring requests over stdio")
    p.add_argument("--model", required=True, help="TorchScript model file")
    p.add_argument("--classes", required=True, help="comma-separated class names")
    p.add_argument("--input", required=True, help="expected input as CxHxW")
    p.add_argument("--identity", default=None)
    p.set_defaults(fn=cmd_serve)

    p = sub.add_parser("gen-fixtures", help="render reference perturbation outputs")
    p.add_argument("--images", required=True, help="directory of input images")
    p.add_argument("--out", required=True, help="fixture output directory")
    p.add_argument("--suite-config", default=None, help="JSON config with a 'suite' table")
    p.set_defaults(fn=cmd_gen_fixtures)

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
