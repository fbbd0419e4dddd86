"""Command-line entry point.

Subcommands:
  perturb   apply one perturbation to an image, or render the full suite grid
  run       full stress test: clean baseline, sweep, reports, plots
  metrics   clean-only metric/disparity reports from a prediction file
  synth     generate a deterministic synthetic dataset plus stub scorer config

Exit codes: 0 complete, 2 partial (some perturbation passes failed and were
recorded as undefined), 1 fatal. When a flag is omitted, the environment
variables STRESSKIT_OUT and STRESSKIT_WORKERS supply the output directory
and worker count.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import shlex
import sys
from pathlib import Path

import numpy as np

from . import synth
from .config import AppConfig, load_config
from .dataset import load_manifest, resolve_subgroups, validate
from .errors import InvalidLevelError, StressKitError
from .harness import StressJob, ResultTable, run_stress
from .image import ImageBuffer, decode_image, encode_png
from .metrics import METRIC_NAMES, THRESHOLD_POLICIES, select_thresholds, stratified_eval
from .perturb import (
    KIND_ORDER,
    PerturbationKind,
    PerturbationSpec,
    SeverityTable,
    apply,
    build_suite,
    resolve_severity,
)
from .report import disparity_table, emit_plots, write_disparity, write_results
from .scorer import HttpScorer, SubprocessScorer, load_precomputed

log = logging.getLogger(__name__)


def _out_dir(args) -> Path:
    out = args.out or os.environ.get("STRESSKIT_OUT")
    if not out:
        raise StressKitError("no output path: pass --out or set STRESSKIT_OUT")
    return Path(out)


def _workers(args) -> int:
    if args.workers is not None:
        return args.workers
    env = os.environ.get("STRESSKIT_WORKERS")
    if env:
        return int(env)
    return os.cpu_count() or 1


def _echo_config(out_dir: Path, args, config: AppConfig | None):
    """Record how this run was invoked, for provenance."""
    echo = {k: v for k, v in vars(args).items() if k != "fn"}
    echo["config"] = config.raw if config is not None else None
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config_echo.json").write_text(
        json.dumps(echo, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8"
    )


def cmd_perturb(args) -> int:
    config = load_config(args.config) if args.config else None
    suite_config = config.suite if config else None
    img = decode_image(args.input)
    out = Path(args.out)
    if args.grid:
        specs = build_suite(suite_config)
        by_kind = {}
        for spec in specs:
            by_kind.setdefault(spec.kind, []).append(spec)
        cols = max(len(v) for v in by_kind.values())
        gutter = 2
        h, w, c = img.height, img.width, img.channels
        rows = [k for k in KIND_ORDER if k in by_kind]
        canvas = np.zeros(
            (len(rows) * h + (len(rows) - 1) * gutter, cols * w + (cols - 1) * gutter, c),
            dtype=np.float32,
        )
        for ri, kind in enumerate(rows):
            for ci, spec in enumerate(by_kind[kind]):
                tile = apply(spec, img).pixels
                y0, x0 = ri * (h + gutter), ci * (w + gutter)
                canvas[y0 : y0 + h, x0 : x0 + w] = tile
        encode_png(ImageBuffer.from_array(canvas), out)
        print(f"wrote {len(specs)}-tile grid to {out}")
        return 0
    if args.kind is None or args.level is None:
        raise StressKitError("pass --kind and --level, or --grid")
    kind = PerturbationKind(args.kind)
    table = suite_config.table if suite_config else SeverityTable()
    if args.parameter is not None:
        param = args.parameter
        if args.level == 0:
            raise InvalidLevelError("level 0 is the identity and is excluded")
    else:
        param = resolve_severity(kind, args.level, table)
    spec = PerturbationSpec(kind=kind, level=args.level, parameter=param)
    encode_png(apply(spec, img), out)
    print(f"wrote {spec.tag} (parameter {param:g}) to {out}")
    return 0


def _make_client(args):
    sources = [s for s in (args.scorer_cmd, args.scorer_url, args.scores_dir) if s]
    if len(sources) != 1:
        raise StressKitError("pass exactly one of --scorer-cmd, --scorer-url, --scores-dir")
    if args.scorer_cmd:
        return SubprocessScorer(shlex.split(args.scorer_cmd), timeout=args.timeout)
    if args.scorer_url:
        return HttpScorer(args.scorer_url, timeout=args.timeout)
    return None


def cmd_run(args) -> int:
    config = load_config(args.config)
    if config.schema is None:
        raise StressKitError(f"{args.config}: config must declare 'classes' for a run")
    ds = load_manifest(args.manifest, config.schema, name=args.dataset_name)
    report = validate(ds)
    for w in report.warnings:
        log.warning("%s", w)
    out_dir = _out_dir(args)
    _echo_config(out_dir, args, config)
    job = StressJob(
        dataset=ds,
        suite=build_suite(config.suite),
        subgroup_defs=config.subgroups,
        out_dir=out_dir,
        threshold_policy=args.threshold_policy,
        ece_bins=args.bins,
        batch_size=args.batch,
        workers=_workers(args),
        spec_retries=args.retries,
        keep_images=args.debug_keep_images,
        resume=args.resume,
        thresholds_path=Path(args.thresholds) if args.thresholds else None,
        scores_dir=Path(args.scores_dir) if args.scores_dir else None,
    )
    client = _make_client(args)
    try:
        rt = run_stress(job, client)
    finally:
        if client is not None:
            client.close()
    paths = write_results(rt, out_dir)
    rows = disparity_table(rt)
    write_disparity(rows, out_dir)
    if not args.no_plots:
        for metric in METRIC_NAMES:
            emit_plots(rt, metric, out_dir / "plots")
    failed = rt.meta.get("failed_specs") or {}
    print(f"wrote {paths['results']}")
    if failed:
        print(f"{len(failed)} perturbation passes failed: {sorted(failed)}", file=sys.stderr)
        return 2
    return 0


def cmd_metrics(args) -> int:
    config = load_config(args.config)
    if config.schema is None:
        raise StressKitError(f"{args.config}: config must declare 'classes'")
    ds = load_manifest(args.manifest, config.schema, name=args.dataset_name)
    partition = resolve_subgroups(config.subgroups, ds)
    matrix = load_precomputed(args.predictions, ds)
    thresholds = select_thresholds(matrix.values, ds, args.threshold_policy)
    rows = stratified_eval(matrix.values, ds, partition, thresholds, args.bins)
    rt = ResultTable(
        rows=rows,
        meta={
            "dataset": ds.name,
            "n_samples": len(ds.samples),
            "classes": list(ds.class_names),
            "subgroups": list(partition.groups.keys()),
            "subgroup_excluded_unknown": partition.excluded_unknown,
            "suite": [],
            "threshold_policy": args.threshold_policy,
            "thresholds": thresholds.to_dict(),
            "ece_bins": args.bins,
            "scorer_identity": f"precomputed:{Path(args.predictions).name}",
            "failed_specs": {},
            "metrics": list(METRIC_NAMES),
        },
    )
    out_dir = _out_dir(args)
    _echo_config(out_dir, args, config)
    paths = write_results(rt, out_dir)
    write_disparity(disparity_table(rt), out_dir)
    print(f"wrote {paths['results']}")
    return 0


def _parse_attr(text: str) -> synth.AttributeSpec:
    try:
        name, rest = text.split(":", 1)
        pairs = []
        for part in rest.split(","):
            value, prop = part.split("=")
            pairs.append((value, float(prop)))
    except ValueError:
        raise StressKitError(f"bad --attr {text!r}; expected name:value=prop,value=prop") from None
    return synth.AttributeSpec(name=name, values=tuple(pairs))


def cmd_synth(args) -> int:
    try:
        width, height = (int(p) for p in args.size.split("x"))
    except ValueError:
        raise StressKitError(f"bad --size {args.size!r}; expected WxH") from None
    attrs = tuple(_parse_attr(a) for a in args.attr) if args.attr else tuple(
        synth.AttributeSpec(n, v) for n, v in synth.DEFAULT_ATTRIBUTES
    )
    spec = synth.SynthSpec(
        seed=args.seed,
        n_samples=args.samples,
        height=height,
        width=width,
        n_classes=args.classes,
        prevalence=args.prevalence,
        separability=args.separability,
        attributes=attrs,
    )
    out_dir = _out_dir(args)
    paths = synth.generate(spec, out_dir)
    stub_cmd = f"{sys.executable} -m stresskit.stubs degrade --config {paths['stub']}"
    print(f"wrote {paths['manifest']}")
    print(f"scorer command: {stub_cmd}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stresskit", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("perturb", help="perturb one image or render the suite grid")
    p.add_argument("input", help="input PNG/JPEG")
    p.add_argument("--out", required=True, help="output PNG path")
    p.add_argument("--kind", choices=[k.value for k in PerturbationKind], default=None,
                   help="perturbation kind")
    p.add_argument("--level", type=int, default=None, help="severity level (non-zero)")
    p.add_argument("--parameter", type=float, default=None,
                   help="override the resolved transform parameter (preview aid)")
    p.add_argument("--grid", action="store_true", help="render every suite spec as one contact sheet")
    p.add_argument("--config", default=None, help="config file providing the suite table")
    p.set_defaults(fn=cmd_perturb)

    p = sub.add_parser("run", help="full progressive stress test")
    p.add_argument("--manifest", required=True, help="sample manifest CSV")
    p.add_argument("--config", required=True, help="config file (schema, subgroups, suite)")
    p.add_argument("--out", default=None, help="output directory (or STRESSKIT_OUT)")
    p.add_argument("--dataset-name", default=None, help="dataset label in reports; default: manifest stem")
    p.add_argument("--scorer-cmd", default=None, help="scorer subprocess command line")
    p.add_argument("--scorer-url", default=None, help="scorer HTTP endpoint")
    p.add_argument("--scores-dir", default=None, help="directory of per-pass score CSVs")
    p.add_argument("--threshold-policy", choices=THRESHOLD_POLICIES, default="f1-optimal-on-clean",
                   help="how the per-class operating threshold is frozen")
    p.add_argument("--thresholds", default=None, help="state.json (or thresholds JSON) from a prior run")
    p.add_argument("--bins", type=int, default=15, help="calibration bins")
    p.add_argument("--workers", type=int, default=None, help="perturbation workers (or STRESSKIT_WORKERS)")
    p.add_argument("--batch", type=int, default=32, help="images per scoring request")
    p.add_argument("--retries", type=int, default=1, help="per-pass scoring retries")
    p.add_argument("--timeout", type=float, default=60.0, help="scorer response timeout (s)")
    p.add_argument("--resume", action="store_true", help="reuse completed passes in --out")
    p.add_argument("--debug-keep-images", action="store_true", help="write every perturbed image to --out")
    p.add_argument("--no-plots", action="store_true", help="skip SVG severity plots")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("metrics", help="clean-only metrics from a prediction file")
    p.add_argument("--predictions", required=True, help="score CSV (id + one column per class)")
    p.add_argument("--manifest", required=True, help="sample manifest CSV")
    p.add_argument("--config", required=True, help="config file (schema, subgroups)")
    p.add_argument("--out", default=None, help="output directory (or STRESSKIT_OUT)")
    p.add_argument("--dataset-name", default=None, help="dataset label in reports; default: manifest stem")
    p.add_argument("--threshold-policy", choices=THRESHOLD_POLICIES, default="f1-optimal-on-clean",
                   help="how the per-class operating threshold is chosen")
    p.add_argument("--bins", type=int, default=15, help="calibration bins")
    p.set_defaults(fn=cmd_metrics)

    p = sub.add_parser("synth", help="generate a synthetic dataset and stub config")
    p.add_argument("--out", default=None, help="output directory (or STRESSKIT_OUT)")
    p.add_argument("--seed", type=int, default=0, help="single seed behind all generated randomness")
    p.add_argument("--samples", type=int, default=100, help="sample count")
    p.add_argument("--size", default="64x64", help="WxH")
    p.add_argument("--classes", type=int, default=2, help="number of label classes")
    p.add_argument("--separability", type=float, default=0.3,
                   help="0..1; how well clean scores separate the classes")
    p.add_argument("--prevalence", type=float, default=0.4, help="positive rate per class")
    p.add_argument("--attr", action="append", default=None, help="name:value=prop,... (repeatable)")
    p.set_defaults(fn=cmd_synth)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except InvalidLevelError as e:
        parser.error(str(e))  # usage error, exits 2 via argparse
        return 2
    except StressKitError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
