"""Result serialization, subgroup-disparity summaries, and severity plots.

Everything written here is byte-deterministic for identical inputs: rows
are sorted on their key columns, floats use shortest round-trip formatting,
and the SVG geometry is fixed.
"""

from __future__ import annotations

import csv
import json
import re
from dataclasses import dataclass
from pathlib import Path

from .errors import StressKitError
from .harness import CLEAN_TAG, ResultTable
from .metrics import HIGHER_BETTER, METRIC_NAMES, MetricResult
from .svg import CANVAS, PALETTE, line_chart

__all__ = [
    "RESULTS_CSV",
    "METADATA_JSON",
    "DISPARITY_CSV",
    "DisparityRow",
    "write_results",
    "read_results",
    "disparity_table",
    "write_disparity",
    "emit_plots",
]

RESULTS_CSV = "results.csv"
METADATA_JSON = "metadata.json"
DISPARITY_CSV = "disparity.csv"
RESULTS_HEADER = ["dataset", "class", "subgroup", "kind", "level", "metric", "value", "n"]
NA = "NA"


def _fmt_value(v: float | None) -> str:
    return NA if v is None else repr(float(v))


def _sort_key(r: MetricResult) -> tuple:
    return (r.dataset, r.class_name, r.subgroup, r.kind, r.level, r.metric)


def write_results(rt: ResultTable, out_dir: str | Path) -> dict[str, Path]:
    """Write the long-format results CSV and the run metadata JSON."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / RESULTS_CSV
    with csv_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(RESULTS_HEADER)
        for r in sorted(rt.rows, key=_sort_key):
            writer.writerow(
                [r.dataset, r.class_name, r.subgroup, r.kind, str(r.level), r.metric, _fmt_value(r.value), str(r.n)]
            )
    meta_path = out_dir / METADATA_JSON
    meta = dict(rt.meta)
    meta["report"] = {"palette": list(PALETTE), "canvas": dict(CANVAS), "na_marker": NA}
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return {"results": csv_path, "metadata": meta_path}


def read_results(out_dir: str | Path) -> ResultTable:
    """Reload a written result table; inverse of write_results."""
    out_dir = Path(out_dir)
    csv_path = out_dir / RESULTS_CSV
    rows: list[MetricResult] = []
    with csv_path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != RESULTS_HEADER:
            raise StressKitError(f"{csv_path}: unexpected header {header}")
        for rec in reader:
            rows.append(
                MetricResult(
                    dataset=rec[0],
                    class_name=rec[1],
                    subgroup=rec[2],
                    kind=rec[3],
                    level=int(rec[4]),
                    metric=rec[5],
                    value=None if rec[6] == NA else float(rec[6]),
                    n=int(rec[7]),
                )
            )
    meta_path = out_dir / METADATA_JSON
    meta = json.loads(meta_path.read_text(encoding="utf-8")) if meta_path.exists() else {}
    return ResultTable(rows=rows, meta=meta)


@dataclass(frozen=True)
class DisparityRow:
    """Max-minus-min spread of one metric cell across subgroups ('All' excluded)."""

    dataset: str
    class_name: str
    metric: str
    kind: str
    level: int
    values: dict  # subgroup -> float | None
    gap: float | None
    worst: str | None
    undefined: tuple[str, ...]


def disparity_table(rt: ResultTable) -> list[DisparityRow]:
    """Per (class, metric, kind, level): subgroup spread and the worst subgroup.

    The worst subgroup is the lowest value for higher-is-better metrics and
    the highest for FPR/ECE; ties break lexicographically on the name.
    """
    cells: dict[tuple, dict[str, float | None]] = {}
    for r in rt.rows:
        if r.subgroup == "All":
            continue
        key = (r.dataset, r.class_name, r.metric, r.kind, r.level)
        cells.setdefault(key, {})[r.subgroup] = r.value
    out: list[DisparityRow] = []
    for key in sorted(cells.keys()):
        dataset, cls, metric, kind, level = key
        values = cells[key]
        defined = {g: v for g, v in values.items() if v is not None}
        undefined = tuple(sorted(g for g, v in values.items() if v is None))
        if not defined:
            gap, worst = None, None
        else:
            gap = max(defined.values()) - min(defined.values())
            pick = min if metric in HIGHER_BETTER else max
            target = pick(defined.values())
            worst = min(sorted(g for g, v in defined.items() if v == target))
        out.append(
            DisparityRow(
                dataset=dataset,
                class_name=cls,
                metric=metric,
                kind=kind,
                level=level,
                values=dict(sorted(values.items())),
                gap=gap,
                worst=worst,
                undefined=undefined,
            )
        )
    return out


def write_disparity(rows: list[DisparityRow], out_dir: str | Path) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / DISPARITY_CSV
    groups = sorted({g for r in rows for g in r.values})
    header = ["dataset", "class", "metric", "kind", "level", *groups, "gap", "worst", "undefined"]
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for r in rows:
            writer.writerow(
                [
                    r.dataset,
                    r.class_name,
                    r.metric,
                    r.kind,
                    str(r.level),
                    *[_fmt_value(r.values.get(g)) for g in groups],
                    _fmt_value(r.gap),
                    r.worst or NA,
                    ";".join(r.undefined),
                ]
            )
    return path


def _safe_name(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", text)


def emit_plots(rt: ResultTable, metric: str, out_dir: str | Path) -> list[Path]:
    """One severity-curve chart per (dataset, class, kind): x is the signed
    level with clean at 0, one line per subgroup."""
    if metric not in METRIC_NAMES:
        raise StressKitError(f"unknown metric {metric!r}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    clean: dict[tuple, float | None] = {}
    curves: dict[tuple, dict[str, dict[int, float]]] = {}
    for r in rt.rows:
        if r.metric != metric:
            continue
        if r.kind == CLEAN_TAG:
            clean[(r.dataset, r.class_name, r.subgroup)] = r.value
            continue
        chart = curves.setdefault((r.dataset, r.class_name, r.kind), {})
        if r.value is not None:
            chart.setdefault(r.subgroup, {})[r.level] = r.value
    paths: list[Path] = []
    for key in sorted(curves.keys()):
        dataset, cls, kind = key
        by_group = curves[key]
        levels = sorted({lv for pts in by_group.values() for lv in pts})
        x_ticks = sorted(set(levels) | {0})
        if min(x_ticks) < 0:
            x_ticks = list(range(min(x_ticks), max(x_ticks) + 1))
        groups = sorted(by_group.keys())
        if "All" in groups:  # keep the pooled line first so its color is stable
            groups.remove("All")
            groups.insert(0, "All")
        series = []
        for g in groups:
            points = dict(by_group[g])
            cv = clean.get((dataset, cls, g))
            if cv is not None:
                points[0] = cv
            series.append((g, points))
        svg = line_chart(
            title=f"{dataset} / {cls} / {kind}",
            x_label="severity level",
            y_label=metric,
            x_ticks=x_ticks,
            series=series,
        )
        path = out_dir / f"{_safe_name(dataset)}__{_safe_name(cls)}__{metric}__{_safe_name(kind)}.svg"
        path.write_text(svg, encoding="utf-8")
        paths.append(path)
    return paths
