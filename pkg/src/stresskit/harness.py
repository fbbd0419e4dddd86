"""Stress-test orchestration: clean baseline, perturbation sweep, summaries.

A run scores the untouched test set first, freezes per-class operating
thresholds from those clean scores, then re-scores the set under every
perturbation spec while the thresholds stay fixed. Scores for each pass are
cached to disk so interrupted sweeps can resume and completed passes can be
re-analyzed without a scorer.
"""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .config import SubgroupDef
from .dataset import Dataset, SubgroupPartition, resolve_subgroups
from .errors import GridMismatchError, HandshakeError, ProtocolError, StressKitError
from .image import ImageBuffer, decode_image, encode_png, resize_bilinear
from .metrics import (
    HIGHER_BETTER,
    METRIC_NAMES,
    MetricResult,
    ThresholdVector,
    select_thresholds,
    stratified_eval,
)
from .perturb import PerturbationSpec, apply
from .scorer import ScoreMatrix, ScorerInfo, load_scores, save_scores

__all__ = [
    "StressJob",
    "ResultTable",
    "TrendSummary",
    "CellDiff",
    "StabilityRow",
    "RunComparison",
    "CLEAN_TAG",
    "check_scorer_compatible",
    "run_clean",
    "run_stress",
    "summarize_monotonic",
    "compare_runs",
    "expected_row_count",
    "job_fingerprint",
]

log = logging.getLogger(__name__)

CLEAN_TAG = "clean"
MONOTONE_TOLERANCE = 0.005


@dataclass
class StressJob:
    dataset: Dataset
    suite: list[PerturbationSpec]
    subgroup_defs: tuple[SubgroupDef, ...]
    out_dir: Path
    threshold_policy: str = "f1-optimal-on-clean"
    ece_bins: int = 15
    batch_size: int = 32
    workers: int = 1
    spec_retries: int = 1
    keep_images: bool = False
    resume: bool = False
    thresholds_path: Path | None = None  # reuse thresholds frozen by a prior run
    scores_dir: Path | None = None  # read per-pass score files instead of scoring

    def __post_init__(self):
        self.out_dir = Path(self.out_dir)
        if self.workers < 1:
            raise StressKitError(f"worker count must be >= 1, got {self.workers}")
        if self.batch_size < 1:
            raise StressKitError(f"batch size must be >= 1, got {self.batch_size}")

    @property
    def scores_cache_dir(self) -> Path:
        return self.out_dir / "scores"

    @property
    def state_path(self) -> Path:
        return self.out_dir / "state.json"


@dataclass
class ResultTable:
    rows: list[MetricResult]
    meta: dict = field(default_factory=dict)


def job_fingerprint(job: StressJob) -> str:
    """Hash of everything that determines result values, for resume safety."""
    ds = job.dataset
    payload = {
        "dataset": ds.name,
        "classes": list(ds.class_names),
        "samples": [[s.id, s.image_path, list(s.labels), _attrs_key(s.attributes)] for s in ds.samples],
        "suite": [[sp.kind.value, sp.level, repr(sp.parameter)] for sp in job.suite],
        "subgroups": [_subgroup_key(d) for d in job.subgroup_defs],
        "threshold_policy": job.threshold_policy,
        "ece_bins": job.ece_bins,
    }
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _attrs_key(attrs: dict) -> list:
    return [[k, "" if v is None else repr(v) if isinstance(v, float) else str(v)] for k, v in attrs.items()]


def _subgroup_key(d: SubgroupDef) -> list:
    return [
        d.name,
        d.attr,
        repr(d.equals),
        repr(d.range_min),
        repr(d.range_max),
        d.min_inclusive,
        d.max_inclusive,
    ]


def check_scorer_compatible(info: ScorerInfo, ds: Dataset) -> None:
    """Abort early when the scorer's label space is not the dataset's."""
    if info.class_names == ds.class_names:
        return
    missing = [c for c in ds.class_names if c not in info.class_names]
    extra = [c for c in info.class_names if c not in ds.class_names]
    parts = []
    if missing:
        parts.append(f"scorer lacks {missing}")
    if extra:
        parts.append(f"scorer adds {extra}")
    if not parts:
        parts.append(f"class order differs: {list(info.class_names)} vs {list(ds.class_names)}")
    raise HandshakeError("scorer classes do not match dataset: " + "; ".join(parts))


class _State:
    """Resumable sweep state persisted as JSON next to the cached scores."""

    def __init__(self, path: Path):
        self.path = path
        self.data: dict = {
            "fingerprint": None,
            "scorer_identity": None,
            "thresholds": None,
            "completed": [],
            "failed": {},
            "started_at": None,
            "finished_at": None,
        }

    @classmethod
    def load(cls, path: Path) -> "_State":
        st = cls(path)
        if path.exists():
            st.data = json.loads(path.read_text(encoding="utf-8"))
        return st

    def save(self):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        tmp = self.path.with_suffix(".json.tmp")
        tmp.write_text(json.dumps(self.data, indent=2, sort_keys=True), encoding="utf-8")
        tmp.replace(self.path)

    def mark_completed(self, tag: str):
        if tag not in self.data["completed"]:
            self.data["completed"].append(tag)
        self.data["failed"].pop(tag, None)
        self.save()

    def mark_failed(self, tag: str, message: str):
        self.data["failed"][tag] = message
        self.save()


def _prepare_image(ds: Dataset, sample, spec: PerturbationSpec | None, info: ScorerInfo) -> ImageBuffer:
    img = decode_image(ds.resolved_path(sample))
    if spec is not None:
        img = apply(spec, img)
    if (img.height, img.width) != (info.height, info.width):
        img = resize_bilinear(img, info.height, info.width)
    if img.channels != info.channels:
        raise StressKitError(
            f"sample {sample.id}: image has {img.channels} channels, scorer expects {info.channels}"
        )
    return img


def _score_pass(job: StressJob, client, info: ScorerInfo, spec: PerturbationSpec | None) -> ScoreMatrix:
    ds = job.dataset
    n = len(ds.samples)
    values = np.empty((n, len(ds.class_names)), dtype=np.float32)
    tag = spec.tag if spec is not None else CLEAN_TAG
    debug_dir = job.out_dir / "debug_images" / tag if job.keep_images else None
    with ThreadPoolExecutor(max_workers=job.workers) as pool:
        for lo in range(0, n, job.batch_size):
            batch = ds.samples[lo : lo + job.batch_size]
            images = list(pool.map(lambda s: _prepare_image(ds, s, spec, info), batch))
            if debug_dir is not None:
                for s, im in zip(batch, images):
                    encode_png(im, debug_dir / f"{s.id}.png")
            rows = client.score_batch(images, [s.id for s in batch])
            values[lo : lo + len(batch)] = rows
    return ScoreMatrix.build([s.id for s in ds.samples], ds.class_names, values)


def _obtain_scores(job: StressJob, client, info: ScorerInfo | None, spec: PerturbationSpec | None, state: _State) -> ScoreMatrix:
    """Resolve one pass's scores from cache, a scores directory, or the scorer."""
    tag = spec.tag if spec is not None else CLEAN_TAG
    cache_path = job.scores_cache_dir / f"{tag}.csv"
    if job.resume and tag in state.data["completed"] and cache_path.exists():
        return _aligned(load_scores(cache_path), job.dataset, tag)
    if job.scores_dir is not None:
        src = Path(job.scores_dir) / f"{tag}.csv"
        if not src.exists():
            raise StressKitError(f"scores directory is missing {src.name}")
        matrix = _aligned(load_scores(src), job.dataset, tag)
    else:
        if client is None or info is None:
            raise StressKitError("no scorer available and no cached scores found")
        matrix = _score_pass(job, client, info, spec)
    save_scores(matrix, cache_path)
    return matrix


def _aligned(matrix: ScoreMatrix, ds: Dataset, tag: str) -> ScoreMatrix:
    if matrix.class_names != ds.class_names:
        raise StressKitError(f"cached scores for {tag!r} carry different classes")
    if matrix.ids != tuple(s.id for s in ds.samples):
        index = {sid: i for i, sid in enumerate(matrix.ids)}
        missing = [s.id for s in ds.samples if s.id not in index]
        if missing:
            raise StressKitError(f"cached scores for {tag!r} missing ids: {missing[:10]}")
        order = [index[s.id] for s in ds.samples]
        matrix = ScoreMatrix.build([s.id for s in ds.samples], ds.class_names, matrix.values[order])
    return matrix


@dataclass
class CleanRun:
    matrix: ScoreMatrix
    thresholds: ThresholdVector
    rows: list[MetricResult]
    partition: SubgroupPartition


def run_clean(job: StressJob, client=None) -> CleanRun:
    """Score the unperturbed set, freeze thresholds, emit the level-0 rows."""
    ds = job.dataset
    partition = resolve_subgroups(job.subgroup_defs, ds)
    info = None
    if client is not None:
        info = client.handshake()
        check_scorer_compatible(info, ds)
    state = _State.load(job.state_path) if job.resume else _State(job.state_path)
    fingerprint = job_fingerprint(job)
    if job.resume and state.data["fingerprint"] not in (None, fingerprint):
        raise StressKitError(
            "resume refused: output directory belongs to a different job configuration"
        )
    state.data["fingerprint"] = fingerprint
    if state.data["started_at"] is None:
        state.data["started_at"] = _now()
    if info is not None:
        state.data["scorer_identity"] = info.identity
    try:
        matrix = _obtain_scores(job, client, info, None, state)
    except (ProtocolError, StressKitError):
        state.save()  # partial-progress record for post-mortem / resume
        raise
    if job.thresholds_path is not None:
        frozen = json.loads(Path(job.thresholds_path).read_text(encoding="utf-8"))
        thresholds = ThresholdVector.from_dict(frozen["thresholds"] if "thresholds" in frozen else frozen)
        if thresholds.class_names != ds.class_names:
            raise StressKitError("imported thresholds cover different classes")
    else:
        thresholds = select_thresholds(matrix.values, ds, job.threshold_policy)
    state.data["thresholds"] = thresholds.to_dict()
    state.mark_completed(CLEAN_TAG)
    rows = stratified_eval(
        matrix.values, ds, partition, thresholds, job.ece_bins, kind=CLEAN_TAG, level=0
    )
    return CleanRun(matrix=matrix, thresholds=thresholds, rows=rows, partition=partition)


def run_stress(job: StressJob, client=None) -> ResultTable:
    """Full sweep: clean baseline plus every suite spec, one score pass each.

    A spec whose scoring keeps failing after the configured retries is
    recorded as a failed pass: its grid cells are emitted as undefined
    rather than aborting the sweep.
    """
    clean = run_clean(job, client)
    ds = job.dataset
    state = _State.load(job.state_path)
    info = client.info if client is not None else None
    rows = list(clean.rows)
    failed: dict[str, str] = {}
    for spec in job.suite:
        matrix = None
        last_error = ""
        for attempt in range(1 + job.spec_retries):
            try:
                matrix = _obtain_scores(job, client, info, spec, state)
                break
            except (ProtocolError, StressKitError) as e:
                last_error = str(e)
                log.warning("pass %s attempt %d failed: %s", spec.tag, attempt + 1, e)
        if matrix is None:
            failed[spec.tag] = last_error
            state.mark_failed(spec.tag, last_error)
            for cls in ds.class_names:
                for group in clean.partition.groups:
                    for metric in METRIC_NAMES:
                        rows.append(
                            MetricResult(
                                dataset=ds.name,
                                class_name=cls,
                                subgroup=group,
                                kind=spec.kind.value,
                                level=spec.level,
                                metric=metric,
                                value=None,
                                n=0,
                            )
                        )
            continue
        state.mark_completed(spec.tag)
        rows.extend(
            stratified_eval(
                matrix.values,
                ds,
                clean.partition,
                clean.thresholds,
                job.ece_bins,
                kind=spec.kind.value,
                level=spec.level,
            )
        )
    state.data["finished_at"] = _now()
    state.save()
    meta = {
        "fingerprint": job_fingerprint(job),
        "dataset": ds.name,
        "n_samples": len(ds.samples),
        "classes": list(ds.class_names),
        "subgroups": list(clean.partition.groups.keys()),
        "subgroup_excluded_unknown": clean.partition.excluded_unknown,
        "suite": [{"kind": sp.kind.value, "level": sp.level, "parameter": sp.parameter} for sp in job.suite],
        "threshold_policy": job.threshold_policy,
        "thresholds": clean.thresholds.to_dict(),
        "ece_bins": job.ece_bins,
        "scorer_identity": state.data.get("scorer_identity"),
        "failed_specs": failed,
        "metrics": list(METRIC_NAMES),
    }
    expected = expected_row_count(len(job.suite), len(ds.class_names), len(clean.partition.groups))
    if len(rows) != expected:
        raise StressKitError(f"result grid incomplete: {len(rows)} rows, expected {expected}")
    return ResultTable(rows=rows, meta=meta)


def expected_row_count(n_specs: int, n_classes: int, n_groups: int) -> int:
    return (1 + n_specs) * n_classes * n_groups * len(METRIC_NAMES)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass(frozen=True)
class TrendSummary:
    """Metric values for one (class, subgroup, kind, direction), by severity."""

    dataset: str
    class_name: str
    subgroup: str
    kind: str
    sign: int
    metric: str
    levels: tuple[int, ...]
    values: tuple[float | None, ...]
    clean_value: float | None
    monotone: bool
    max_drop: float | None


def summarize_monotonic(rt: ResultTable, metric: str, tolerance: float = MONOTONE_TOLERANCE) -> list[TrendSummary]:
    """Order each trend by |level| and flag monotone degradation.

    Metrics where higher is better must be non-increasing within the
    tolerance; FPR and ECE must be non-decreasing. Undefined cells are
    skipped in the comparison. max_drop measures the worst excursion from
    the clean value in the degrading direction.
    """
    if metric not in METRIC_NAMES:
        raise StressKitError(f"unknown metric {metric!r}")
    higher_better = metric in HIGHER_BETTER
    clean: dict[tuple, float | None] = {}
    cells: dict[tuple, dict[int, float | None]] = {}
    for r in rt.rows:
        if r.metric != metric:
            continue
        if r.kind == CLEAN_TAG:
            clean[(r.dataset, r.class_name, r.subgroup)] = r.value
            continue
        sign = 1 if r.level > 0 else -1
        key = (r.dataset, r.class_name, r.subgroup, r.kind, sign)
        cells.setdefault(key, {})[abs(r.level)] = r.value
    out: list[TrendSummary] = []
    for key in sorted(cells.keys()):
        dataset, cls, group, kind, sign = key
        by_mag = cells[key]
        mags = tuple(sorted(by_mag.keys()))
        values = tuple(by_mag[m] for m in mags)
        defined = [v for v in values if v is not None]
        monotone = True
        for prev, nxt in zip(defined, defined[1:]):
            if higher_better and nxt > prev + tolerance:
                monotone = False
                break
            if not higher_better and nxt < prev - tolerance:
                monotone = False
                break
        clean_value = clean.get((dataset, cls, group))
        if clean_value is None or not defined:
            max_drop = None
        elif higher_better:
            max_drop = clean_value - min(defined)
        else:
            max_drop = max(defined) - clean_value
        out.append(
            TrendSummary(
                dataset=dataset,
                class_name=cls,
                subgroup=group,
                kind=kind,
                sign=sign,
                metric=metric,
                levels=tuple(sign * m for m in mags),
                values=values,
                clean_value=clean_value,
                monotone=monotone,
                max_drop=max_drop,
            )
        )
    return out


@dataclass(frozen=True)
class CellDiff:
    dataset: str
    class_name: str
    subgroup: str
    kind: str
    level: int
    metric: str
    value_a: float | None
    value_b: float | None
    diff: float | None


@dataclass(frozen=True)
class StabilityRow:
    """Worst absolute deviation from the clean value across levels, per run."""

    dataset: str
    class_name: str
    subgroup: str
    kind: str
    metric: str
    stability_a: float | None
    stability_b: float | None


@dataclass
class RunComparison:
    cells: list[CellDiff]
    stability: list[StabilityRow]


def _row_key(r: MetricResult) -> tuple:
    return (r.dataset, r.class_name, r.subgroup, r.kind, r.level, r.metric)


def compare_runs(rt_a: ResultTable, rt_b: ResultTable) -> RunComparison:
    """Cell-by-cell diff of two runs over the same evaluation grid."""
    a = {_row_key(r): r.value for r in rt_a.rows}
    b = {_row_key(r): r.value for r in rt_b.rows}
    if set(a) != set(b):
        only_a = sorted(set(a) - set(b))[:5]
        only_b = sorted(set(b) - set(a))[:5]
        detail = []
        for name in ("dataset", "classes", "subgroups", "suite"):
            va, vb = rt_a.meta.get(name), rt_b.meta.get(name)
            if va != vb:
                detail.append(f"{name}: {va!r} vs {vb!r}")
        raise GridMismatchError(
            "result grids do not match; "
            + (f"config differs on {'; '.join(detail)}; " if detail else "")
            + f"cells only in a: {only_a}; cells only in b: {only_b}"
        )
    cells = []
    for key in sorted(a.keys()):
        va, vb = a[key], b[key]
        diff = None if va is None or vb is None else vb - va
        cells.append(CellDiff(*key, value_a=va, value_b=vb, diff=diff))

    def stability(values: dict[tuple, float | None]) -> dict[tuple, float | None]:
        worst: dict[tuple, float | None] = {}
        for (dataset, cls, group, kind, level, metric), v in values.items():
            if kind == CLEAN_TAG:
                continue
            clean_v = values.get((dataset, cls, group, CLEAN_TAG, 0, metric))
            key = (dataset, cls, group, kind, metric)
            worst.setdefault(key, None)
            if v is None or clean_v is None:
                continue
            dev = abs(v - clean_v)
            if worst[key] is None or dev > worst[key]:
                worst[key] = dev
        return worst

    sa, sb = stability(a), stability(b)
    rows = [
        StabilityRow(*key, stability_a=sa[key], stability_b=sb[key])
        for key in sorted(sa.keys())
    ]
    return RunComparison(cells=cells, stability=rows)
