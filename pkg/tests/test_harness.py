from __future__ import annotations

import hashlib
import json

import numpy as np
import pytest

from stresskit.config import SubgroupDef
from stresskit.errors import GridMismatchError, HandshakeError, ScorerJobError
from stresskit.harness import (
    CLEAN_TAG,
    StressJob,
    compare_runs,
    expected_row_count,
    run_clean,
    run_stress,
    summarize_monotonic,
)
from stresskit.metrics import METRIC_NAMES, MetricResult
from stresskit.harness import ResultTable
from stresskit.perturb import build_suite
from stresskit.scorer import ScorerInfo

from helpers import write_tiny_dataset


class FakeScorer:
    """In-process scorer: per-sample score from a keyed function of (id, pixels)."""

    def __init__(self, classes=("c0", "c1"), size=8, fn=None, fail_on_calls=()):
        self._info = ScorerInfo(
            class_names=tuple(classes),
            channels=1,
            height=size,
            width=size,
            identity="fake",
        )
        self.fn = fn or (lambda sid, pixels: [0.5] * len(classes))
        self.calls = 0
        self.fail_on_calls = set(fail_on_calls)

    @property
    def info(self):
        return self._info

    def handshake(self):
        return self._info

    def score_batch(self, images, ids):
        self.calls += 1
        if self.calls in self.fail_on_calls:
            raise ScorerJobError(f"synthetic failure on call {self.calls}")
        return np.asarray(
            [self.fn(sid, im.pixels) for sid, im in zip(ids, images)], dtype=np.float32
        )

    def close(self):
        pass


def id_keyed(classes=2):
    def fn(sid, pixels):
        h = int(hashlib.sha256(sid.encode()).hexdigest(), 16)
        return [((h >> (8 * c)) % 997) / 997.0 for c in range(classes)]

    return fn


def pixel_keyed(classes=2):
    def fn(sid, pixels):
        m = float(np.mean(pixels))
        return [min(1.0, max(0.0, m)) for _ in range(classes)]

    return fn


def make_job(tmp_path, ds, **kw):
    defaults = dict(
        dataset=ds,
        suite=build_suite(),
        subgroup_defs=(
            SubgroupDef(name="GA", attr="grp", equals="a"),
            SubgroupDef(name="GB", attr="grp", equals="b"),
        ),
        out_dir=tmp_path / "out",
        batch_size=32,
        workers=2,
    )
    defaults.update(kw)
    return StressJob(**defaults)


class TestRunClean:
    def test_constant_scorer_gives_half_auc(self, tmp_path):
        ds, _ = write_tiny_dataset(tmp_path)
        job = make_job(tmp_path, ds, threshold_policy="fixed")
        clean = run_clean(job, FakeScorer())
        aucs = [r for r in clean.rows if r.metric == "AUC" and r.subgroup == "All"]
        assert all(r.value == 0.5 for r in aucs)

    def test_separable_scores_give_auc_one(self, tmp_path):
        ds, _ = write_tiny_dataset(tmp_path)

        def fn(sid, pixels):
            i = int(sid[1:])
            return [0.8 if i % 2 else 0.2, 0.8 if (i + 1) % 2 else 0.2]

        clean = run_clean(job := make_job(tmp_path, ds), FakeScorer(fn=fn))
        aucs = [r for r in clean.rows if r.metric == "AUC" and r.subgroup == "All"]
        assert all(r.value == 1.0 for r in aucs)
        state = json.loads(job.state_path.read_text())
        assert state["completed"] == [CLEAN_TAG]
        assert (job.scores_cache_dir / "clean.csv").exists()

    def test_clean_rows_deterministic(self, tmp_path):
        ds, _ = write_tiny_dataset(tmp_path)
        a = run_clean(make_job(tmp_path, ds, out_dir=tmp_path / "o1"), FakeScorer(fn=id_keyed()))
        b = run_clean(make_job(tmp_path, ds, out_dir=tmp_path / "o2"), FakeScorer(fn=id_keyed()))
        assert a.rows == b.rows
        assert a.thresholds == b.thresholds

    def test_scorer_class_mismatch_aborts(self, tmp_path):
        ds, _ = write_tiny_dataset(tmp_path)
        with pytest.raises(HandshakeError):
            run_clean(make_job(tmp_path, ds), FakeScorer(classes=("c0",)))

    def test_imported_thresholds_are_used(self, tmp_path):
        ds, _ = write_tiny_dataset(tmp_path)
        frozen = {
            "thresholds": {
                "policy": "f1-optimal-on-clean",
                "per_class": {
                    "c0": {"threshold": 0.77, "fallback": False},
                    "c1": {"threshold": 0.11, "fallback": False},
                },
            }
        }
        tpath = tmp_path / "frozen.json"
        tpath.write_text(json.dumps(frozen))
        clean = run_clean(make_job(tmp_path, ds, thresholds_path=tpath), FakeScorer(fn=id_keyed()))
        assert clean.thresholds.thresholds == (0.77, 0.11)


class TestRunStress:
    def test_complete_grid(self, tmp_path):
        ds, _ = write_tiny_dataset(tmp_path)
        rt = run_stress(make_job(tmp_path, ds), FakeScorer(fn=pixel_keyed()))
        assert len(rt.rows) == expected_row_count(30, 2, 3)
        keys = {(r.class_name, r.subgroup, r.kind, r.level, r.metric) for r in rt.rows}
        assert len(keys) == len(rt.rows)  # exactly one row per cell
        assert rt.meta["failed_specs"] == {}

    def test_perturbation_insensitive_scorer_freezes_rows(self, tmp_path):
        ds, _ = write_tiny_dataset(tmp_path)
        rt = run_stress(make_job(tmp_path, ds), FakeScorer(fn=id_keyed()))
        clean_cells = {
            (r.class_name, r.subgroup, r.metric): r.value for r in rt.rows if r.kind == CLEAN_TAG
        }
        for r in rt.rows:
            if r.kind != CLEAN_TAG:
                assert r.value == clean_cells[(r.class_name, r.subgroup, r.metric)]

    def test_failed_spec_recorded_not_fatal(self, tmp_path):
        ds, _ = write_tiny_dataset(tmp_path)
        job = make_job(tmp_path, ds, spec_retries=1)
        # one score call per pass (batch 32 > n): calls 5 and 6 are the 4th
        # suite spec's first attempt and its retry
        scorer = FakeScorer(fn=pixel_keyed(), fail_on_calls=(5, 6))
        rt = run_stress(job, scorer)
        failed_tag = job.suite[3].tag
        assert list(rt.meta["failed_specs"]) == [failed_tag]
        failed_rows = [r for r in rt.rows if f"{r.kind}{r.level:+d}" == failed_tag]
        assert len(failed_rows) == 2 * 3 * len(METRIC_NAMES)
        assert all(r.value is None and r.n == 0 for r in failed_rows)
        assert len(rt.rows) == expected_row_count(30, 2, 3)
        state = json.loads(job.state_path.read_text())
        assert failed_tag in state["failed"]

    def test_retry_succeeds_within_budget(self, tmp_path):
        ds, _ = write_tiny_dataset(tmp_path)
        job = make_job(tmp_path, ds, spec_retries=1)
        rt = run_stress(job, FakeScorer(fn=pixel_keyed(), fail_on_calls=(5,)))
        assert rt.meta["failed_specs"] == {}

    def test_resume_completes_missing_specs_identically(self, tmp_path):
        ds, _ = write_tiny_dataset(tmp_path)
        job1 = make_job(tmp_path, ds, out_dir=tmp_path / "broken", spec_retries=0)
        rt1 = run_stress(job1, FakeScorer(fn=pixel_keyed(), fail_on_calls=(5,)))
        assert len(rt1.meta["failed_specs"]) == 1
        job2 = make_job(tmp_path, ds, out_dir=tmp_path / "broken", resume=True)
        rt2 = run_stress(job2, FakeScorer(fn=pixel_keyed()))
        assert rt2.meta["failed_specs"] == {}
        reference = run_stress(make_job(tmp_path, ds, out_dir=tmp_path / "ref"), FakeScorer(fn=pixel_keyed()))
        assert sorted(rt2.rows, key=str) == sorted(reference.rows, key=str)

    def test_resume_refused_for_different_config(self, tmp_path):
        ds, _ = write_tiny_dataset(tmp_path)
        run_stress(make_job(tmp_path, ds), FakeScorer(fn=pixel_keyed()))
        other = make_job(tmp_path, ds, resume=True, ece_bins=7)
        with pytest.raises(Exception, match="resume refused"):
            run_clean(other, FakeScorer(fn=pixel_keyed()))

    def test_batch_size_does_not_change_values(self, tmp_path):
        ds, _ = write_tiny_dataset(tmp_path)
        rt8 = run_stress(make_job(tmp_path, ds, out_dir=tmp_path / "b8", batch_size=2), FakeScorer(fn=pixel_keyed()))
        rt32 = run_stress(make_job(tmp_path, ds, out_dir=tmp_path / "b32", batch_size=32), FakeScorer(fn=pixel_keyed()))
        assert rt8.rows == rt32.rows

    def test_scores_dir_mode_reuses_cached_passes(self, tmp_path):
        ds, _ = write_tiny_dataset(tmp_path)
        first = make_job(tmp_path, ds, out_dir=tmp_path / "live")
        rt1 = run_stress(first, FakeScorer(fn=pixel_keyed()))
        offline = make_job(tmp_path, ds, out_dir=tmp_path / "offline", scores_dir=first.scores_cache_dir)
        rt2 = run_stress(offline, None)
        assert rt1.rows == rt2.rows

    def test_clean_rows_match_standalone_run_on_cached_scores(self, tmp_path):
        ds, _ = write_tiny_dataset(tmp_path)
        job = make_job(tmp_path, ds)
        rt = run_stress(job, FakeScorer(fn=pixel_keyed()))
        from stresskit.dataset import resolve_subgroups
        from stresskit.metrics import ThresholdVector, stratified_eval
        from stresskit.scorer import load_scores

        cached = load_scores(job.scores_cache_dir / "clean.csv")
        state = json.loads(job.state_path.read_text())
        thresholds = ThresholdVector.from_dict(state["thresholds"])
        partition = resolve_subgroups(job.subgroup_defs, ds)
        standalone = stratified_eval(cached.values, ds, partition, thresholds, job.ece_bins)
        level0 = [r for r in rt.rows if r.kind == CLEAN_TAG]
        assert sorted(level0, key=str) == sorted(standalone, key=str)

    def test_debug_flag_keeps_perturbed_images(self, tmp_path):
        ds, _ = write_tiny_dataset(tmp_path, n=2)
        from stresskit.perturb import SuiteConfig, PerturbationKind

        suite = build_suite(SuiteConfig(levels={
            PerturbationKind.GAMMA: (1,),
            PerturbationKind.CONTRAST: (1,),
            PerturbationKind.BRIGHTNESS: (1,),
            PerturbationKind.SHARPNESS: (1,),
            PerturbationKind.BLUR: (1,),
        }))
        job = make_job(tmp_path, ds, suite=suite, keep_images=True)
        run_stress(job, FakeScorer(fn=pixel_keyed()))
        kept = sorted(p.name for p in (job.out_dir / "debug_images" / "gamma+1").glob("*.png"))
        assert kept == ["x0.png", "x1.png"]


def trend_table(values_by_level, clean=0.9):
    """Build a minimal one-metric table for summarize_monotonic tests."""
    rows = [
        MetricResult("d", "c", "All", CLEAN_TAG, 0, "AUC", clean, 10),
    ]
    for level, v in values_by_level.items():
        rows.append(MetricResult("d", "c", "All", "gamma", level, "AUC", v, 10))
    return ResultTable(rows=rows, meta={})


class TestSummarizeMonotonic:
    def test_decreasing_sequence_flagged_monotone(self):
        rt = trend_table({1: 0.90, 2: 0.85, 3: 0.80})
        (t,) = summarize_monotonic(rt, "AUC")
        assert t.monotone and t.values == (0.90, 0.85, 0.80)
        assert t.max_drop == pytest.approx(0.9 - 0.80)

    def test_bump_rejected_at_zero_tolerance(self):
        rt = trend_table({1: 0.90, 2: 0.92, 3: 0.80})
        (t,) = summarize_monotonic(rt, "AUC", tolerance=0.0)
        assert not t.monotone

    def test_bump_within_tolerance_allowed(self):
        rt = trend_table({1: 0.90, 2: 0.904, 3: 0.80})
        (t,) = summarize_monotonic(rt, "AUC", tolerance=0.005)
        assert t.monotone

    def test_fpr_direction_flipped(self):
        rows = [
            MetricResult("d", "c", "All", CLEAN_TAG, 0, "FPR", 0.1, 10),
            MetricResult("d", "c", "All", "blur", 1, "FPR", 0.2, 10),
            MetricResult("d", "c", "All", "blur", 2, "FPR", 0.3, 10),
        ]
        (t,) = summarize_monotonic(ResultTable(rows=rows, meta={}), "FPR")
        assert t.monotone
        assert t.max_drop == pytest.approx(0.2)

    def test_signs_summarized_separately(self):
        rt = trend_table({-2: 0.7, -1: 0.8, 1: 0.85, 2: 0.75})
        trends = summarize_monotonic(rt, "AUC")
        assert {(t.sign, t.levels) for t in trends} == {(-1, (-1, -2)), (1, (1, 2))}
        assert all(t.monotone for t in trends)


class TestCompareRuns:
    def run_pair(self, tmp_path):
        ds, _ = write_tiny_dataset(tmp_path)
        stable = run_stress(make_job(tmp_path, ds, out_dir=tmp_path / "s"), FakeScorer(fn=id_keyed()))
        moving = run_stress(make_job(tmp_path, ds, out_dir=tmp_path / "m"), FakeScorer(fn=pixel_keyed()))
        return stable, moving

    def test_self_comparison_all_zero(self, tmp_path):
        ds, _ = write_tiny_dataset(tmp_path)
        rt = run_stress(make_job(tmp_path, ds), FakeScorer(fn=pixel_keyed()))
        cmp = compare_runs(rt, rt)
        assert all(c.diff == 0 for c in cmp.cells if c.diff is not None)
        assert all(
            s.stability_a == s.stability_b for s in cmp.stability
        )

    def test_stable_scorer_has_zero_stability(self, tmp_path):
        stable, moving = self.run_pair(tmp_path)
        cmp = compare_runs(stable, moving)
        auc_rows = [s for s in cmp.stability if s.metric == "AUC" and s.subgroup == "All"]
        assert auc_rows
        assert all(s.stability_a == 0.0 for s in auc_rows)
        assert any(s.stability_b > 0.0 for s in auc_rows)

    def test_grid_mismatch_rejected(self, tmp_path):
        ds, _ = write_tiny_dataset(tmp_path)
        full = run_stress(make_job(tmp_path, ds, out_dir=tmp_path / "f"), FakeScorer(fn=id_keyed()))
        from stresskit.perturb import SuiteConfig, PerturbationKind

        small_suite = build_suite(SuiteConfig(levels={PerturbationKind.BLUR: (1,)}))
        small = run_stress(
            make_job(tmp_path, ds, out_dir=tmp_path / "g", suite=small_suite),
            FakeScorer(fn=id_keyed()),
        )
        with pytest.raises(GridMismatchError):
            compare_runs(full, small)
