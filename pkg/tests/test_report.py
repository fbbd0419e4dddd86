from __future__ import annotations

import pytest

from stresskit.harness import CLEAN_TAG, ResultTable, expected_row_count
from stresskit.metrics import METRIC_NAMES, MetricResult
from stresskit.report import (
    DISPARITY_CSV,
    disparity_table,
    emit_plots,
    read_results,
    write_disparity,
    write_results,
)


def grid_table(values=None, subgroups=("S1", "S2"), kinds=("gamma", "blur")):
    """Complete small grid: clean plus two levels per kind."""
    rows = []
    values = values or {}
    for cls in ("k0",):
        for group in ("All", *subgroups):
            for kind in (CLEAN_TAG, *kinds):
                levels = (0,) if kind == CLEAN_TAG else (1, 2)
                for level in levels:
                    for metric in METRIC_NAMES:
                        v = values.get((cls, group, kind, level, metric), 0.75)
                        rows.append(
                            MetricResult("dev", cls, group, kind, level, metric, v, 12)
                        )
    return ResultTable(rows=rows, meta={"dataset": "dev", "classes": ["k0"]})


class TestWriteResults:
    def test_round_trip(self, tmp_path):
        rt = grid_table(values={("k0", "S1", "blur", 2, "ECE"): 0.1234567890123})
        write_results(rt, tmp_path)
        again = read_results(tmp_path)
        assert sorted(again.rows, key=str) == sorted(rt.rows, key=str)

    def test_undefined_cell_written_as_na(self, tmp_path):
        rt = grid_table(values={("k0", "S2", "gamma", 1, "AUC"): None})
        paths = write_results(rt, tmp_path)
        text = paths["results"].read_text()
        assert ",NA," in text
        again = read_results(tmp_path)
        assert any(r.value is None for r in again.rows)

    def test_row_count_matches_grid_formula(self, tmp_path):
        rt = grid_table()
        paths = write_results(rt, tmp_path)
        lines = paths["results"].read_text().strip().splitlines()
        assert len(lines) - 1 == expected_row_count(n_specs=4, n_classes=1, n_groups=3)

    def test_byte_deterministic(self, tmp_path):
        rt = grid_table()
        a = write_results(rt, tmp_path / "a")
        b = write_results(rt, tmp_path / "b")
        assert a["results"].read_bytes() == b["results"].read_bytes()
        assert a["metadata"].read_bytes() == b["metadata"].read_bytes()


class TestDisparity:
    def test_published_style_grid_gap(self, tmp_path):
        # five subgroup AUC values, one cell
        vals = {"White": 0.87, "Asian": 0.88, "Black": 0.88, "Female": 0.87, "Male": 0.87}
        rows = [
            MetricResult("dev", "k0", g, CLEAN_TAG, 0, "AUC", v, 20) for g, v in vals.items()
        ]
        rows.append(MetricResult("dev", "k0", "All", CLEAN_TAG, 0, "AUC", 0.87, 100))
        table = disparity_table(ResultTable(rows=rows, meta={}))
        (row,) = table
        assert row.gap == pytest.approx(0.01)
        assert row.worst == "Female"  # ties on 0.87 break lexicographically
        assert "All" not in row.values

    def test_equal_subgroups_zero_gap(self):
        rows = [MetricResult("dev", "k0", g, CLEAN_TAG, 0, "F1", 0.5, 5) for g in ("A", "B")]
        (row,) = disparity_table(ResultTable(rows=rows, meta={}))
        assert row.gap == 0.0

    def test_undefined_subgroup_listed_not_counted(self):
        rows = [
            MetricResult("dev", "k0", "A", CLEAN_TAG, 0, "AUC", 0.9, 5),
            MetricResult("dev", "k0", "B", CLEAN_TAG, 0, "AUC", None, 0),
            MetricResult("dev", "k0", "C", CLEAN_TAG, 0, "AUC", 0.8, 5),
        ]
        (row,) = disparity_table(ResultTable(rows=rows, meta={}))
        assert row.gap == pytest.approx(0.1)
        assert row.undefined == ("B",)

    def test_lower_better_metrics_pick_highest_as_worst(self):
        rows = [
            MetricResult("dev", "k0", "A", CLEAN_TAG, 0, "FPR", 0.05, 5),
            MetricResult("dev", "k0", "B", CLEAN_TAG, 0, "FPR", 0.30, 5),
        ]
        (row,) = disparity_table(ResultTable(rows=rows, meta={}))
        assert row.worst == "B"

    def test_permutation_invariance(self):
        rows = [
            MetricResult("dev", "k0", g, CLEAN_TAG, 0, "AUC", v, 5)
            for g, v in (("A", 0.7), ("B", 0.9), ("C", 0.8))
        ]
        fwd = disparity_table(ResultTable(rows=rows, meta={}))
        rev = disparity_table(ResultTable(rows=list(reversed(rows)), meta={}))
        assert fwd == rev

    def test_disparity_csv_written(self, tmp_path):
        rt = grid_table()
        path = write_disparity(disparity_table(rt), tmp_path)
        assert path.name == DISPARITY_CSV
        header = path.read_text().splitlines()[0]
        assert header.startswith("dataset,class,metric,kind,level,")


class TestPlots:
    def test_one_chart_per_class_kind(self, tmp_path):
        rt = grid_table()
        paths = emit_plots(rt, "AUC", tmp_path)
        assert len(paths) == 2  # one class x two kinds
        names = {p.name for p in paths}
        assert names == {"dev__k0__AUC__gamma.svg", "dev__k0__AUC__blur.svg"}

    def test_x_domain_covers_signed_levels_with_clean_at_zero(self, tmp_path):
        rows = []
        for level in (-3, -2, -1, 1, 2, 3):
            rows.append(MetricResult("dev", "k0", "All", "gamma", level, "AUC", 0.8, 5))
        rows.append(MetricResult("dev", "k0", "All", CLEAN_TAG, 0, "AUC", 0.9, 5))
        paths = emit_plots(ResultTable(rows=rows, meta={}), "AUC", tmp_path)
        svg = paths[0].read_text()
        for tick in ("-3", "-2", "-1", ">0<", "+1", "+2", "+3"):
            assert tick in svg

    def test_byte_identical_across_runs(self, tmp_path):
        rt = grid_table()
        a = emit_plots(rt, "F1", tmp_path / "a")
        b = emit_plots(rt, "F1", tmp_path / "b")
        for pa, pb in zip(a, b):
            assert pa.read_bytes() == pb.read_bytes()

    def test_flat_run_draws_horizontal_lines(self, tmp_path):
        rt = grid_table()  # every value 0.75
        (path, _) = emit_plots(rt, "TPR", tmp_path)
        svg = path.read_text()
        polylines = [l for l in svg.splitlines() if l.startswith("<polyline")]
        assert len(polylines) == 3  # All + two subgroups
        for line in polylines:
            pts = line.split('points="')[1].split('"')[0].split()
            ys = {p.split(",")[1] for p in pts}
            assert len(ys) == 1
