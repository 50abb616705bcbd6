import csv
import io
import re
from pathlib import Path
from xml.etree import ElementTree

import numpy as np
import pytest

from eqodds import report
from eqodds.report import (MAX_REGIONS, ExperimentSpec, UnknownPipelineError, render_lines,
                           render_regions, rows_to_csv, run_experiment)
from eqodds.rocgeom import UNIT_SQUARE, ConvexRegion

GOLDEN = Path(__file__).parent / "golden"
SVG_NS = "{http://www.w3.org/2000/svg}"


def _paths(svg):
    return ElementTree.fromstring(svg).findall(f"{SVG_NS}path")


def _overlap_pair():
    return [ConvexRegion([(0, 0), (0.6, 0.2), (0.6, 0.8)]),
            ConvexRegion([(0.3, 0.1), (1, 0.5), (0.3, 0.9)])]


class TestRenderRegions:
    def test_empty_is_axes_only(self):
        svg = render_regions([])
        assert _paths(svg) == []
        assert "false positive rate" in svg and "true positive rate" in svg
        assert svg == (GOLDEN / "empty.svg").read_text()

    def test_unit_square_covers_plot_area(self):
        svg = render_regions([UNIT_SQUARE], ["all rates"])
        (path,) = _paths(svg)
        coords = [tuple(map(float, m)) for m in re.findall(r"([\d.]+)[ ,]([\d.]+)", path.get("d"))]
        xs, ys = zip(*coords)
        # plot area is the 300 px square with its lower-left corner at (50, 330)
        assert (min(xs), max(xs), min(ys), max(ys)) == (50, 350, 30, 330)
        assert svg == (GOLDEN / "unit_square.svg").read_text()

    def test_overlap_is_translucent_and_stable(self):
        regions = _overlap_pair()
        svg = render_regions(regions, ["first", "second"], "overlap")
        paths = _paths(svg)
        assert len(paths) == 2
        assert all(float(p.get("fill-opacity")) < 1 for p in paths)
        assert paths[0].get("fill") != paths[1].get("fill")
        assert svg == render_regions(_overlap_pair(), ["first", "second"], "overlap")
        assert svg == (GOLDEN / "overlap.svg").read_text()

    def test_default_labels_and_escaping(self):
        svg = render_regions([UNIT_SQUARE, UNIT_SQUARE], ["a<b"])
        assert "a&lt;b" in svg and "region 2" in svg
        ElementTree.fromstring(svg)

    def test_too_many_regions(self):
        with pytest.raises(ValueError):
            render_regions([UNIT_SQUARE] * (MAX_REGIONS + 1))

    def test_empty_region_draws_no_path(self):
        assert _paths(render_regions([ConvexRegion([])])) == []


class TestRenderLines:
    def test_valid_and_deterministic(self):
        series = {"deterministic": [(1, 0.2), (10, 0.1)], "stochastic": [(1, 0.3), (10, 0.05)]}
        svg = render_lines(series, "lambda", "kmcd", log_x=True)
        root = ElementTree.fromstring(svg)
        assert len(root.findall(f"{SVG_NS}polyline")) == 2
        assert svg == render_lines(series, "lambda", "kmcd", log_x=True)

    def test_no_points(self):
        ElementTree.fromstring(render_lines({}, "x", "y"))


class TestCsv:
    def test_floats_round_trip(self):
        rows = [{"model": "base", "mse": 0.1 + 0.2}, {"model": "x", "mse": np.float64(1 / 3),
                                                       "extra": 1}]
        text = rows_to_csv(rows)
        back = list(csv.DictReader(io.StringIO(text)))
        assert float(back[0]["mse"]) == 0.1 + 0.2
        assert float(back[1]["mse"]) == 1 / 3
        assert list(back[0]) == ["model", "mse", "extra"]

    def test_empty(self):
        assert rows_to_csv([]) == ""


class TestExperimentSpec:
    def test_unknown_pipeline_lists_names(self):
        with pytest.raises(UnknownPipelineError) as info:
            ExperimentSpec("table9")
        assert all(name in str(info.value) for name in report.PIPELINES)

    def test_needs_a_seed(self):
        with pytest.raises(ValueError):
            ExperimentSpec("table1", seeds=())

    def test_unknown_override(self):
        with pytest.raises(ValueError, match="grid"):
            ExperimentSpec("thm6-equiv", overrides={"gird": "11"})

    def test_overrides_are_typed_and_hashed(self):
        base = ExperimentSpec("table1")
        changed = ExperimentSpec("table1", overrides={"n": "200"})
        assert changed.params()["n"] == 200
        assert base.config_hash() != changed.config_hash()
        assert base.config_hash() == ExperimentSpec("table1", seeds=(4, 5)).config_hash()


class TestRunExperiment:
    def test_thm6_pipeline(self):
        bundle = run_experiment(ExperimentSpec("thm6-equiv", (0, 1), {"grid": "21"}))
        assert bundle.ok
        summary = list(csv.DictReader(io.StringIO(bundle.artifacts["summary.csv"].decode())))
        assert summary[0]["status"] == "PASS"
        assert float(summary[0]["max_hausdorff"]) <= float(summary[0]["threshold"])
        assert {"equivalence-seed0.svg", "equivalence-seed1.svg", "runs.csv"} <= set(bundle.artifacts)

    def test_manifest_reproducible(self):
        spec = ExperimentSpec("table1", (0, 1), {"n": "200", "n_test": "500"})
        first, second = run_experiment(spec), run_experiment(spec)
        assert first.artifacts == second.artifacts
        manifest = first.artifacts["MANIFEST"].decode()
        assert f"config_hash: {spec.config_hash()}" in manifest
        assert "seeds: 0,1" in manifest and "status: complete" in manifest
        assert len(re.findall(r"^sha256 [0-9a-f]{64}  ", manifest, re.M)) == 2

    def test_table2_summary_columns(self):
        spec = ExperimentSpec("table2", (0,), {"n_train": "64", "n_test": "64", "epochs": "1",
                                               "perms": "19"})
        bundle = run_experiment(spec)
        assert bundle.ok
        summary = list(csv.DictReader(io.StringIO(bundle.artifacts["summary.csv"].decode())))
        assert [r["model"] for r in summary] == ["base", "deterministic", "stochastic"]
        assert all(r["p_gt_0.05"].endswith("out of 1") for r in summary)

    def test_failing_seed_keeps_partial_outputs(self, monkeypatch):
        run, summarize = report._RUNNERS["corollary6"]

        def flaky(params, seed):
            if seed == 1:
                raise RuntimeError("boom")
            return run(params, seed)

        monkeypatch.setitem(report._RUNNERS, "corollary6", (flaky, summarize))
        bundle = run_experiment(ExperimentSpec("corollary6", (0, 1),
                                               {"n": "200", "perms": "19"}))
        assert not bundle.ok
        assert "runs.csv" in bundle.artifacts
        manifest = bundle.artifacts["MANIFEST"].decode()
        assert "status: failed" in manifest and "seed 1: RuntimeError: boom" in manifest
