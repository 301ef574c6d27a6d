import json
import math
from fractions import Fraction
from math import comb

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smoothaw.errors import InvalidInputError, ResourceCapError
from smoothaw.experiments import (
    NONCONV_MAX_N,
    ExperimentConfig,
    RateReport,
    RateRow,
    emit_report,
    fit_loglog_slope,
    gaussian_ar_tree,
    load_rows_csv,
    run_nonconvergence_experiment,
    run_rate_experiment,
    run_sharpness_experiment,
    sharpness_value,
)
from smoothaw.measure import DiscreteMeasure, Sampler

TWO_POINT = DiscreteMeasure(np.array([[0.0, 1.0], [0.0, -1.0]]))


def small_cfg(**kw):
    base = dict(sampler=Sampler("finite", {"measure": TWO_POINT}), n_grid=(16, 32, 64), reps=3, mc_samples=8, quad=32, seed=3)
    base.update(kw)
    return ExperimentConfig(**base)


def sharpness_bruteforce(n):
    """``E|Z_n - 1/2|`` by direct summation with fresh binomials."""
    return sum(Fraction(comb(n, k), 2**n) * abs(Fraction(k, n) - Fraction(1, 2)) for k in range(n + 1))


class TestSlopeFit:
    def test_exact_power_law(self):
        ns = [64, 128, 256, 512, 1024]
        assert abs(fit_loglog_slope([(n, n**-0.5) for n in ns]).slope + 0.5) <= 1e-12

    def test_constant(self):
        fit = fit_loglog_slope([(n, 3.7) for n in (10, 20, 40, 80)])
        assert abs(fit.slope) <= 1e-12
        assert fit.ci[0] <= 0 <= fit.ci[1]

    def test_two_points_open_interval(self):
        fit = fit_loglog_slope([(10, 1.0), (100, 0.1)])
        assert fit.slope == pytest.approx(-1.0, abs=1e-12)
        assert fit.ci == (-math.inf, math.inf)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_matches_polyfit_and_sandwich(self, seed):
        rng = np.random.default_rng(seed)
        ns = np.unique(rng.integers(5, 5000, size=6))
        if ns.size < 3:
            return
        rows = [RateRow(int(n), r, float(rng.uniform(0.1, 2))) for n in ns for r in range(3)]
        fit = fit_loglog_slope(rows)
        y = np.log([np.mean([r.estimate for r in rows if r.n == n]) for n in ns])
        X = np.column_stack([np.ones(ns.size), np.log(ns)])
        beta = np.polyfit(np.log(ns), y, 1)
        assert abs(fit.slope - beta[0]) <= 1e-12
        e = y - X @ beta[::-1]
        bread = np.linalg.inv(X.T @ X)
        cov = bread @ X.T @ np.diag(e**2) @ X @ bread * ns.size / (ns.size - 2)
        assert fit.se == pytest.approx(math.sqrt(cov[1, 1]), rel=1e-8)

    def test_noisy_power_law_unbiased(self):
        rng = np.random.default_rng(0)
        ns = np.array([64, 128, 256, 512, 1024, 2048, 4096])
        slopes = []
        for _ in range(200):
            rows = [(n, r, 2.0 * n**-0.5 * math.exp(rng.normal(0, 0.2))) for n in ns for r in range(20)]
            slopes.append(fit_loglog_slope(rows).slope)
        assert abs(np.mean(slopes) + 0.5) <= 0.02

    def test_ci_covers_truth(self):
        rng = np.random.default_rng(1)
        ns = [64, 128, 256, 512, 1024, 2048, 4096]
        hits = 0
        for _ in range(200):
            rows = [(n, 0, n**-0.5 * math.exp(rng.normal(0, 0.1))) for n in ns]
            lo, hi = fit_loglog_slope(rows).ci
            hits += lo <= -0.5 <= hi
        assert hits >= 150

    def test_series_filter(self):
        rows = [RateRow(n, 0, n**-1.0, series="a") for n in (10, 100)] + [RateRow(n, 0, 1.0, series="b") for n in (10, 100)]
        assert fit_loglog_slope(rows, "a").slope == pytest.approx(-1.0, abs=1e-12)
        assert fit_loglog_slope(rows, "b").slope == pytest.approx(0.0, abs=1e-12)

    @pytest.mark.parametrize("rows", [[(10, 1.0)], [(10, 1.0), (20, 0.0)], [(10, 1.0), (20, -1.0)]])
    def test_errors(self, rows):
        with pytest.raises(InvalidInputError):
            fit_loglog_slope(rows)


class TestConfig:
    @pytest.mark.parametrize(
        "kw",
        [dict(n_grid=(64,)), dict(n_grid=(64, 32)), dict(n_grid=(0, 4)), dict(reps=2), dict(sigma=0.0), dict(p=0.5), dict(reference="x")],
    )
    def test_invalid(self, kw):
        with pytest.raises(InvalidInputError):
            small_cfg(**kw)

    def test_unknown_key(self):
        with pytest.raises(InvalidInputError):
            ExperimentConfig.from_dict({"reps": 5, "colour": "red"})

    def test_json_round_trip(self, tmp_path):
        cfg = small_cfg()
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(cfg.to_dict()), encoding="utf-8")
        back = ExperimentConfig.from_json(path)
        assert back.to_dict() == cfg.to_dict()
        assert np.array_equal(back.sampler.params["measure"].paths, TWO_POINT.paths)

    def test_bad_json(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text("{not json", encoding="utf-8")
        with pytest.raises(InvalidInputError):
            ExperimentConfig.from_json(path)
        path.write_text("[1, 2]", encoding="utf-8")
        with pytest.raises(InvalidInputError):
            ExperimentConfig.from_json(path)


class TestRateExperiment:
    def test_rows_and_fit(self):
        rep = run_rate_experiment(small_cfg())
        assert len(rep.rows) == 9 and not rep.degenerate
        assert {r.n for r in rep.rows} == {16, 32, 64}
        assert all(r.estimate >= 0 and r.prefactor == 1.0 for r in rep.rows)
        assert rep.slope < 0
        assert rep.metadata["config"]["seed"] == 3 and "numpy" in rep.metadata["versions"]

    def test_degenerate_when_target_replaces_sample(self):
        rep = run_rate_experiment(small_cfg(replace_with_target=True))
        assert all(r.estimate == 0.0 for r in rep.rows)
        assert rep.degenerate and rep.fit is None and math.isnan(rep.slope)

    def test_needs_finite_sampler(self):
        with pytest.raises(InvalidInputError):
            run_rate_experiment(small_cfg(sampler=Sampler("gaussian_ar", {"T": 2})))

    def test_byte_identical_runs(self, tmp_path):
        a = emit_report(run_rate_experiment(small_cfg()), ("csv",), tmp_path / "a")
        b = emit_report(run_rate_experiment(small_cfg()), ("csv",), tmp_path / "b")
        c = emit_report(run_rate_experiment(small_cfg(), workers=2), ("csv",), tmp_path / "c")
        data = [open(p["csv"], "rb").read() for p in (a, b, c)]
        assert data[0] == data[1] == data[2]

    def test_seed_changes_rows(self):
        a = run_rate_experiment(small_cfg())
        b = run_rate_experiment(small_cfg(seed=4))
        assert [r.estimate for r in a.rows] != [r.estimate for r in b.rows]


class TestSharpness:
    def test_small_values(self):
        assert sharpness_value(1) == Fraction(1, 2)
        assert sharpness_value(2) == Fraction(1, 4)
        assert sharpness_value(4) == Fraction(3, 16)

    @pytest.mark.parametrize("n", [3, 5, 16, 33, 100])
    def test_matches_bruteforce(self, n):
        assert sharpness_value(n) == sharpness_bruteforce(n)

    def test_asymptotic(self):
        # E|Z_n - 1/2| ~ 1 / sqrt(2 pi n)
        n = 4096
        assert float(sharpness_value(n)) * math.sqrt(2 * math.pi * n) == pytest.approx(1.0, rel=1e-3)

    def test_slope(self):
        rep = run_sharpness_experiment([2**k for k in range(4, 15)])
        assert -0.55 <= rep.slope <= -0.45
        assert len(rep.rows) == 11

    def test_invalid(self):
        with pytest.raises(InvalidInputError):
            sharpness_value(0)


class TestNonconvergence:
    def test_tree_reference_shape(self):
        tree = gaussian_ar_tree(2, k=8)
        assert tree.n == 64 and tree.T == 2
        assert len(np.unique(tree.paths[:, 0, 0])) == 8
        assert abs(math.fsum(tree.weights) - 1) <= 1e-12

    def test_runs_two_series(self):
        cfg = small_cfg(sampler=Sampler("gaussian_ar", {"T": 2}), n_grid=(16, 32), mc_samples=2)
        rep = run_nonconvergence_experiment(cfg)
        assert {r.series for r in rep.rows} == {"aw", "w"}
        assert all(r.estimate > 0 for r in rep.rows)
        # AW between Dirac-kernel empirical measures dominates W
        for a, w in zip(rep.series("aw"), rep.series("w")):
            assert a.estimate >= w.estimate - 1e-9

    def test_tree_reference_stays_away(self):
        cfg = small_cfg(sampler=Sampler("gaussian_ar", {"T": 2}), n_grid=(64, 512), reference="tree", tree_k=16)
        rep = run_nonconvergence_experiment(cfg)
        med = rep.medians("aw")
        assert med[512] >= 0.7 * med[64]

    def test_cap(self):
        cfg = small_cfg(sampler=Sampler("gaussian_ar", {"T": 2}), n_grid=(16, 2 * NONCONV_MAX_N))
        with pytest.raises(ResourceCapError):
            run_nonconvergence_experiment(cfg)


class TestEmission:
    def test_csv_round_trip_slope(self, tmp_path):
        rep = run_rate_experiment(small_cfg())
        paths = emit_report(rep, ("csv", "json"), tmp_path)
        rows = load_rows_csv(paths["csv"])
        assert rows == rep.rows
        assert abs(fit_loglog_slope(rows).slope - rep.slope) <= 1e-12
        doc = json.loads(open(paths["json"], encoding="utf-8").read())
        assert doc["slope"] == rep.slope and doc["degenerate"] is False

    def test_json_two_point_ci_is_null(self, tmp_path):
        rep = RateReport("two", [RateRow(10, 0, 1.0), RateRow(100, 0, 0.1)])
        rep.fit = fit_loglog_slope(rep.rows)
        doc = json.loads(open(emit_report(rep, ("json",), tmp_path)["json"], encoding="utf-8").read())
        assert doc["slope_ci"] == [None, None]

    def test_svg_structure(self, tmp_path):
        rep = run_sharpness_experiment([16, 64, 256, 1024])
        text = open(emit_report(rep, ("svg",), tmp_path)["svg"], encoding="utf-8").read()
        assert text.startswith("<svg") and text.rstrip().endswith("</svg>")
        assert text.count('class="fit"') == 1
        assert text.count('class="point"') == 4

    def test_empty_and_bad_format(self, tmp_path):
        with pytest.raises(InvalidInputError):
            emit_report(RateReport("empty", []), ("csv",), tmp_path)
        rep = run_sharpness_experiment([16, 64])
        with pytest.raises(InvalidInputError):
            emit_report(rep, ("pdf",), tmp_path)

    def test_degenerate_svg_rejected(self, tmp_path):
        rep = run_rate_experiment(small_cfg(replace_with_target=True))
        with pytest.raises(InvalidInputError):
            emit_report(rep, ("svg",), tmp_path)
        doc = json.loads(open(emit_report(rep, ("json",), tmp_path)["json"], encoding="utf-8").read())
        assert doc["degenerate"] is True and doc["slope"] is None
