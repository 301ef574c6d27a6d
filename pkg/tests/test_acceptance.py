"""Acceptance suite: one test per numbered criterion, tolerances as contracted."""

import math
import time
from fractions import Fraction

import numpy as np
import pytest
from scipy import integrate

from conftest import random_measure
from smoothaw import constants as K
from smoothaw.adapted import aw_bruteforce_lp, aw_exact
from smoothaw.errors import ParameterError
from smoothaw.experiments import (
    ExperimentConfig,
    emit_report,
    run_nonconvergence_experiment,
    run_rate_experiment,
    run_sharpness_experiment,
    sharpness_value,
)
from smoothaw.measure import DiscreteMeasure, Sampler, information_pair, log_exp_moment, sample_empirical
from smoothaw.ot import CostSpec, wasserstein_1d_quantile, wasserstein_discrete
from smoothaw.smooth_aw import kernel_lipschitz_scan
from smoothaw.smoothing import SmoothedMeasure
from smoothaw.smpd import smpd_statistic, smpd_test

TWO_POINT = DiscreteMeasure(np.array([[0.0, 1.0], [0.0, -1.0]]))


def compact_base(rng, n, T, half_width=1.0):
    w = rng.uniform(0.1, 1, n)
    return DiscreteMeasure(rng.uniform(-half_width, half_width, size=(n, T, 1)), w / w.sum())


def fast_rate_config(**kw):
    return ExperimentConfig(
        name="fast",
        sampler=Sampler("finite", {"measure": TWO_POINT}),
        n_grid=(64, 128, 256, 512, 1024, 2048, 4096),
        reps=50,
        sigma=1.0,
        p=2.0,
        seed=0,
        **kw,
    )


@pytest.fixture(scope="module")
def fast_rate_serial():
    t0 = time.perf_counter()
    rep = run_rate_experiment(fast_rate_config(), workers=1)
    return rep, time.perf_counter() - t0


def test_criterion_01_dpp_matches_bruteforce_lp():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(50):
        T = int(rng.choice([2, 3]))
        mu = random_measure(rng, int(rng.integers(1, 5)), T)
        nu = random_measure(rng, int(rng.integers(1, 5)), T)
        p = float(rng.choice([1.5, 2.0]))
        worst = max(worst, abs(aw_exact(mu, nu, p, with_plan=False)[0] - aw_bruteforce_lp(mu, nu, p)))
    assert worst <= 1e-7
    assert time.perf_counter() - t0 < 60


def test_criterion_02_quantile_matches_lp():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(100):
        mu = random_measure(rng, int(rng.integers(1, 21)), 1)
        nu = random_measure(rng, int(rng.integers(1, 21)), 1)
        p = float(rng.uniform(1.0, 3.0))
        worst = max(worst, abs(wasserstein_1d_quantile(mu, nu, p) - wasserstein_discrete(mu, nu, CostSpec(p))[0]))
    assert worst <= 1e-8
    assert time.perf_counter() - t0 < 10


@pytest.mark.parametrize("eps", [0.1, 0.01])
def test_criterion_03_information_pair(eps):
    mu_eps, mu = information_pair(eps)
    assert abs(wasserstein_discrete(mu_eps, mu, CostSpec(1.0))[0] - eps) <= 1e-9
    assert abs(aw_exact(mu_eps, mu, 1.0)[0] - (1 + eps)) <= 1e-9


def test_criterion_04_exp_moment_and_product_integral():
    rng = np.random.default_rng(11)
    theta = 0.15
    for _ in range(10):
        base = random_measure(rng, int(rng.integers(1, 6)), 2)
        sm = SmoothedMeasure(base, float(rng.uniform(0.6, 1.2)))
        x = sm.sample(rng, 1_000_000)
        v = np.exp(theta * np.sum(x**2, axis=(1, 2)))
        se = v.std(ddof=1) / math.sqrt(v.size)
        assert abs(v.mean() - K.exp_moment_smoothed(sm, theta)) <= 3 * se
    for _ in range(10):
        a = float(rng.uniform(0.1, 2))
        b = a + float(rng.uniform(0.2, 2))
        x = rng.normal(size=2)
        ref = 1.0
        for xi in x:
            ref *= integrate.quad(lambda y: math.exp(a * y * y - b * (xi - y) ** 2), -np.inf, np.inf, epsrel=1e-12)[0]
        assert abs(K.gaussian_product_integral(a, b, x) - ref) <= 1e-6 * ref


def test_criterion_05_density_lower_bound():
    rng = np.random.default_rng(5)
    violations = 0
    p, beta = 2.0, 0.1
    eta = K.eta_for(p)
    for _ in range(10):
        base = compact_base(rng, 5, 3)
        sm = SmoothedMeasure(base, float(rng.uniform(0.5, 1.5)))
        q0 = 2 * (p - 1) * (1 / beta - K.conjugate(p))
        log_e = {t: log_exp_moment(base.marginal(t + 1), q0 / (2 * sm.sigma**2)) for t in (1, 2)}
        for _ in range(1000):
            t = int(rng.integers(1, 3))
            pt = rng.normal(scale=2, size=t + 1)
            violations += K.log_density_ratio(sm, pt, eta) < K.log_lower_bound(sm, pt, p, beta, log_e[t])
    assert violations == 0


def test_criterion_06_lipschitz_envelope():
    rng = np.random.default_rng(6)
    for _ in range(3):
        base = compact_base(rng, 4, 2)
        sm = SmoothedMeasure(base, 1.0)
        kc = K.kernel_constants(base, 1, 2.0, 1.0, 0.05)
        scans = [kernel_lipschitz_scan(sm, 1, 2.0, 3.0, 128, seed, quad=64) for seed in range(5)]
        Ds = [K.calibrate_poincare(sc.ratios, kc.log_envelope(sc.x, sc.y)) for sc in scans]
        assert max(Ds) / min(Ds) <= 2
        fitted = kc.with_D(max(Ds))
        for sc in scans:
            assert np.all(np.log(sc.ratios) <= fitted.log_envelope(sc.x, sc.y) + 1e-12)


def test_criterion_07_fast_rate_slope(fast_rate_serial):
    rep, elapsed = fast_rate_serial
    assert not rep.degenerate
    assert -0.65 <= rep.slope <= -0.35
    assert elapsed < 600


def test_criterion_08_sharpness():
    rep = run_sharpness_experiment([2**k for k in range(4, 15)])
    assert -0.55 <= rep.slope <= -0.45
    assert sharpness_value(4) == Fraction(7, 32)


def test_criterion_09_nonconvergence():
    t0 = time.perf_counter()
    cfg = ExperimentConfig(
        name="noconv", sampler=Sampler("gaussian_ar", {"T": 2}), n_grid=(64, 1024), reps=20, p=1.0, seed=0
    )
    rep = run_nonconvergence_experiment(cfg)
    aw, w = rep.medians("aw"), rep.medians("w")
    assert w[1024] <= 0.5 * w[64]
    assert aw[1024] >= 0.7 * aw[64]
    assert time.perf_counter() - t0 < 600


def test_criterion_10_smpd():
    mc = smpd_statistic(DiscreteMeasure.dirac([0.0, 1.0]), "mc", 4096, 0)
    assert abs(mc.value - 1.0) <= 3 * mc.standard_error + 1e-12
    walk = Sampler("gaussian_ar", {"T": 2, "a": 1.0})
    assert smpd_statistic(sample_empirical(walk, 4000, 0)).value < 0.1
    shifted = Sampler("finite", {"measure": DiscreteMeasure.dirac([0.0, 1.0])})
    rejects = accepts = 0
    for seed in range(20):
        rejects += smpd_test(sample_empirical(shifted, 4000, seed), 0.1, seed=seed).decision == "reject"
        accepts += smpd_test(sample_empirical(walk, 4000, seed), 0.1, seed=seed).decision == "accept"
    assert rejects >= 18 and accepts >= 18


def test_criterion_11_constants():
    assert K.theorem_q(2, 2) == 528
    assert K.q_star(2, 2, Fraction(1, 88)) == 528
    assert K.q_star(2, 2, 1 / 88) == 528
    for beta in (0.0, -0.1, 0.5, 0.9):
        with pytest.raises(ParameterError):
            K.q_star(2, 2, beta)


def test_criterion_12_parallel_invariance(fast_rate_serial, tmp_path):
    serial, _ = fast_rate_serial
    parallel = run_rate_experiment(fast_rate_config(), workers=8)
    a = emit_report(serial, ("csv",), tmp_path / "w1")["csv"]
    b = emit_report(parallel, ("csv",), tmp_path / "w8")["csv"]
    assert open(a, "rb").read() == open(b, "rb").read()
