import csv
import io
import numpy as np
import pytest

from smoothaw.errors import InvalidInputError, ParameterError
from smoothaw.measure import DiscreteMeasure, Sampler, sample_empirical
from smoothaw.smooth_aw import (
    MCConfig,
    envelope_exponent,
    kernel_distance,
    kernel_lipschitz_scan,
    kernel_term_samples,
    smooth_aw_upper,
    subgaussian_theta,
)
from smoothaw.smoothing import KernelMixture, SmoothedMeasure, w_p_mixture_1d


def empirical(mu, n, seed):
    return sample_empirical(Sampler("finite", {"measure": mu}), n, seed)


class TestEstimator:
    def test_identical_is_zero(self, two_point):
        est = smooth_aw_upper(two_point, two_point, 1.0, 2.0)
        assert est.value == 0.0 and est.standard_error == 0.0
        assert all(t == 0.0 for t in est.kernel_terms)

    def test_identical_after_compression(self, two_point):
        dup = DiscreteMeasure(np.concatenate([two_point.paths, two_point.paths]))
        assert smooth_aw_upper(two_point, dup, 1.0, 2.0).value == 0.0

    def test_identical_kernels_leave_first_marginal(self):
        # same second step for every prefix: kernel terms vanish
        k = np.array([-1.0, 2.0])
        mu = DiscreteMeasure(np.array([[a, b] for a in (0.0, 1.0) for b in k]), [0.15, 0.15, 0.35, 0.35])
        nu = DiscreteMeasure(np.array([[a, b] for a in (0.5, 3.0) for b in k]))
        est = smooth_aw_upper(mu, nu, 1.0, 2.0, mc=MCConfig(64, 1, 64))
        assert max(est.kernel_terms) <= 1e-10
        ref = w_p_mixture_1d(
            KernelMixture.from_weights([0.0, 1.0], [0.3, 0.7], 1.0), KernelMixture.from_weights([0.5, 3.0], [0.5, 0.5], 1.0), 2.0, 64
        ).value
        assert abs(est.first_marginal - ref) <= 1e-12
        assert abs(est.value - ref) <= 1e-10

    def test_reconstruction(self, two_point):
        nu = empirical(two_point, 64, 3)
        for mode in ("compact", "subgaussian"):
            est = smooth_aw_upper(two_point, nu, 1.0, 2.0, mode, mc=MCConfig(32, 0, 64))
            assert abs(est.value - est.reconstruct()) <= 1e-12 * max(1.0, est.value)
            assert est.value > 0

    def test_positive_and_decreasing(self, two_point):
        means = []
        for n in (64, 256, 1024):
            vals = [smooth_aw_upper(two_point, empirical(two_point, n, r), 1.0, 2.0, mc=MCConfig(32, r, 64)).value for r in range(20)]
            # a resample can reproduce mu exactly, giving exactly 0
            assert min(vals) >= 0 and max(vals) > 0
            means.append(np.mean(vals))
        assert means[0] > means[1] > means[2]

    def test_mode_ordering(self, two_point):
        nu = empirical(two_point, 100, 5)
        mc = MCConfig(64, 9, 64)
        a = smooth_aw_upper(two_point, nu, 1.0, 2.0, "compact", mc=mc)
        b = smooth_aw_upper(two_point, nu, 1.0, 2.0, "subgaussian", mc=mc)
        assert a.structural <= b.structural + 1e-9
        assert b.prefactor >= 1.0
        assert a.value <= b.value + 1e-9

    def test_mode_ordering_paired_draws(self, rng):
        mu = DiscreteMeasure(rng.uniform(-1, 1, size=(5, 3)))
        nu = DiscreteMeasure(rng.uniform(-1, 1, size=(6, 3)))
        smu, snu = SmoothedMeasure(mu, 0.8), SmoothedMeasure(nu, 0.8)
        mc = MCConfig(128, 2, 64)
        for t in (1, 2):
            wp = kernel_term_samples(smu, snu, t, 2.0, mc) ** (1 / 2)
            w2p = kernel_term_samples(smu, snu, t, 4.0, mc) ** (1 / 4)
            assert np.all(wp <= w2p + 1e-9)

    def test_deterministic(self, two_point):
        nu = empirical(two_point, 50, 1)
        mc = MCConfig(32, 17, 64)
        a = smooth_aw_upper(two_point, nu, 1.0, 2.0, mc=mc)
        b = smooth_aw_upper(two_point, nu, 1.0, 2.0, mc=mc)
        assert a == b

    def test_se_scaling(self, rng):
        mu = DiscreteMeasure(rng.uniform(-1, 1, size=(4, 2)))
        nu = DiscreteMeasure(rng.uniform(-1, 1, size=(5, 2)))
        se = {}
        for k in (64, 256):
            se[k] = np.mean([smooth_aw_upper(mu, nu, 1.0, 2.0, mc=MCConfig(k, s, 64)).standard_error for s in range(8)])
        assert 2 / 1.5 <= se[64] / se[256] <= 2 * 1.5

    def test_csv(self, two_point):
        est = smooth_aw_upper(two_point, empirical(two_point, 40, 0), 1.0, 2.0, mc=MCConfig(16, 0, 32))
        rows = list(csv.reader(io.StringIO(est.to_csv())))
        assert rows[0] == ["term", "value", "se"]
        assert [r[0] for r in rows[1:]] == ["first_marginal", "kernel_t1", "prefactor", "structural", "value"]
        assert float(rows[-1][1]) == est.value

    def test_subgaussian_prefactor(self, two_point):
        nu = empirical(two_point, 40, 2)
        est = smooth_aw_upper(two_point, nu, 1.0, 2.0, "subgaussian", mc=MCConfig(16, 0, 32))
        theta = subgaussian_theta(2.0, 2, 1 / 88, 1.0)
        centered = nu.paths.reshape(nu.n, -1) - two_point.mean()
        ref = np.mean(np.exp(theta * np.sum(centered**2, axis=1))) ** (1 / 4)
        assert est.prefactor == pytest.approx(ref, rel=1e-12)

    def test_subgaussian_beta_outside_set(self, two_point):
        with pytest.raises(ParameterError):
            smooth_aw_upper(two_point, two_point, 1.0, 2.0, "subgaussian", beta=0.2)

    def test_rejects_multidim(self, rng):
        m = DiscreteMeasure(rng.normal(size=(3, 2, 2)))
        with pytest.raises(InvalidInputError):
            smooth_aw_upper(m, m, 1.0)

    def test_rejects_mode(self, two_point):
        with pytest.raises(InvalidInputError):
            smooth_aw_upper(two_point, two_point, 1.0, mode="loose")

    def test_mc_config(self):
        with pytest.raises(InvalidInputError):
            MCConfig(1)
        with pytest.raises(InvalidInputError):
            MCConfig(16, 0, 4)


class TestLipschitzScan:
    def test_single_atom(self):
        sm = SmoothedMeasure(DiscreteMeasure(np.array([[0.0, 2.0]])), 1.0)
        sc = kernel_lipschitz_scan(sm, 1, 2.0, 3.0, 32, 0, 64)
        assert sc.max_ratio == 0.0 and np.all(sc.ratios == 0)

    def test_stable_when_count_doubles(self):
        base = DiscreteMeasure(np.array([[0.0, 1.0], [0.5, -1.0]]))
        sm = SmoothedMeasure(base, 1.0)
        a = kernel_lipschitz_scan(sm, 1, 2.0, 3.0, 256, 0, 64).max_ratio
        b = kernel_lipschitz_scan(sm, 1, 2.0, 3.0, 512, 1, 64).max_ratio
        assert 0 < a < np.inf and abs(b / a - 1) <= 0.2

    def test_ratio_matches_direct(self, rng):
        base = DiscreteMeasure(rng.uniform(-1, 1, size=(4, 3)))
        sm = SmoothedMeasure(base, 0.9)
        sc = kernel_lipschitz_scan(sm, 2, 2.0, 2.0, 4, 3, 64)
        for k in range(4):
            d = kernel_distance(sm, sm, sc.x[k], 2.0, 64)
            assert d == 0.0
            direct = w_p_mixture_1d(
                KernelMixture(base.paths[:, 2, :], sm.kernel_log_weights(sc.x[k].reshape(1, 2, 1))[0], 0.9),
                KernelMixture(base.paths[:, 2, :], sm.kernel_log_weights(sc.y[k].reshape(1, 2, 1))[0], 0.9),
                2.0,
                64,
            ).value
            assert sc.ratios[k] == pytest.approx(direct / np.linalg.norm(sc.x[k] - sc.y[k]), rel=1e-10)

    def test_envelope_exponent_nonnegative(self):
        base = DiscreteMeasure(np.array([[0.0, 1.0], [1.0, -1.0], [-0.5, 0.0]]))
        sm = SmoothedMeasure(base, 0.7)
        radii = [0.5, 1.0, 2.0, 3.0]
        maxes = [kernel_lipschitz_scan(sm, 1, 2.0, r, 128, 0, 64).max_ratio for r in radii]
        assert envelope_exponent(radii, maxes) >= 0

    @pytest.mark.parametrize("radius, count", [(0.0, 8), (-1.0, 8), (1.0, 1)])
    def test_validation(self, two_point, radius, count):
        with pytest.raises(InvalidInputError):
            kernel_lipschitz_scan(SmoothedMeasure(two_point, 1.0), 1, 2.0, radius, count)
