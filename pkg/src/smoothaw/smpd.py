"""Smoothed martingale projection statistic and test (T = 2, d = 1, p = 2).

The base measure is convolved with the law of ``(Z1, Z1 + Z2)`` for
independent standard normals; this noise preserves the martingale property.
Given ``y1``, the kernel of ``mu * xi`` is the mixture over atoms ``j`` with
weights proportional to ``w_j phi(y1 - a1_j)`` and components
``N(a2_j + y1 - a1_j, 1)``, so its mean is ``y1 + sum_j w_hat_j(y1) (a2_j - a1_j)``.

The statistic projects every kernel onto ``{mean = y1}`` by translation (the
``W_2``-projection) and keeps the first marginal fixed:

    S(mu) = ( int |sum_j w_hat_j(y1) (a2_j - a1_j)|^2 (mu * xi)_1(dy1) )^{1/2}.

``S`` vanishes exactly on martingales and bounds the projection distance from above.
"""

import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import logsumexp

from ._rng import make_rng
from .errors import InvalidInputError, ParameterError
from .measure import DiscreteMeasure
from .smooth_aw import MCConfig, smooth_aw_upper
from .smoothing import KernelMixture, _same_base

__all__ = [
    "XiSmoothedMeasure",
    "SMPDResult",
    "smpd_statistic",
    "TestReport",
    "smpd_test",
    "conditional_offset",
]

_LOG_2PI = math.log(2 * math.pi)
GH_WORK_LIMIT = 2_000_000
MIN_TEST_SIZE = 40


def _check_base(m):
    if not isinstance(m, DiscreteMeasure):
        raise InvalidInputError("expected a DiscreteMeasure")
    if (m.T, m.d) != (2, 1):
        raise InvalidInputError(f"need T = 2 and d = 1, got T = {m.T}, d = {m.d}")


class XiSmoothedMeasure:
    """``base * xi`` with ``xi`` the law of ``(Z1, Z1 + Z2)``."""

    sigma = 1.0
    T = 2
    d = 1

    def __init__(self, base):
        _check_base(base)
        self.base = base.compress()
        self._a1 = self.base.paths[:, 0, 0]
        self._a2 = self.base.paths[:, 1, 0]
        self._logw = np.log(self.base.weights)

    def log_density(self, points):
        """Joint log-density at points of shape (k, 2)."""
        y = np.atleast_2d(np.asarray(points, dtype=float))
        z1 = y[:, :1] - self._a1
        z2 = y[:, 1:2] - self._a2 - z1
        return logsumexp(self._logw - 0.5 * (z1 * z1 + z2 * z2), axis=1) - _LOG_2PI

    def first_marginal(self):
        first = self.base.marginal(1)
        return KernelMixture(first.paths[:, 0, :], np.log(first.weights), 1.0)

    def _log_weights(self, y1):
        lw = self._logw[None, :] - 0.5 * (y1[:, None] - self._a1[None, :]) ** 2
        return lw - logsumexp(lw, axis=1, keepdims=True)

    def kernel_batch(self, prefixes):
        y1 = np.asarray(prefixes, dtype=float).reshape(-1)
        means = self._a2[None, :] + y1[:, None] - self._a1[None, :]
        return self._log_weights(y1), means, 1.0

    def kernel(self, y1):
        lw, means, s = self.kernel_batch(np.array([y1], dtype=float))
        return KernelMixture(means[0], lw[0], s)

    def sample(self, rng, size):
        idx = rng.choice(self.base.n, size=size, p=self.base.weights)
        z = rng.standard_normal((size, 2))
        out = np.empty((size, 2, 1))
        out[:, 0, 0] = self._a1[idx] + z[:, 0]
        out[:, 1, 0] = self._a2[idx] + z[:, 0] + z[:, 1]
        return out

    def same_as(self, other):
        return (
            type(other) is type(self)
            and _same_base(self.base, other.base)
        )


def conditional_offset(m, y1):
    """``mean((mu * xi)_{y1}) - y1`` at the points ``y1``."""
    sm = m if isinstance(m, XiSmoothedMeasure) else XiSmoothedMeasure(m)
    y1 = np.atleast_1d(np.asarray(y1, dtype=float))
    lw = sm._log_weights(y1)
    return np.exp(lw) @ (sm._a2 - sm._a1)


@dataclass(frozen=True)
class SMPDResult:
    value: float
    standard_error: float
    method: str
    samples: int


def smpd_statistic(m, method="auto", samples=4096, seed=0, nodes=64):
    """Kernel-translation projection statistic of ``m * xi``.

    Parameters
    ----------
    m : DiscreteMeasure
        ``T = 2``, ``d = 1``.
    method : {"auto", "mc", "gh"}
        ``gh`` integrates over each first-marginal component with ``nodes``
        Gauss-Hermite points (deterministic, ``standard_error = 0``); ``mc``
        draws ``samples`` values of ``y1`` (atom, then noise) from the stream
        ``seed``. ``auto`` picks Gauss-Hermite when the work ``atoms^2 * nodes``
        is moderate.

    Returns
    -------
    SMPDResult
    """
    _check_base(m)
    sm = XiSmoothedMeasure(m)
    n = sm.base.n
    if method == "auto":
        method = "gh" if n * n * nodes <= GH_WORK_LIMIT else "mc"
    if method == "gh":
        if nodes < 2:
            raise InvalidInputError(f"need at least 2 Gauss-Hermite nodes, got {nodes}")
        x, w = np.polynomial.hermite.hermgauss(int(nodes))
        y1 = (sm._a1[:, None] + math.sqrt(2.0) * x[None, :]).reshape(-1)
        f2 = conditional_offset(sm, y1) ** 2
        weights = (sm.base.weights[:, None] * w[None, :] / math.sqrt(math.pi)).reshape(-1)
        integral = math.fsum(weights * f2)
        return SMPDResult(math.sqrt(max(integral, 0.0)), 0.0, "gh", int(nodes))
    if method != "mc":
        raise InvalidInputError(f"unknown method {method!r}")
    if int(samples) != samples or samples < 2:
        raise InvalidInputError(f"need at least 2 MC samples, got {samples}")
    rng = make_rng(seed)
    y1 = sm.sample(rng, int(samples))[:, 0, 0]
    f2 = np.concatenate([conditional_offset(sm, y1[s : s + 512]) ** 2 for s in range(0, y1.size, 512)])
    mean = math.fsum(f2) / f2.size
    var = math.fsum((f2 - mean) ** 2) / (f2.size - 1)
    value = math.sqrt(max(mean, 0.0))
    se = math.sqrt(var / f2.size) / (2 * value) if value > 0 else 0.0
    return SMPDResult(value, se, "mc", int(samples))


@dataclass(frozen=True)
class TestReport:
    statistic: float
    threshold: float
    alpha: float
    n: int
    decision: str
    seed: int
    deviation: float
    split_distances: tuple

    def to_json(self):
        """The decision document ``{statistic, threshold, alpha, n, decision, seed}``."""
        keys = ("statistic", "threshold", "alpha", "n", "decision", "seed")
        d = asdict(self)
        return json.dumps({k: d[k] for k in keys})


def smpd_test(samples, alpha=0.1, split_reps=4, seed=0, mc_samples=32, quad=64, stat_samples=4096):
    """Martingale test at level ``alpha`` with a split-sample Markov threshold.

    The deviation scale ``E AW_2(mu * xi, mu_hat_n * xi)`` is estimated from
    ``split_reps`` random half/half splits: the structural upper bound between
    the two half-sample smoothed measures is computed for each split, averaged,
    and halved (two independent halves of size ``n/2`` differ by about twice
    the deviation of a size-``n`` sample at the ``n^{-1/2}`` rate). The
    hypothesis is rejected when the statistic exceeds ``deviation / alpha``.

    Parameters
    ----------
    samples : DiscreteMeasure
        Uniformly weighted empirical measure, ``T = 2``, ``d = 1``, ``n >= 40``.
    alpha : float
        Level in ``(0, 1)``.
    """
    if not 0 < alpha < 1:
        raise ParameterError(f"alpha must lie in (0, 1), got {alpha}")
    _check_base(samples)
    n = samples.n
    if n < MIN_TEST_SIZE:
        raise InvalidInputError(f"need at least {MIN_TEST_SIZE} samples, got {n}")
    if np.ptp(samples.weights) > 1e-12:
        raise InvalidInputError("the test expects a uniformly weighted empirical measure")
    if int(split_reps) != split_reps or split_reps < 1:
        raise InvalidInputError(f"split_reps must be a positive integer, got {split_reps}")
    stat = smpd_statistic(samples, "auto", stat_samples, seed).value
    dists = []
    for r in range(int(split_reps)):
        perm = make_rng(seed, 1, r).permutation(n)
        half = n // 2
        a = DiscreteMeasure.uniform(samples.paths[perm[:half]])
        b = DiscreteMeasure.uniform(samples.paths[perm[half : 2 * half]])
        est = smooth_aw_upper(
            XiSmoothedMeasure(a),
            XiSmoothedMeasure(b),
            p=2.0,
            mode="compact",
            mc=MCConfig(mc_samples, int(make_rng(seed, 2, r).integers(2**63)), quad),
        )
        dists.append(est.value)
    deviation = 0.5 * math.fsum(dists) / len(dists)
    threshold = deviation / alpha
    decision = "reject" if stat > threshold else "accept"
    return TestReport(float(stat), float(threshold), float(alpha), int(n), decision, int(seed), float(deviation), tuple(dists))
