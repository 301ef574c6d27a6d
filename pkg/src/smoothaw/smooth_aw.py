"""Upper-bound estimator for the smooth adapted Wasserstein distance.

For finitely supported ``mu`` and ``nu`` the kernels of ``mu^sigma`` and
``nu^sigma`` are explicit Gaussian mixtures, so the structural quantity

    W_r(mu^sigma_1, nu^sigma_1) + sum_{t=1}^{T-1} ( E_{y ~ nu^sigma} W_r(mu^sigma_{y_{1:t}}, nu^sigma_{y_{1:t}})^r )^{1/r}

can be evaluated with exact one-dimensional quantile couplings and Monte
Carlo over ``y``. Compact mode uses ``r = p``; subgaussian mode uses
``r = 2p`` and multiplies by the exponential-moment prefactor
``E_theta(nu - mean(mu))^{1/(2p)}`` with ``theta = 2p beta (T-1) / (sigma^2 (1 - 4p beta (T-1)))``.
The unknown multiplicative constant of the bound is not included.
"""

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from ._rng import make_rng
from .constants import check_parameters, default_beta
from .errors import InvalidInputError, MomentOverflowError
from .measure import DiscreteMeasure, log_exp_moment
from .smoothing import (
    DEFAULT_QUAD_NODES,
    SmoothedMeasure,
    disintegrate,
    gauss_legendre_probit,
    w_p_mixture_1d,
    wp_power_rows,
)

__all__ = [
    "MCConfig",
    "UpperBoundEstimate",
    "smooth_aw_upper",
    "kernel_term_samples",
    "subgaussian_theta",
    "LipschitzScan",
    "kernel_lipschitz_scan",
    "envelope_exponent",
]

MODES = ("compact", "subgaussian")
_DRAW_BATCH = 256


@dataclass(frozen=True)
class MCConfig:
    """Monte Carlo settings: ``samples`` draws per kernel term, streams keyed by ``seed``."""

    samples: int = 256
    seed: int = 0
    quad: int = DEFAULT_QUAD_NODES

    def __post_init__(self):
        if int(self.samples) != self.samples or self.samples < 2:
            raise InvalidInputError(f"need at least 2 MC samples, got {self.samples}")
        if self.quad < 8:
            raise InvalidInputError(f"need at least 8 quadrature nodes, got {self.quad}")


@dataclass(frozen=True)
class UpperBoundEstimate:
    """Structural upper bound with its Monte Carlo standard error.

    ``value = prefactor * (first_marginal + sum(kernel_terms))``.
    """

    value: float
    standard_error: float
    first_marginal: float
    kernel_terms: tuple
    kernel_standard_errors: tuple
    prefactor: float
    mode: str
    order: float
    mc: MCConfig = field(default_factory=MCConfig)

    @property
    def structural(self):
        return math.fsum((self.first_marginal, *self.kernel_terms))

    def reconstruct(self):
        return self.prefactor * self.structural

    def rows(self):
        out = [("first_marginal", self.first_marginal, 0.0)]
        for t, (v, s) in enumerate(zip(self.kernel_terms, self.kernel_standard_errors), start=1):
            out.append((f"kernel_t{t}", v, s))
        out.append(("prefactor", self.prefactor, 0.0))
        out.append(("structural", self.structural, self.standard_error / self.prefactor if self.prefactor else 0.0))
        out.append(("value", self.value, self.standard_error))
        return out

    def to_csv(self, fh=None):
        """Write ``term,value,se`` rows; returns the text when ``fh`` is None."""
        buf = io.StringIO() if fh is None else fh
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["term", "value", "se"])
        for name, v, s in self.rows():
            w.writerow([name, repr(float(v)), repr(float(s))])
        return buf.getvalue() if fh is None else None

    def to_dict(self):
        return {
            "value": self.value,
            "standard_error": self.standard_error,
            "first_marginal": self.first_marginal,
            "kernel_terms": list(self.kernel_terms),
            "kernel_standard_errors": list(self.kernel_standard_errors),
            "prefactor": self.prefactor,
            "mode": self.mode,
            "order": self.order,
            "mc": {"samples": self.mc.samples, "seed": self.mc.seed, "quad": self.mc.quad},
        }


def subgaussian_theta(p, T, beta, sigma):
    """``2p beta (T-1) / (sigma^2 (1 - 4p beta (T-1)))``."""
    k = 4 * p * beta * (T - 1)
    return 2 * p * beta * (T - 1) / (sigma**2 * (1 - k))


def _as_smoothed(m, sigma):
    if isinstance(m, DiscreteMeasure):
        if sigma is None:
            raise InvalidInputError("sigma is required for DiscreteMeasure inputs")
        return SmoothedMeasure(m, sigma)
    for attr in ("first_marginal", "kernel_batch", "sample", "T", "d"):
        if not hasattr(m, attr):
            raise InvalidInputError(f"smoothed measure lacks '{attr}'")
    return m


def kernel_term_samples(smu, snu, t, order, mc, stream=None):
    """Draws of ``W_order(mu^sigma_{y_{1:t}}, nu^sigma_{y_{1:t}})^order`` for ``y ~ nu^sigma``.

    The prefixes come from the stream ``(mc.seed, t)`` (or ``(mc.seed, *stream)``).
    """
    rng = make_rng(mc.seed, *(stream if stream is not None else (t,)))
    ys = snu.sample(rng, mc.samples)[:, :t, :]
    nodes = gauss_legendre_probit(mc.quad)
    out = np.empty(mc.samples)
    for s in range(0, mc.samples, _DRAW_BATCH):
        pre = ys[s : s + _DRAW_BATCH]
        la, ma, sa = smu.kernel_batch(pre)
        lb, mb, sb = snu.kernel_batch(pre)
        if sa != sb:
            raise InvalidInputError("kernel scales differ between the two measures")
        out[s : s + _DRAW_BATCH] = wp_power_rows(la, ma, lb, mb, sa, order, nodes)
    return out


def _mean_and_se(x):
    m = math.fsum(x) / x.size
    if x.size < 2:
        return m, 0.0
    var = math.fsum((x - m) ** 2) / (x.size - 1)
    return m, math.sqrt(var / x.size)


def smooth_aw_upper(mu, nu, sigma=None, p=2.0, mode="compact", beta=None, mc=None):
    """DPP upper-bound estimate of the smooth adapted distance between ``mu`` and ``nu``.

    Parameters
    ----------
    mu, nu : DiscreteMeasure or smoothed measure
        One-dimensional path measures (``d = 1``). Plain discrete measures are
        smoothed with ``N(0, sigma^2)``; objects exposing ``first_marginal``,
        ``kernel_batch`` and ``sample`` are used as given.
    sigma : float
        Noise scale for discrete inputs.
    p : float
        Exponent (``p >= 1``; subgaussian mode needs ``p > 1``).
    mode : {"compact", "subgaussian"}
    beta : float, optional
        Parameter for the subgaussian prefactor; defaults to ``1/(4p(T+9))``.
    mc : MCConfig, optional

    Returns
    -------
    UpperBoundEstimate
        ``value`` excludes the unknown constant of the bound; the kernel terms
        carry delta-method standard errors of their Monte Carlo means.
    """
    if mode not in MODES:
        raise InvalidInputError(f"mode must be one of {MODES}, got {mode!r}")
    if not p >= 1:
        raise InvalidInputError(f"p must be >= 1, got {p}")
    mc = mc or MCConfig()
    smu, snu = _as_smoothed(mu, sigma), _as_smoothed(nu, sigma)
    if smu.d != 1 or snu.d != 1:
        raise InvalidInputError("the estimator needs d = 1")
    if smu.T != snu.T:
        raise InvalidInputError(f"T differs: {smu.T} vs {snu.T}")
    T = smu.T
    order = p if mode == "compact" else 2 * p

    prefactor = 1.0
    if mode == "subgaussian":
        if beta is None:
            beta = default_beta(p, T)
        check_parameters(p, T, beta)
        base_mu, base_nu = getattr(smu, "base", None), getattr(snu, "base", None)
        if base_nu is None or base_mu is None:
            raise InvalidInputError("subgaussian mode needs measures with a discrete base")
        theta = subgaussian_theta(p, T, beta, smu.sigma)
        log_e = log_exp_moment(base_nu.translate(-base_mu.mean().reshape(T, -1)), theta)
        log_pref = log_e / (2 * p)
        if not math.isfinite(log_pref) or log_pref > 700:
            raise MomentOverflowError(f"exponential moment of order {theta:.4g} is not finite")
        prefactor = math.exp(log_pref)

    same = hasattr(smu, "same_as") and smu.same_as(snu)
    if same:
        first = 0.0
        terms = tuple(0.0 for _ in range(T - 1))
        ses = terms
    else:
        first = w_p_mixture_1d(smu.first_marginal(), snu.first_marginal(), order, mc.quad).value
        terms, ses = [], []
        for t in range(1, T):
            draws = kernel_term_samples(smu, snu, t, order, mc)
            mean, se = _mean_and_se(draws)
            mean = max(mean, 0.0)
            term = mean ** (1.0 / order)
            terms.append(term)
            ses.append(term / (order * mean) * se if mean > 0 else 0.0)
        terms, ses = tuple(terms), tuple(ses)
    structural = math.fsum((first, *terms))
    se_total = prefactor * math.sqrt(math.fsum(s * s for s in ses))
    return UpperBoundEstimate(
        value=prefactor * structural,
        standard_error=se_total,
        first_marginal=first,
        kernel_terms=terms,
        kernel_standard_errors=ses,
        prefactor=prefactor,
        mode=mode,
        order=float(order),
        mc=mc,
    )


# -- kernel Lipschitz diagnostics ------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LipschitzScan:
    """Ratios ``W_p(kernel(x), kernel(y)) / |x - y|`` for sampled prefix pairs.

    ``x`` and ``y`` are flattened prefixes of shape (K, t*d); ``center`` is the
    mean of the prefix marginal.
    """

    max_ratio: float
    ratios: np.ndarray
    x: np.ndarray
    y: np.ndarray
    center: np.ndarray
    radius: float
    t: int
    p: float


def _uniform_ball(rng, k, dim, radius):
    g = rng.standard_normal((k, dim))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return g * (radius * rng.uniform(size=(k, 1)) ** (1.0 / dim))


def kernel_lipschitz_scan(sm, t, p=2.0, radius=3.0, count=256, seed=0, quad=DEFAULT_QUAD_NODES):
    """Sample ``count`` prefix pairs uniformly in the ball of ``radius`` around the prefix mean.

    Returns
    -------
    LipschitzScan
    """
    if not radius > 0:
        raise InvalidInputError(f"radius must be positive, got {radius}")
    if int(count) != count or count < 2:
        raise InvalidInputError(f"need at least 2 pairs, got {count}")
    if sm.d != 1:
        raise InvalidInputError("kernel scans need d = 1")
    if not 1 <= t <= sm.T - 1:
        raise InvalidInputError(f"t must lie in 1..{sm.T - 1}, got {t}")
    rng = make_rng(seed, t)
    center = sm.base.mean(t)
    dim = t * sm.d
    x = center + _uniform_ball(rng, count, dim, radius)
    y = center + _uniform_ball(rng, count, dim, radius)
    nodes = gauss_legendre_probit(quad)
    lx, mx, s = sm.kernel_batch(x.reshape(count, t, sm.d))
    ly, _, _ = sm.kernel_batch(y.reshape(count, t, sm.d))
    if np.all(mx == mx[0]):
        # every component shares one mean: all kernels coincide
        w = np.zeros(count)
    else:
        w = wp_power_rows(lx, mx, ly, mx, s, p, nodes) ** (1.0 / p)
    dist = np.linalg.norm(x - y, axis=1)
    ratios = w / dist
    return LipschitzScan(float(np.max(ratios)), ratios, x, y, center, float(radius), int(t), float(p))


def envelope_exponent(radii, max_ratios):
    """Least-squares slope of ``log max_ratio`` against ``radius^2``."""
    r2 = np.asarray(radii, dtype=float) ** 2
    lr = np.log(np.asarray(max_ratios, dtype=float))
    if r2.size < 2 or not np.all(np.isfinite(lr)):
        raise InvalidInputError("need at least two radii with positive ratios")
    A = np.vstack([r2, np.ones_like(r2)]).T
    slope, _ = np.linalg.lstsq(A, lr, rcond=None)[0]
    return float(slope)


def kernel_distance(sm_a, sm_b, prefix, p=2.0, quad=DEFAULT_QUAD_NODES):
    """``W_p`` between the kernels of two smoothed measures at one prefix."""
    return w_p_mixture_1d(disintegrate(sm_a, prefix), disintegrate(sm_b, prefix), p, quad).value
