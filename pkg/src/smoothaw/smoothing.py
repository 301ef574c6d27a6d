"""Gaussian-smoothed discrete measures as explicit mixtures.

``mu * N_sigma`` for a discrete ``mu`` has density ``sum_j w_j phi_sigma(x - x_j)``.
Its one-step kernels given a prefix ``y_{1:t}`` are again Gaussian mixtures:
component ``j`` sits at ``x^j_{t+1}`` with weight proportional to
``w_j phi_sigma(y_{1:t} - x^j_{1:t})``. Everything here works in log space.
"""

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import integrate
from scipy.special import logsumexp, ndtr, ndtri

from .errors import InvalidInputError
from .measure import DiscreteMeasure

__all__ = [
    "SmoothedMeasure",
    "KernelMixture",
    "MixtureDistance",
    "disintegrate",
    "mixture_cdf",
    "mixture_pdf",
    "mixture_quantile",
    "w_p_mixture_1d",
    "gauss_legendre_probit",
]

DEFAULT_QUAD_NODES = 256
QUANTILE_TRUNCATION = 1e-6
QUANTILE_TOL = 1e-12
_LOG_2PI = math.log(2 * math.pi)
_CHUNK = 1 << 21


@dataclass(frozen=True, eq=False)
class KernelMixture:
    """Isotropic Gaussian mixture on ``R^d``.

    Attributes
    ----------
    means : ndarray, shape (C, d)
    log_weights : ndarray, shape (C,)
        Normalized so that ``logsumexp(log_weights) == 0``.
    sigma : float
    """

    means: np.ndarray
    log_weights: np.ndarray
    sigma: float

    def __post_init__(self):
        means = np.asarray(self.means, dtype=float)
        if means.ndim == 1:
            means = means[:, None]
        lw = np.asarray(self.log_weights, dtype=float).reshape(-1)
        if means.shape[0] != lw.shape[0] or lw.shape[0] == 0:
            raise InvalidInputError("means and log_weights disagree in length")
        if not self.sigma > 0:
            raise InvalidInputError(f"sigma must be positive, got {self.sigma}")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "log_weights", lw - logsumexp(lw))

    @classmethod
    def from_weights(cls, means, weights, sigma):
        with np.errstate(divide="ignore"):
            return cls(means, np.log(np.asarray(weights, dtype=float)), sigma)

    @property
    def weights(self):
        return np.exp(self.log_weights)

    @property
    def d(self):
        return self.means.shape[1]

    def mean(self):
        return self.weights @ self.means

    def _scalar_means(self):
        if self.d != 1:
            raise InvalidInputError("operation needs a one-dimensional mixture")
        return self.means[:, 0]


class SmoothedMeasure:
    """``base * N(0, sigma^2 I)`` for a discrete ``base``.

    Identical atoms of ``base`` are merged on construction.
    """

    def __init__(self, base, sigma):
        if not isinstance(base, DiscreteMeasure):
            raise InvalidInputError("base must be a DiscreteMeasure")
        sigma = float(sigma)
        if not (sigma > 0 and math.isfinite(sigma)):
            raise InvalidInputError(f"sigma must be positive and finite, got {sigma}")
        self.base = base.compress()
        self.sigma = sigma
        self._logw = np.log(self.base.weights)

    @property
    def T(self):
        return self.base.T

    @property
    def d(self):
        return self.base.d

    def log_density(self, points):
        """``log (phi_sigma * mu)(x_{1:t})`` for points of shape (t, d) or (k, t, d)."""
        pts = np.asarray(points, dtype=float)
        single = pts.ndim == 2
        if single:
            pts = pts[None]
        k, t, d = pts.shape
        if d != self.d or not 1 <= t <= self.T:
            raise InvalidInputError(f"points of shape {pts.shape[1:]} do not fit T={self.T}, d={self.d}")
        atoms = self.base.flat(t)
        sq = np.sum((pts.reshape(k, 1, t * d) - atoms[None]) ** 2, axis=2)
        out = logsumexp(self._logw[None] - sq / (2 * self.sigma**2), axis=1)
        out -= 0.5 * t * d * (_LOG_2PI + 2 * math.log(self.sigma))
        return out[0] if single else out

    def density(self, points):
        return np.exp(self.log_density(points))

    def kernel_log_weights(self, prefixes):
        """Normalized component log-weights of the kernels at ``prefixes`` (M, t, d)."""
        pre = np.asarray(prefixes, dtype=float)
        M, t, d = pre.shape
        atoms = self.base.flat(t)
        sq = np.sum((pre.reshape(M, 1, t * d) - atoms[None]) ** 2, axis=2)
        lw = self._logw[None] - sq / (2 * self.sigma**2)
        return lw - logsumexp(lw, axis=1, keepdims=True)

    def kernel_means(self, t):
        """Component means of the time-``t+1`` kernel, shape (C, d)."""
        return self.base.paths[:, t, :]

    def kernel_batch(self, prefixes):
        """Kernels at ``prefixes`` (M, t, d) for ``d = 1``.

        Returns ``(log_weights (M, C), means (C,), scale)``.
        """
        pre = np.asarray(prefixes, dtype=float)
        if self.d != 1:
            raise InvalidInputError("batched kernels need d = 1")
        t = pre.shape[1]
        return self.kernel_log_weights(pre), self.kernel_means(t)[:, 0], self.sigma

    def same_as(self, other):
        """True when ``other`` represents exactly the same smoothed measure."""
        return (
            type(other) is type(self)
            and self.sigma == other.sigma
            and _same_base(self.base, other.base)
        )

    def first_marginal(self):
        first = self.base.marginal(1)
        return KernelMixture(first.paths[:, 0, :], np.log(first.weights), self.sigma)

    def sample(self, rng, size):
        """Draw ``size`` paths: pick an atom by weight, then add ``N(0, sigma^2 I)``."""
        idx = rng.choice(self.base.n, size=size, p=self.base.weights)
        return self.base.paths[idx] + self.sigma * rng.standard_normal((size, self.T, self.d))


def disintegrate(sm, prefix, t=None):
    """Kernel ``(mu^sigma)_{x_{1:t}}`` as a ``KernelMixture``.

    Parameters
    ----------
    sm : SmoothedMeasure
    prefix : array_like, shape (t, d) (or (t,) when d = 1)
    t : int, optional
        Prefix length; inferred from ``prefix`` when omitted. Must lie in 1..T-1.
    """
    pre = np.asarray(prefix, dtype=float)
    if pre.ndim == 1:
        pre = pre[:, None] if sm.d == 1 else pre[None, :]
    if t is None:
        t = pre.shape[0]
    if not 1 <= t <= sm.T - 1:
        raise InvalidInputError(f"prefix length {t} outside 1..{sm.T - 1}")
    if pre.shape != (t, sm.d):
        raise InvalidInputError(f"prefix shape {pre.shape} != ({t}, {sm.d})")
    if not np.all(np.isfinite(pre)):
        raise InvalidInputError("prefix must be finite")
    lw = sm.kernel_log_weights(pre[None])[0]
    return KernelMixture(sm.kernel_means(t), lw, sm.sigma)


# -- one-dimensional mixture CDF / quantile ------------------------------------------


def _cdf_pdf_rows(x, w, m, sigma):
    """CDF and density of row-wise mixtures. x (B, K), w (B, C), m (B, C) -> 2 x (B, K)."""
    B, K = x.shape
    C = w.shape[1]
    F = np.empty((B, K))
    f = np.empty((B, K))
    step = max(1, _CHUNK // max(1, K * C))
    for s in range(0, B, step):
        z = (x[s : s + step, :, None] - m[s : s + step, None, :]) / sigma
        ws = w[s : s + step, :, None]
        F[s : s + step] = np.matmul(ndtr(z), ws)[..., 0]
        f[s : s + step] = np.matmul(np.exp(-0.5 * z * z), ws)[..., 0]
    f /= sigma * math.sqrt(2 * math.pi)
    return F, f


def _cdf_pdf_flat(x, rows, w, m, sigma):
    """CDF and density at scattered points: entry ``i`` uses mixture row ``rows[i]``.

    ``m`` is either (C,) shared by all rows or (B, C).
    """
    N = x.shape[0]
    C = w.shape[1]
    F = np.empty(N)
    f = np.empty(N)
    step = max(1, _CHUNK // max(1, C))
    for s in range(0, N, step):
        r = rows[s : s + step]
        z = (x[s : s + step, None] - (m[None, :] if m.ndim == 1 else m[r])) / sigma
        ws = w[r]
        F[s : s + step] = np.einsum("nc,nc->n", ndtr(z), ws)
        f[s : s + step] = np.einsum("nc,nc->n", np.exp(-0.5 * z * z), ws)
    f /= sigma * math.sqrt(2 * math.pi)
    return F, f


def _quantile_rows(log_w, means, sigma, u, tol=QUANTILE_TOL, max_iter=100, grid=128):
    """Quantiles of row-wise 1-d mixtures.

    log_w (B, C) normalized; means (C,) or (B, C); u (K,) or (B, K) in (0, 1).
    Returns (B, K).

    Every mixture quantile lies between ``min_j m_j + sigma z_u`` and
    ``max_j m_j + sigma z_u`` with ``z_u`` the standard normal quantile. CDF
    and density are tabulated on a uniform grid spanning those bounds; the
    grid cell containing ``u`` is an exact bracket and a cubic Hermite
    interpolant of the CDF gives the starting point. Newton steps are then
    accepted while they stay inside the bracket, otherwise the bracket is
    bisected, until ``|cdf - u| <= tol``.
    """
    log_w = np.atleast_2d(log_w)
    B, C = log_w.shape
    shared = np.ndim(means) == 1
    m = np.broadcast_to(np.asarray(means, dtype=float), (B, C))
    # components below e^-60 relative weight in every row cannot move the CDF by 1e-12
    keep = np.max(log_w, axis=0) > -60.0
    if not np.all(keep):
        log_w, m = log_w[:, keep], m[:, keep]
        C = log_w.shape[1]
    m_flat = m[0] if shared else m
    w = np.exp(log_w)
    u = np.broadcast_to(np.asarray(u, dtype=float), (B, np.shape(u)[-1]))
    K = u.shape[1]
    live = w > 0
    big = np.finfo(float).max
    m_lo = np.min(np.where(live, m, big), axis=1)
    m_hi = np.max(np.where(live, m, -big), axis=1)
    z = ndtri(u)
    a = m_lo + sigma * np.min(z, axis=1)
    b = m_hi + sigma * np.max(z, axis=1)
    g_x = a[:, None] + (b - a)[:, None] * np.linspace(0.0, 1.0, grid)[None, :]
    g_F, g_f = _cdf_pdf_rows(g_x, w, m, sigma)
    g_F = np.maximum.accumulate(g_F, axis=1)
    idx = np.clip(np.sum(g_F[:, None, :] < u[:, :, None], axis=2), 1, grid - 1)

    def cell(arr, k):
        return np.take_along_axis(arr, k, axis=1)

    x0, x1 = cell(g_x, idx - 1), cell(g_x, idx)
    F0, F1 = cell(g_F, idx - 1), cell(g_F, idx)
    f0, f1 = cell(g_f, idx - 1), cell(g_f, idx)
    h = x1 - x0
    # the analytic bounds are exact brackets as well
    lo = np.maximum(x0, m_lo[:, None] + sigma * z)
    hi = np.maximum(np.minimum(x1, m_hi[:, None] + sigma * z), lo)

    # invert the cubic Hermite interpolant on the cell (no mixture evaluations)
    with np.errstate(divide="ignore", invalid="ignore"):
        s_ = np.clip(np.nan_to_num((u - F0) / (F1 - F0), nan=0.5), 0.0, 1.0)
        for _ in range(4):
            s2, s3 = s_ * s_, s_ * s_ * s_
            H = (2 * s3 - 3 * s2 + 1) * F0 + (s3 - 2 * s2 + s_) * h * f0 \
                + (-2 * s3 + 3 * s2) * F1 + (s3 - s2) * h * f1
            dH = (6 * s2 - 6 * s_) * (F0 - F1) + (3 * s2 - 4 * s_ + 1) * h * f0 + (3 * s2 - 2 * s_) * h * f1
            s_ = np.clip(np.nan_to_num(s_ - (H - u) / dH, nan=0.5), 0.0, 1.0)
    x = np.clip(x0 + s_ * h, lo, hi)

    rows = np.repeat(np.arange(B), K)
    x, lo, hi, uf = x.reshape(-1), lo.reshape(-1), hi.reshape(-1), u.reshape(-1)
    active = np.arange(B * K)
    eps = 4 * np.finfo(float).eps
    for _ in range(max_iter):
        xa = x[active]
        if active.size == B * K:
            F, f = (v.reshape(-1) for v in _cdf_pdf_rows(xa.reshape(B, K), w, m, sigma))
        else:
            F, f = _cdf_pdf_flat(xa, rows[active], w, m_flat, sigma)
        g = F - uf[active]
        la, ha = lo[active], hi[active]
        # bracket collapsed to floating resolution: accept
        done = (np.abs(g) <= tol) | ((ha - la) <= eps * np.maximum(1.0, np.abs(xa)))
        below = g < 0
        la = np.where(below, np.maximum(la, xa), la)
        ha = np.where(below, ha, np.minimum(ha, xa))
        with np.errstate(divide="ignore", invalid="ignore"):
            newton = xa - g / f
        ok = np.isfinite(newton) & (newton > la) & (newton < ha)
        x[active] = np.where(done, xa, np.where(ok, newton, 0.5 * (la + ha)))
        lo[active], hi[active] = la, ha
        active = active[~done]
        if active.size == 0:
            break
    return x.reshape(B, K)


def _check_u(u):
    u = np.asarray(u, dtype=float)
    if np.any(~((u > 0) & (u < 1))):
        raise InvalidInputError("quantile levels must lie strictly inside (0, 1)")
    return u


def mixture_cdf(mix, x):
    m = mix._scalar_means()
    x = np.asarray(x, dtype=float)
    out = ndtr((x[..., None] - m) / mix.sigma) @ mix.weights
    return float(out) if out.ndim == 0 else out


def mixture_pdf(mix, x):
    m = mix._scalar_means()
    x = np.asarray(x, dtype=float)
    z = (x[..., None] - m) / mix.sigma
    out = np.exp(-0.5 * z * z) @ mix.weights / (mix.sigma * math.sqrt(2 * math.pi))
    return float(out) if out.ndim == 0 else out


def mixture_quantile(mix, u):
    """Solve ``mixture_cdf(mix, q) = u`` to ``|cdf(q) - u| <= 1e-12``."""
    m = mix._scalar_means()
    u = _check_u(u)
    q = _quantile_rows(mix.log_weights[None], m, mix.sigma, np.atleast_1d(u).reshape(-1))[0]
    return float(q[0]) if u.ndim == 0 else q.reshape(u.shape)


# -- W_p between one-dimensional mixtures ------------------------------------------------


class MixtureDistance(NamedTuple):
    value: float
    tail_bound: float


def gauss_legendre_probit(K, delta=QUANTILE_TRUNCATION):
    """Nodes ``u_k`` and weights for integrals over ``[delta, 1 - delta]``.

    Gauss-Legendre in the variable ``s = Phi^{-1}(u)`` on ``[Phi^{-1}(delta),
    Phi^{-1}(1-delta)]``, with the Jacobian ``phi(s)`` folded into the weights.
    """
    if K < 8:
        raise InvalidInputError(f"need at least 8 quadrature nodes, got {K}")
    s_max = -ndtri(delta)
    x, wx = np.polynomial.legendre.leggauss(int(K))
    s = s_max * x
    w = s_max * wx * np.exp(-0.5 * s * s) / math.sqrt(2 * math.pi)
    return ndtr(s), w


def _tail_bound(ma, mb, sa, sb, p, delta):
    """Bound on the mass of ``|Q_a - Q_b|^p`` outside ``[delta, 1 - delta]``.

    Each quantile satisfies ``min m + s z <= Q(Phi(z)) <= max m + s z``, so
    ``|Q_a - Q_b| <= |s_a - s_b| |z| + R`` with ``R`` the largest cross gap of means.
    """
    A = abs(sa - sb)
    R = max(np.max(ma) - np.min(mb), np.max(mb) - np.min(ma), 0.0)
    z0 = -ndtri(delta)
    val, _ = integrate.quad(lambda z: (A * z + R) ** p * math.exp(-0.5 * z * z), z0, np.inf)
    return 2 * val / math.sqrt(2 * math.pi)


def wp_power_rows(la, ma, lb, mb, sigma, p, nodes):
    """``int |Q_a - Q_b|^p`` on the quadrature grid for row-wise mixture pairs.

    la (B, Ca), lb (B, Cb) normalized log-weights; ma, mb shared (C,) means.
    """
    u, w = nodes
    qa = _quantile_rows(la, ma, sigma, u)
    qb = _quantile_rows(lb, mb, sigma, u)
    return np.abs(qa - qb) ** p @ w


def w_p_mixture_1d(a, b, p=2.0, quad=DEFAULT_QUAD_NODES):
    """``W_p`` between two one-dimensional Gaussian mixtures.

    The quantile integral ``int_delta^{1-delta} |F_a^{-1} - F_b^{-1}|^p du``
    (``delta = 1e-6``) is evaluated with ``quad`` Gauss-Legendre nodes.

    Returns
    -------
    MixtureDistance
        ``value`` is the ``1/p``-th power of the truncated integral;
        ``tail_bound`` bounds the omitted part of the integral (``p``-th power
        scale), so ``value**p <= W_p^p <= value**p + tail_bound``.
    """
    if not p >= 1:
        raise InvalidInputError(f"p must be >= 1, got {p}")
    ma, mb = a._scalar_means(), b._scalar_means()
    if a is b or (
        a.sigma == b.sigma
        and np.array_equal(ma, mb)
        and np.array_equal(a.log_weights, b.log_weights)
    ):
        return MixtureDistance(0.0, _tail_bound(ma, mb, a.sigma, b.sigma, p, QUANTILE_TRUNCATION))
    u, w = gauss_legendre_probit(quad)
    qa = _quantile_rows(a.log_weights[None], ma, a.sigma, u)[0]
    qb = _quantile_rows(b.log_weights[None], mb, b.sigma, u)[0]
    integral = math.fsum(w * np.abs(qa - qb) ** p)
    tail = _tail_bound(ma, mb, a.sigma, b.sigma, p, QUANTILE_TRUNCATION)
    return MixtureDistance(integral ** (1.0 / p), tail)


def _same_base(a, b):
    if a.paths.shape[1:] != b.paths.shape[1:]:
        return False
    pa, wa = a.canonical()
    pb, wb = b.canonical()
    return pa.shape == pb.shape and np.array_equal(pa, pb) and np.array_equal(wa, wb)
