"""Closed-form constants, Gaussian identities and density bounds for smoothed measures.

Conventions: ``p' = p / (p - 1)`` is the Hoelder conjugate, ``E_theta(mu)`` the
exponential moment ``int exp(theta |x|^2) dmu`` and ``Var`` the trace of the
covariance. Constants that can be astronomically large are carried in log form.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import InvalidInputError, NumericalPreconditionError, ParameterError
from .measure import DiscreteMeasure, log_exp_moment

__all__ = [
    "conjugate",
    "check_parameters",
    "q_star",
    "theorem_q",
    "default_beta",
    "exp_moment_smoothed",
    "gaussian_product_integral",
    "density_ratio",
    "log_density_ratio",
    "lower_bound",
    "log_lower_bound",
    "eta_for",
    "lipschitz_constant_c1",
    "lipschitz_constant_c2",
    "LipschitzConstants",
    "kernel_constants",
    "calibrate_poincare",
]

_LOG_2PI = math.log(2 * math.pi)


def conjugate(p):
    """Hoelder conjugate ``p / (p - 1)``."""
    if not p > 1:
        raise ParameterError(f"conjugate exponent needs p > 1, got {p}")
    return p / (p - 1)


def eta_for(p):
    """Reference-scale factor ``sqrt(1 / (2p)')``, i.e. ``sqrt(1 - 1/(2p))``."""
    return math.sqrt(1.0 / conjugate(2 * p))


# -- parameter sets --------------------------------------------------------------------


def check_parameters(p, T, beta):
    """Raise ``ParameterError`` unless ``0 < beta < min(1/(4p(T-1)), 1/(8p))``."""
    if not p > 1:
        raise ParameterError(f"p > 1 violated: p = {p}")
    if int(T) != T or T < 2:
        raise ParameterError(f"T >= 2 violated: T = {T}")
    if not beta > 0:
        raise ParameterError(f"beta > 0 violated: beta = {beta}")
    if not beta < 1 / (4 * p * (T - 1)):
        raise ParameterError(f"beta < 1/(4p(T-1)) = {1 / (4 * p * (T - 1))} violated: beta = {beta}")
    if not beta < 1 / (8 * p):
        raise ParameterError(f"beta < 1/(8p) = {1 / (8 * p)} violated: beta = {beta}")


def q_star(p, T, beta):
    """Smallest admissible exponential-moment order for a given ``beta``.

    Maximum of ``2(2p-1)/beta``, ``6p(T-1)beta / (1 - 4p(T-1)beta)``,
    ``12 p beta / (1 - 8 p beta)`` and ``4(2p-1) + 2 / (sqrt((4p)') - 1)^2``.
    """
    check_parameters(p, T, beta)
    terms = (
        2 * (2 * p - 1) / beta,
        6 * p * (T - 1) * beta / (1 - 4 * p * (T - 1) * beta),
        12 * p * beta / (1 - 8 * p * beta),
        4 * (2 * p - 1) + 2 / (math.sqrt(conjugate(4 * p)) - 1) ** 2,
    )
    return max(terms)


def theorem_q(p, T):
    """``8p(2p-1)(T+9)``: the moment order attained at ``beta = 1/(4p(T+9))``."""
    if not p > 1 or T < 2:
        raise ParameterError(f"need p > 1 and T >= 2, got p={p}, T={T}")
    return 8 * p * (2 * p - 1) * (T + 9)


def default_beta(p, T):
    return 1.0 / (4 * p * (T + 9))


# -- Gaussian identities ---------------------------------------------------------------


def exp_moment_smoothed(sm, theta, log=False):
    """``E_theta(mu * N_sigma) = (1 - 2 sigma^2 theta)^{-dT/2} E_{theta / (1 - 2 sigma^2 theta)}(mu)``.

    Raises ``NumericalPreconditionError`` when ``theta >= 1/(2 sigma^2)`` (divergent).
    """
    theta = float(theta)
    s2 = sm.sigma**2
    if not math.isfinite(theta):
        raise InvalidInputError("theta must be finite")
    if not theta < 1 / (2 * s2):
        raise NumericalPreconditionError(
            f"exponential moment diverges: theta = {theta} >= 1/(2 sigma^2) = {1 / (2 * s2)}"
        )
    k = 1 - 2 * s2 * theta
    val = -0.5 * sm.d * sm.T * math.log(k) + log_exp_moment(sm.base, theta / k)
    if log:
        return val
    if val > math.log(np.finfo(float).max):
        from .errors import MomentOverflowError

        raise MomentOverflowError(f"exponential moment exp({val}) overflows")
    return math.exp(val)


def gaussian_product_integral(a, b, x):
    """``int exp(a|y|^2 - b|x-y|^2) dy = (pi/(b-a))^{d/2} exp(ab|x|^2/(b-a))`` for ``0 < a < b``."""
    if not (a > 0 and b > a):
        raise InvalidInputError(f"need 0 < a < b, got a={a}, b={b}")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    d = x.size
    return (math.pi / (b - a)) ** (d / 2) * math.exp(a * b * float(x @ x) / (b - a))


# -- density ratio and its lower bound --------------------------------------------------


def _split_point(sm, point):
    pt = np.asarray(point, dtype=float)
    if pt.ndim == 1:
        pt = pt[:, None] if sm.d == 1 else pt[None, :]
    t = pt.shape[0] - 1
    if not 1 <= t <= sm.T - 1 or pt.shape[1] != sm.d:
        raise InvalidInputError(f"point of shape {pt.shape} needs t+1 rows with t in 1..{sm.T - 1}")
    return pt, t


def log_density_ratio(sm, point, eta):
    """``log [phi_sigma*mu(x_{1:t+1}) / (phi_sigma*mu(x_{1:t}) phi_{sigma eta}(x_{t+1}))]``."""
    if not 0 < eta < 1:
        raise InvalidInputError(f"eta must lie in (0, 1), got {eta}")
    pt, t = _split_point(sm, point)
    s = sm.sigma * eta
    x_next = pt[t]
    log_ref = -0.5 * sm.d * (_LOG_2PI + 2 * math.log(s)) - float(x_next @ x_next) / (2 * s * s)
    return float(sm.log_density(pt) - sm.log_density(pt[:t]) - log_ref)


def density_ratio(sm, point, eta):
    """Density of the kernel at ``x_{1:t}`` w.r.t. ``N(0, (sigma eta)^2 I)``, evaluated at ``x_{t+1}``."""
    return math.exp(log_density_ratio(sm, point, eta))


def _prefix_stats(base, t):
    mean = base.mean(t)
    var = base.variance_trace(t)
    return mean, var


def log_lower_bound(sm, point, p, beta, log_e_q0=None):
    """Log of the lower bound on :func:`density_ratio` with ``eta = sqrt(1/(2p)')``.

    ``eta^d exp(-beta p' Var/(2 sigma^2)) E_{q0/(2 sigma^2)}(mu_{t+1})^{-beta p'/(1 - beta p')}
    exp(-beta p' |x_{1:t} - mean|^2 / (2 sigma^2))`` with ``q0 = 2(p-1)(1/beta - p')``
    and ``mean``, ``Var`` taken over the prefix marginal ``mu_{1:t}``.
    """
    pc = conjugate(p)
    if not 0 < beta < 1 / pc:
        raise ParameterError(f"0 < beta < 1/p' = {1 / pc} violated: beta = {beta}")
    pt, t = _split_point(sm, point)
    s2 = sm.sigma**2
    mean, var = _prefix_stats(sm.base, t)
    if log_e_q0 is None:
        q0 = 2 * (p - 1) * (1 / beta - pc)
        log_e_q0 = log_exp_moment(sm.base.marginal(t + 1), q0 / (2 * s2))
    dev = pt[:t].reshape(-1) - mean
    bp = beta * pc
    return (
        sm.d * math.log(eta_for(p))
        - bp * var / (2 * s2)
        - bp / (1 - bp) * log_e_q0
        - bp * float(dev @ dev) / (2 * s2)
    )


def lower_bound(sm, point, p, beta, e_q0=None):
    log_e = None if e_q0 is None else math.log(e_q0)
    return math.exp(log_lower_bound(sm, point, p, beta, log_e))


# -- kernel Lipschitz constants ---------------------------------------------------------


def _log_c1(p, d, sigma, beta, log_e_q0, var_prefix):
    pc = conjugate(p)
    if not 0 < beta < 1 / pc:
        raise ParameterError(f"0 < beta < 1/p' = {1 / pc} violated: beta = {beta}")
    return (
        math.log(p)
        + d / (2 * pc) * math.log(conjugate(2 * p))
        + beta / (1 - beta * pc) * log_e_q0
        + beta * var_prefix / (2 * sigma**2)
    )


def _log_c2(p, d, sigma, beta, q, var_prefix, D, log_h_norm, log_m_r, log_e_q):
    if not beta > 0:
        raise ParameterError(f"beta > 0 violated: beta = {beta}")
    if not q > 2 * (p - 1) / beta:
        raise ParameterError(f"q > 2(p-1)/beta = {2 * (p - 1) / beta} violated: q = {q}")
    if not D > 0:
        raise InvalidInputError(f"Poincare constant D must be positive, got {D}")
    r = q / (beta * q - 2 * (p - 1))
    bracket = np.logaddexp(log_h_norm, log_m_r / r + 2 * (p - 1) / q * log_e_q)
    return (
        -2 * math.log(sigma)
        + math.log(D)
        + d / 2 * math.log(2 ** (1 / p) / conjugate(2 * p))
        + beta * var_prefix / (2 * sigma**2)
        + float(bracket)
    )


def lipschitz_constant_c1(p, d, sigma, beta, e_q0, var_prefix):
    """``p ((2p)')^{d/(2p')} E_{q0/(2 sigma^2)}(mu_{t+1})^{beta/(1 - beta p')} exp(beta Var(mu_{1:t}) / (2 sigma^2))``.

    ``e_q0`` is the exponential moment of the next-step marginal at order
    ``q0 = 2(p-1)(1/beta - p')``; ``var_prefix`` the variance trace of ``mu_{1:t}``.
    """
    if not e_q0 > 0:
        raise InvalidInputError(f"e_q0 must be positive, got {e_q0}")
    if not math.isfinite(e_q0):
        raise NumericalPreconditionError("exponential moment of order q0 is infinite")
    return math.exp(_log_c1(p, d, sigma, beta, math.log(e_q0), var_prefix))


def lipschitz_constant_c2(p, d, sigma, beta, q, var_prefix, D, h_norm, m_r, e_q):
    """``sigma^-2 D (2^{1/p}/(2p)')^{d/2} exp(beta Var/(2 sigma^2)) (||h||_{L^{1/beta}} + M_r^{1/r} E_q^{2(p-1)/q})``.

    ``r = q / (beta q - 2(p-1))``; ``h(w) = |w_{1:t}| exp((p-1)|w_{t+1}|^2 / sigma^2)``;
    ``m_r`` is ``M_r(mu_{1:t})`` and ``e_q`` the moment ``E_{q/(2 sigma^2)}`` of the
    next-step marginal. ``D`` is the (non-explicit) Poincare constant.
    """
    with np.errstate(divide="ignore"):
        logs = [math.log(v) if v > 0 else -math.inf for v in (h_norm, m_r)]
    if not e_q > 0:
        raise InvalidInputError(f"e_q must be positive, got {e_q}")
    return math.exp(_log_c2(p, d, sigma, beta, q, var_prefix, D, logs[0], logs[1], math.log(e_q)))


@dataclass(frozen=True)
class LipschitzConstants:
    """Kernel-Lipschitz constants of ``mu * N_sigma`` at step ``t``.

    ``c2`` is proportional to the Poincare constant ``D``; ``log_c2_unit`` is its
    log at ``D = 1``. ``mean`` and ``var`` describe the prefix marginal ``mu_{1:t}``.
    """

    log_c1: float
    log_c2_unit: float
    beta: float
    q: float
    p: float
    sigma: float
    t: int
    mean: np.ndarray
    var: float
    D: float = 1.0

    @property
    def c1(self):
        return math.exp(self.log_c1)

    @property
    def c2(self):
        return self.D * math.exp(self.log_c2_unit)

    def with_D(self, D):
        return LipschitzConstants(**{**self.__dict__, "D": float(D)})

    def log_envelope(self, x, y):
        """Log of ``c1 c2 exp(beta (|x-m| v |y-m|)^2 / sigma^2 + beta |x-m|^2 / (2 sigma^2))``.

        ``x`` and ``y`` are flattened prefixes (rows of shape (t d,) or (k, t d)).
        """
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        rx = np.sum((x - self.mean) ** 2, axis=-1)
        ry = np.sum((y - self.mean) ** 2, axis=-1)
        s2 = self.sigma**2
        return (
            self.log_c1
            + self.log_c2_unit
            + math.log(self.D)
            + self.beta * np.maximum(rx, ry) / s2
            + self.beta * rx / (2 * s2)
        )


def kernel_constants(base, t, p, sigma, beta, q=None, D=1.0):
    """Evaluate ``c1`` and ``c2`` for a discrete ``base`` at step ``t`` (1..T-1).

    All moments are computed exactly from the atoms in log space. ``q`` defaults
    to ``4(p-1)/beta`` (twice the minimal order), giving ``r = 2/beta``.
    """
    if not isinstance(base, DiscreteMeasure):
        raise InvalidInputError("base must be a DiscreteMeasure")
    if not 1 <= t <= base.T - 1:
        raise InvalidInputError(f"t must lie in 1..{base.T - 1}, got {t}")
    pc = conjugate(p)
    if q is None:
        q = 4 * (p - 1) / beta
    s2 = sigma**2
    mean, var = _prefix_stats(base, t)
    nxt = base.marginal(t + 1)
    q0 = 2 * (p - 1) * (1 / beta - pc)
    log_c1 = _log_c1(p, base.d, sigma, beta, log_exp_moment(nxt, q0 / (2 * s2)), var)

    logw = np.log(base.weights)
    pre = base.flat(t)
    norm_pre = np.sqrt(np.sum(pre * pre, axis=1))
    x_next = base.paths[:, t, :]
    sq_next = np.sum(x_next * x_next, axis=1)
    with np.errstate(divide="ignore"):
        log_norm_pre = np.log(norm_pre)
    # ||h||_{L^{1/beta}} = (sum_j w_j h_j^{1/beta})^beta
    log_h = beta * logsumexp(logw + (log_norm_pre + (p - 1) * sq_next / s2) / beta)
    r = q / (beta * q - 2 * (p - 1))
    log_m_r = logsumexp(logw + r * log_norm_pre)
    log_e_q = log_exp_moment(nxt, q / (2 * s2))
    log_c2 = _log_c2(p, base.d, sigma, beta, q, var, 1.0, log_h, log_m_r, log_e_q)
    return LipschitzConstants(
        log_c1=float(log_c1),
        log_c2_unit=float(log_c2),
        beta=float(beta),
        q=float(q),
        p=float(p),
        sigma=float(sigma),
        t=int(t),
        mean=np.asarray(mean, dtype=float),
        var=float(var),
        D=float(D),
    )


def calibrate_poincare(ratios, log_envelopes_unit):
    """Smallest ``D`` with ``ratio <= D * envelope(D=1)`` on every calibration pair."""
    ratios = np.asarray(ratios, dtype=float)
    le = np.asarray(log_envelopes_unit, dtype=float)
    if ratios.shape != le.shape or ratios.size == 0:
        raise InvalidInputError("ratios and envelopes must be non-empty and aligned")
    pos = ratios > 0
    if not np.any(pos):
        return 0.0
    return float(np.exp(np.max(np.log(ratios[pos]) - le[pos])))
