"""Finitely supported path measures.

A path lives in ``(R^d)^T`` and is stored time-major as a ``(T, d)`` array, so
the prefix ``x_{1:t}`` is the contiguous slice ``path[:t]``. A measure stacks
``n`` paths into an ``(n, T, d)`` array with matching positive weights.
"""

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from ._rng import make_rng
from .errors import InvalidInputError, MomentOverflowError

__all__ = [
    "DiscreteMeasure",
    "MomentReport",
    "Sampler",
    "load_measure",
    "dump_measure",
    "measure_to_csv",
    "sample_empirical",
    "moments",
    "exp_moment",
    "log_exp_moment",
    "information_pair",
]

INPUT_WEIGHT_TOL = 1e-9
INTERNAL_WEIGHT_TOL = 1e-12
_LOG_FLOAT_MAX = math.log(np.finfo(float).max)


def _readonly(a):
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """Weighted atoms on path space.

    Parameters
    ----------
    paths : array_like, shape (n, T, d) or (n, T)
        Support paths. A 2-D array is read as ``d = 1``.
    weights : array_like, shape (n,), optional
        Positive weights summing to 1 within ``1e-9``; they are renormalized.
        Uniform if omitted.
    weight_floor : float
        Reject any weight at or below this value after renormalization.
    """

    paths: np.ndarray
    weights: np.ndarray = None
    weight_floor: float = field(default=0.0, repr=False)

    def __post_init__(self):
        paths = np.asarray(self.paths, dtype=float)
        if paths.ndim == 2:
            paths = paths[:, :, None]
        if paths.ndim != 3 or paths.shape[0] < 1 or paths.shape[1] < 1 or paths.shape[2] < 1:
            raise InvalidInputError(f"paths must have shape (n, T, d) with n, T, d >= 1, got {paths.shape}")
        if not np.all(np.isfinite(paths)):
            raise InvalidInputError("paths contain non-finite entries")
        n = paths.shape[0]
        if self.weights is None:
            weights = np.full(n, 1.0 / n)
        else:
            weights = np.asarray(self.weights, dtype=float).reshape(-1)
            if weights.shape[0] != n:
                raise InvalidInputError(f"{weights.shape[0]} weights for {n} paths")
            if not np.all(np.isfinite(weights)) or np.any(weights <= 0):
                raise InvalidInputError("weights must be finite and strictly positive")
            total = math.fsum(weights)
            if abs(total - 1.0) > INPUT_WEIGHT_TOL:
                raise InvalidInputError(f"weights sum to {total!r}, not 1 within {INPUT_WEIGHT_TOL}")
            weights = weights / total
        if np.any(weights <= self.weight_floor):
            raise InvalidInputError(f"a weight falls at or below the floor {self.weight_floor}")
        # -0.0 -> 0.0 so that prefix grouping by bytes agrees with ==
        object.__setattr__(self, "paths", _readonly(paths + 0.0))
        object.__setattr__(self, "weights", _readonly(weights))

    @classmethod
    def uniform(cls, paths):
        return cls(paths)

    @classmethod
    def dirac(cls, path):
        path = np.asarray(path, dtype=float)
        if path.ndim == 1:
            path = path[:, None]
        return cls(path[None], [1.0])

    @property
    def n(self):
        return self.paths.shape[0]

    @property
    def T(self):
        return self.paths.shape[1]

    @property
    def d(self):
        return self.paths.shape[2]

    @property
    def shape(self):
        return (self.T, self.d)

    def flat(self, t=None):
        """Paths (or prefixes of length ``t``) flattened to ``(n, t*d)``."""
        t = self.T if t is None else t
        return self.paths[:, :t, :].reshape(self.n, t * self.d)

    def prefix(self, t):
        return self.paths[:, :t, :]

    def marginal(self, t):
        """Law of the ``t``-th coordinate (1-based) as a one-step measure."""
        if not 1 <= t <= self.T:
            raise InvalidInputError(f"time index {t} outside 1..{self.T}")
        return DiscreteMeasure(self.paths[:, t - 1 : t, :], self.weights).compress()

    def head(self, t):
        """Law of the prefix ``x_{1:t}``."""
        if not 1 <= t <= self.T:
            raise InvalidInputError(f"time index {t} outside 1..{self.T}")
        return DiscreteMeasure(self.paths[:, :t, :], self.weights).compress()

    def compress(self):
        """Merge atoms with identical paths, summing their weights."""
        flat = self.flat()
        uniq, inverse = np.unique(flat, axis=0, return_inverse=True)
        if uniq.shape[0] == self.n:
            return self
        inverse = inverse.reshape(-1)
        w = np.zeros(uniq.shape[0])
        np.add.at(w, inverse, self.weights)
        return DiscreteMeasure(uniq.reshape(-1, self.T, self.d), w / math.fsum(w))

    def canonical(self):
        """Merged atoms in lexicographic order; equal measures give equal arrays."""
        flat = self.flat()
        uniq, inverse = np.unique(flat, axis=0, return_inverse=True)
        w = np.zeros(uniq.shape[0])
        np.add.at(w, inverse.reshape(-1), self.weights)
        return uniq.reshape(-1, self.T, self.d), w / math.fsum(w)

    def translate(self, shift):
        shift = np.broadcast_to(np.asarray(shift, dtype=float), (self.T, self.d))
        return DiscreteMeasure(self.paths + shift[None], self.weights)

    def mean(self, t=None):
        return self.weights @ self.flat(t)

    def variance_trace(self, t=None):
        x = self.flat(t)
        return float(self.weights @ np.sum((x - self.mean(t)) ** 2, axis=1))

    def to_dict(self):
        return {
            "T": self.T,
            "d": self.d,
            "paths": self.paths.tolist(),
            "weights": self.weights.tolist(),
        }

    def __repr__(self):
        return f"DiscreteMeasure(n={self.n}, T={self.T}, d={self.d})"


@dataclass(frozen=True)
class MomentReport:
    mean: np.ndarray
    variance_trace: float
    r: float
    m_r: float


def moments(m, r=2.0):
    """Mean, trace of covariance and ``M_r = sum_j w_j |x_j|^r`` of a measure."""
    if not r > 0:
        raise InvalidInputError(f"moment order must be positive, got {r}")
    x = m.flat()
    mean = m.weights @ x
    var = math.fsum(m.weights * np.sum((x - mean) ** 2, axis=1))
    norms = np.sqrt(np.sum(x**2, axis=1))
    return MomentReport(mean=mean, variance_trace=var, r=float(r), m_r=math.fsum(m.weights * norms**r))


def log_exp_moment(m, theta):
    """``log sum_j w_j exp(theta |x_j|^2)`` evaluated stably."""
    theta = float(theta)
    if not math.isfinite(theta):
        raise InvalidInputError("theta must be finite")
    sq = np.sum(m.flat() ** 2, axis=1)
    return float(logsumexp(theta * sq, b=m.weights))


def exp_moment(m, theta):
    """Exponential square moment ``E_theta(m) = sum_j w_j exp(theta |x_j|^2)``.

    Raises
    ------
    MomentOverflowError
        If the value is not representable as a float.
    """
    lv = log_exp_moment(m, theta)
    if lv > _LOG_FLOAT_MAX:
        raise MomentOverflowError(f"exp moment overflows (log value {lv:.6g})")
    return math.exp(lv)


# -- I/O ---------------------------------------------------------------------


def _parse_json_measure(doc):
    try:
        T = int(doc["T"])
        d = int(doc["d"])
        paths = doc["paths"]
        weights = doc.get("weights")
    except (KeyError, AttributeError, TypeError, ValueError) as exc:
        raise InvalidInputError(f"malformed measure document: {exc}") from exc
    try:
        arr = np.asarray(paths, dtype=float)
    except (TypeError, ValueError) as exc:
        raise InvalidInputError("inconsistent path shapes") from exc
    if arr.ndim != 3 or arr.shape[1:] != (T, d):
        raise InvalidInputError(f"paths have shape {arr.shape}, expected (n, {T}, {d})")
    return DiscreteMeasure(arr, weights)


def _parse_csv_measure(text):
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration as exc:
        raise InvalidInputError("empty CSV measure") from exc
    if not header or header[-1].strip() != "weight":
        raise InvalidInputError("CSV measure must end with a 'weight' column")
    cols = [h.strip() for h in header[:-1]]
    T = d = 0
    for h in cols:
        try:
            ts, cs = h.split("_")
            T = max(T, int(ts[1:]))
            d = max(d, int(cs[1:]))
        except ValueError as exc:
            raise InvalidInputError(f"bad CSV column {h!r}") from exc
    if T * d != len(cols):
        raise InvalidInputError("CSV columns do not form a T x d grid")
    rows = [r for r in reader if r]
    try:
        data = np.array([[float(v) for v in r] for r in rows])
    except ValueError as exc:
        raise InvalidInputError("non-numeric CSV entry") from exc
    if data.ndim != 2 or data.shape[1] != T * d + 1:
        raise InvalidInputError("ragged CSV rows")
    return DiscreteMeasure(data[:, :-1].reshape(-1, T, d), data[:, -1])


def load_measure(source, format="json"):
    """Read a measure file.

    ``source`` may be a path, a text/binary stream or bytes. ``format`` is
    ``"json"`` (``{"T", "d", "paths", "weights"}``) or ``"csv"`` (columns
    ``t1_c1..tT_cd, weight``).
    """
    if isinstance(source, (bytes, bytearray)):
        text = bytes(source).decode("utf-8")
    elif hasattr(source, "read"):
        raw = source.read()
        text = raw.decode("utf-8") if isinstance(raw, bytes) else raw
    else:
        with open(source, encoding="utf-8") as fh:
            text = fh.read()
    if format == "json":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise InvalidInputError(f"malformed JSON: {exc}") from exc
        return _parse_json_measure(doc)
    if format == "csv":
        return _parse_csv_measure(text)
    raise InvalidInputError(f"unknown measure format {format!r}")


def dump_measure(m, fh=None):
    """Serialize to the JSON measure format. Returns the string if ``fh`` is None."""
    text = json.dumps(m.to_dict())
    if fh is None:
        return text
    fh.write(text)


def measure_to_csv(m, fh=None):
    buf = io.StringIO() if fh is None else fh
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"t{t + 1}_c{c + 1}" for t in range(m.T) for c in range(m.d)] + ["weight"])
    for x, wt in zip(m.flat(), m.weights):
        w.writerow([repr(float(v)) for v in x] + [repr(float(wt))])
    if fh is None:
        return buf.getvalue()


# -- sampling ------------------------------------------------------------------


@dataclass(frozen=True)
class Sampler:
    """A named path generator.

    ``finite``
        i.i.d. resampling of a finitely supported measure; ``params["measure"]``.
    ``gaussian_ar``
        ``X_1 ~ N(0, x0_scale^2 I)``, ``X_{t+1} = a X_t + noise * eps``; params
        ``T``, ``d`` (1), ``a`` (0.5), ``noise`` (1.0), ``x0_scale`` (1.0).
    ``gaussian_iid``
        independent ``N(loc, scale^2)`` coordinates; params ``T``, ``d``, ``loc``, ``scale``.
    """

    name: str
    params: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, doc):
        doc = dict(doc)
        name = doc.pop("name", None)
        if name is None:
            raise InvalidInputError("a sampler document needs a 'name'")
        params = doc.pop("params", doc)
        if name == "finite" and isinstance(params.get("measure"), dict):
            params = {**params, "measure": _parse_json_measure(params["measure"])}
        return cls(name, params)

    def to_dict(self):
        params = dict(self.params)
        if isinstance(params.get("measure"), DiscreteMeasure):
            params["measure"] = params["measure"].to_dict()
        return {"name": self.name, "params": params}


def _positive_int(params, key, default=None):
    v = params.get(key, default)
    if v is None or int(v) != v or int(v) < 1:
        raise InvalidInputError(f"sampler parameter {key!r} must be a positive integer, got {v!r}")
    return int(v)


def sample_empirical(sampler, n, seed):
    """Empirical measure of ``n`` i.i.d. paths; deterministic in ``(sampler, n, seed)``."""
    if isinstance(sampler, dict):
        sampler = Sampler.from_dict(sampler)
    if int(n) != n or n < 1:
        raise InvalidInputError(f"sample size must be a positive integer, got {n!r}")
    n = int(n)
    rng = make_rng(seed)
    p = sampler.params
    if sampler.name == "finite":
        mu = p.get("measure")
        if not isinstance(mu, DiscreteMeasure):
            raise InvalidInputError("finite sampler needs a DiscreteMeasure under 'measure'")
        idx = rng.choice(mu.n, size=n, p=mu.weights)
        paths = mu.paths[idx]
    elif sampler.name == "gaussian_ar":
        T = _positive_int(p, "T")
        d = _positive_int(p, "d", 1)
        a = float(p.get("a", 0.5))
        noise = float(p.get("noise", 1.0))
        x0 = float(p.get("x0_scale", 1.0))
        if not (math.isfinite(a) and noise > 0 and x0 > 0):
            raise InvalidInputError("gaussian_ar needs finite a and positive noise, x0_scale")
        eps = rng.standard_normal((n, T, d))
        paths = np.empty((n, T, d))
        paths[:, 0] = x0 * eps[:, 0]
        for t in range(1, T):
            paths[:, t] = a * paths[:, t - 1] + noise * eps[:, t]
    elif sampler.name == "gaussian_iid":
        T = _positive_int(p, "T")
        d = _positive_int(p, "d", 1)
        scale = float(p.get("scale", 1.0))
        if not scale > 0:
            raise InvalidInputError("gaussian_iid needs positive scale")
        paths = float(p.get("loc", 0.0)) + scale * rng.standard_normal((n, T, d))
    else:
        raise InvalidInputError(f"unknown sampler {sampler.name!r}")
    return DiscreteMeasure(paths)


def information_pair(eps):
    """The pair ``(mu_eps, mu)`` with ``mu = (d_(0,1) + d_(0,-1))/2`` and
    ``mu_eps = (d_(eps,1) + d_(-eps,-1))/2``."""
    mu = DiscreteMeasure(np.array([[0.0, 1.0], [0.0, -1.0]]), [0.5, 0.5])
    mu_eps = DiscreteMeasure(np.array([[eps, 1.0], [-eps, -1.0]]), [0.5, 0.5])
    return mu_eps, mu
