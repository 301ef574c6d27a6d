"""Rate experiments, log-log slope fits and report emission.

Every (n, repetition) task draws from its own Philox stream keyed by
``(seed, n index, rep)``; results are therefore identical for any worker count.
"""

import csv
import io
import json
import math
import os
import platform
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
import scipy
from scipy import stats
from scipy.special import ndtri

from ._rng import derive_seed
from .adapted import aw_exact
from .errors import InvalidInputError, ResourceCapError
from .measure import DiscreteMeasure, Sampler, sample_empirical
from .ot import CostSpec, wasserstein_discrete
from .smooth_aw import MCConfig, smooth_aw_upper
from .smoothing import DEFAULT_QUAD_NODES

__all__ = [
    "ExperimentConfig",
    "RateRow",
    "SlopeFit",
    "RateReport",
    "fit_loglog_slope",
    "run_rate_experiment",
    "run_sharpness_experiment",
    "run_nonconvergence_experiment",
    "sharpness_value",
    "gaussian_ar_tree",
    "emit_report",
    "load_rows_csv",
    "NONCONV_MAX_N",
]

NONCONV_MAX_N = 2048


@dataclass(frozen=True)
class ExperimentConfig:
    """Settings of a rate experiment.

    ``sampler`` is a :class:`Sampler` (or its dict form). ``n_grid`` must be
    strictly increasing with at least two entries and ``reps >= 3``.
    """

    name: str = "fast"
    sampler: object = None
    n_grid: tuple = (64, 128, 256, 512, 1024, 2048, 4096)
    reps: int = 50
    sigma: float = 1.0
    p: float = 2.0
    beta: float = None
    mc_samples: int = 64
    quad: int = DEFAULT_QUAD_NODES
    seed: int = 0
    out_dir: str = "."
    mode: str = "compact"
    reference: str = "independent"
    tree_k: int = 32
    replace_with_target: bool = False

    def __post_init__(self):
        grid = tuple(int(n) for n in self.n_grid)
        if len(grid) < 2:
            raise InvalidInputError("n_grid needs at least two entries")
        if any(b <= a for a, b in zip(grid, grid[1:])) or grid[0] < 1:
            raise InvalidInputError(f"n_grid must be strictly increasing positive integers, got {grid}")
        object.__setattr__(self, "n_grid", grid)
        if int(self.reps) != self.reps or self.reps < 3:
            raise InvalidInputError(f"reps must be an integer >= 3, got {self.reps}")
        if not self.sigma > 0:
            raise InvalidInputError(f"sigma must be positive, got {self.sigma}")
        if not self.p >= 1:
            raise InvalidInputError(f"p must be >= 1, got {self.p}")
        if isinstance(self.sampler, dict):
            object.__setattr__(self, "sampler", Sampler.from_dict(self.sampler))
        if self.reference not in ("independent", "tree"):
            raise InvalidInputError(f"reference must be 'independent' or 'tree', got {self.reference!r}")

    @classmethod
    def from_dict(cls, doc):
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise InvalidInputError(f"unknown config keys: {sorted(unknown)}")
        return cls(**doc)

    @classmethod
    def from_json(cls, source):
        if hasattr(source, "read"):
            text = source.read()
        else:
            text = Path(source).read_text(encoding="utf-8")
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise InvalidInputError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise InvalidInputError("config must be a JSON object")
        return cls.from_dict(doc)

    def to_dict(self):
        d = asdict(self)
        d["sampler"] = self.sampler.to_dict() if isinstance(self.sampler, Sampler) else self.sampler
        d["n_grid"] = list(self.n_grid)
        return d


@dataclass(frozen=True)
class RateRow:
    n: int
    rep: int
    estimate: float
    se: float = 0.0
    series: str = "estimate"
    prefactor: float = 1.0


@dataclass(frozen=True)
class SlopeFit:
    """OLS fit of ``log mean`` on ``log n`` with HC1 robust 95% interval."""

    slope: float
    intercept: float
    ci: tuple
    se: float
    points: tuple


@dataclass
class RateReport:
    name: str
    rows: list
    fit: SlopeFit = None
    degenerate: bool = False
    series_fits: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    @property
    def slope(self):
        return float("nan") if self.fit is None else self.fit.slope

    @property
    def slope_ci(self):
        return (float("nan"), float("nan")) if self.fit is None else self.fit.ci

    def series(self, name):
        return [r for r in self.rows if r.series == name]

    def medians(self, name):
        out = {}
        for n in sorted({r.n for r in self.series(name)}):
            out[n] = float(np.median([r.estimate for r in self.series(name) if r.n == n]))
        return out

    def means(self, name="estimate"):
        out = {}
        for n in sorted({r.n for r in self.series(name)}):
            vals = [r.estimate for r in self.series(name) if r.n == n]
            out[n] = math.fsum(vals) / len(vals)
        return out


# -- slope fitting -------------------------------------------------------------------------


def fit_loglog_slope(rows, series=None):
    """OLS of ``log(mean estimate)`` on ``log n`` with heteroskedasticity-robust errors.

    Parameters
    ----------
    rows : iterable of RateRow or (n, estimate) pairs
        Estimates are averaged per ``n`` (compensated summation).
    series : str, optional
        Restrict ``RateRow`` input to one series.

    Returns
    -------
    SlopeFit
        ``ci`` is ``slope +- t_{0.975, k-2} * se`` with the HC1 sandwich
        standard error over the ``k`` distinct ``n``; it is ``(-inf, inf)`` when
        ``k = 2``.
    """
    groups = {}
    for r in rows:
        if isinstance(r, RateRow):
            if series is not None and r.series != series:
                continue
            n, v = r.n, r.estimate
        else:
            n, v = r[0], r[-1] if len(r) == 2 else r[2]
        groups.setdefault(int(n), []).append(float(v))
    if len(groups) < 2:
        raise InvalidInputError("need at least two distinct n")
    ns = np.array(sorted(groups), dtype=float)
    means = np.array([math.fsum(groups[int(n)]) / len(groups[int(n)]) for n in ns])
    if np.any(means <= 0) or not np.all(np.isfinite(means)):
        raise InvalidInputError("mean estimates must be positive and finite")
    x = np.log(ns)
    y = np.log(means)
    k = x.size
    xm = math.fsum(x) / k
    ym = math.fsum(y) / k
    sxx = math.fsum((x - xm) ** 2)
    slope = math.fsum((x - xm) * (y - ym)) / sxx
    intercept = ym - slope * xm
    resid = y - (intercept + slope * x)
    if k > 2:
        hc = math.fsum(((x - xm) ** 2) * resid**2) / sxx**2 * k / (k - 2)
        se = math.sqrt(hc)
        half = stats.t.ppf(0.975, k - 2) * se
        ci = (slope - half, slope + half)
    else:
        se = float("inf")
        ci = (-math.inf, math.inf)
    return SlopeFit(float(slope), float(intercept), (float(ci[0]), float(ci[1])), float(se), tuple(zip(ns.tolist(), means.tolist())))


def _finalize(name, rows, metadata, primary):
    rep = RateReport(name, rows, metadata=metadata)
    for s in sorted({r.series for r in rows}):
        try:
            rep.series_fits[s] = fit_loglog_slope(rows, series=s)
        except InvalidInputError:
            rep.series_fits[s] = None
    rep.fit = rep.series_fits.get(primary)
    rep.degenerate = rep.fit is None
    return rep


def _metadata(cfg):
    return {
        "config": cfg.to_dict() if cfg is not None else None,
        "versions": {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
    }


def _map(fn, tasks, workers):
    if workers is None or workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=int(workers)) as ex:
        return list(ex.map(fn, tasks, chunksize=max(1, len(tasks) // (4 * workers))))


# -- fast rate ----------------------------------------------------------------------------


def _target_measure(cfg):
    s = cfg.sampler
    if not isinstance(s, Sampler) or s.name != "finite":
        raise InvalidInputError("the rate experiment needs a finitely supported target ('finite' sampler)")
    return s.params["measure"]


def _rate_task(args):
    cfg, i, n, rep = args
    mu = _target_measure(cfg)
    if cfg.replace_with_target:
        nu = mu
    else:
        nu = sample_empirical(cfg.sampler, n, derive_seed(cfg.seed, i, rep, 0))
    mc = MCConfig(cfg.mc_samples, derive_seed(cfg.seed, i, rep, 1), cfg.quad)
    est = smooth_aw_upper(mu, nu, cfg.sigma, cfg.p, cfg.mode, cfg.beta, mc)
    return RateRow(n, rep, est.structural, est.standard_error / est.prefactor, "estimate", est.prefactor)


def run_rate_experiment(cfg, workers=None):
    """Structural upper bound between ``mu`` and ``mu_hat_n`` over the ``n`` grid.

    Returns
    -------
    RateReport
        One row per ``(n, rep)``; the slope is fitted to the per-``n`` means.
        All-zero estimates give a report flagged ``degenerate`` with no fit.
    """
    _target_measure(cfg)
    tasks = [(cfg, i, n, rep) for i, n in enumerate(cfg.n_grid) for rep in range(cfg.reps)]
    rows = _map(_rate_task, tasks, workers)
    return _finalize(cfg.name, rows, _metadata(cfg), "estimate")


# -- sharpness ----------------------------------------------------------------------------


def sharpness_value(n):
    """``E|Z_n - 1/2|`` for ``Z_n ~ Binomial(n, 1/2) / n``, as an exact fraction."""
    if int(n) != n or n < 1:
        raise InvalidInputError(f"n must be a positive integer, got {n}")
    n = int(n)
    total = 0
    c = 1
    for k in range(n + 1):
        total += c * abs(2 * k - n)
        c = c * (n - k) // (k + 1)
    return Fraction(total, 2 * n * 2**n)


def run_sharpness_experiment(n_grid):
    """Exact ``E|Z_n - 1/2|`` over ``n_grid`` with its log-log slope."""
    grid = [int(n) for n in n_grid]
    if len(grid) < 2 or any(b <= a for a, b in zip(grid, grid[1:])):
        raise InvalidInputError("n_grid must be strictly increasing with at least two entries")
    rows = [RateRow(n, 0, float(sharpness_value(n))) for n in grid]
    meta = {"config": {"name": "sharp", "n_grid": grid}}
    return _finalize("sharp", rows, meta, "estimate")


# -- non-convergence ----------------------------------------------------------------------


def gaussian_ar_tree(T=2, a=0.5, noise=1.0, x0_scale=1.0, k=32):
    """Quantized Gaussian autoregression with ``k`` equally likely branches per step.

    Each step uses the midpoint quantiles ``Phi^{-1}((i + 1/2)/k)``, so every
    kernel is a ``k``-point approximation of the Gaussian transition.
    """
    z = ndtri((np.arange(k) + 0.5) / k)
    z -= z.mean()
    paths = np.zeros((k**T, T))
    grid = np.indices((k,) * T).reshape(T, -1).T
    paths[:, 0] = x0_scale * z[grid[:, 0]]
    for t in range(1, T):
        paths[:, t] = a * paths[:, t - 1] + noise * z[grid[:, t]]
    return DiscreteMeasure(paths[:, :, None])


def _nonconv_task(args):
    cfg, i, n, rep = args
    x = sample_empirical(cfg.sampler, n, derive_seed(cfg.seed, i, rep, 0))
    if cfg.reference == "tree":
        p = cfg.sampler.params
        y = gaussian_ar_tree(
            int(p.get("T", 2)), float(p.get("a", 0.5)), float(p.get("noise", 1.0)), float(p.get("x0_scale", 1.0)), cfg.tree_k
        )
    else:
        y = sample_empirical(cfg.sampler, n, derive_seed(cfg.seed, i, rep, 1))
    aw, _ = aw_exact(x, y, 1.0, with_plan=False)
    w, _ = wasserstein_discrete(x, y, CostSpec(1.0, "euclidean_power"))
    return [RateRow(n, rep, aw, 0.0, "aw"), RateRow(n, rep, w, 0.0, "w")]


def run_nonconvergence_experiment(cfg, workers=None):
    """``AW_1`` and ``W_1`` between empirical measures of a Gaussian autoregression.

    With ``reference="independent"`` both arguments are independent empirical
    measures of size ``n``. With ``reference="tree"`` the second argument is a
    fixed quantized tree (:func:`gaussian_ar_tree`) whose kernels have ``tree_k``
    branches.
    """
    if not isinstance(cfg.sampler, Sampler) or cfg.sampler.name != "gaussian_ar":
        raise InvalidInputError("the non-convergence experiment needs the 'gaussian_ar' sampler")
    if cfg.n_grid[-1] > NONCONV_MAX_N:
        raise ResourceCapError(f"n is capped at {NONCONV_MAX_N} for the exact DPP")
    tasks = [(cfg, i, n, rep) for i, n in enumerate(cfg.n_grid) for rep in range(cfg.reps)]
    rows = [r for pair in _map(_nonconv_task, tasks, workers) for r in pair]
    return _finalize(cfg.name, rows, _metadata(cfg), "aw")


# -- reports ------------------------------------------------------------------------------

_CSV_FIELDS = ("n", "rep", "series", "estimate", "se", "prefactor")


def _rows_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(_CSV_FIELDS)
    for r in rows:
        w.writerow([r.n, r.rep, r.series, repr(float(r.estimate)), repr(float(r.se)), repr(float(r.prefactor))])
    return buf.getvalue()


def load_rows_csv(source):
    """Read rows written by :func:`emit_report`."""
    text = Path(source).read_text(encoding="utf-8") if not hasattr(source, "read") else source.read()
    out = []
    for rec in csv.DictReader(io.StringIO(text)):
        out.append(
            RateRow(int(rec["n"]), int(rec["rep"]), float(rec["estimate"]), float(rec["se"]), rec["series"], float(rec["prefactor"]))
        )
    return out


def _finite(v):
    return v if math.isfinite(v) else None


def _fit_dict(fit):
    if fit is None:
        return None
    return {
        "slope": fit.slope,
        "intercept": fit.intercept,
        "ci": [_finite(c) for c in fit.ci],
        "se": _finite(fit.se),
        "points": [list(p) for p in fit.points],
    }


def _report_json(rep):
    doc = {
        "name": rep.name,
        "degenerate": rep.degenerate,
        "slope": None if rep.fit is None else rep.fit.slope,
        "slope_ci": None if rep.fit is None else [_finite(c) for c in rep.fit.ci],
        "fit": _fit_dict(rep.fit),
        "series_fits": {k: _fit_dict(v) for k, v in rep.series_fits.items()},
        "metadata": rep.metadata,
    }
    return json.dumps(doc, indent=2, sort_keys=True, default=str, allow_nan=False) + "\n"


def _svg(rep):
    """Log-log scatter of per-``n`` means with the fitted line."""
    fit = rep.fit
    if fit is None:
        raise InvalidInputError("cannot plot a degenerate report")
    pts = fit.points
    lx = np.log10([p[0] for p in pts])
    ly = np.log10([p[1] for p in pts])
    W, H, M = 480, 360, 48
    x0, x1 = lx.min(), lx.max()
    y0, y1 = ly.min(), ly.max()
    if x1 == x0:
        x1 = x0 + 1
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pad = 0.05 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad

    def sx(v):
        return M + (v - x0) / (x1 - x0) * (W - 2 * M)

    def sy(v):
        return H - M - (v - y0) / (y1 - y0) * (H - 2 * M)

    ln10 = math.log(10)
    fy = [(fit.intercept + fit.slope * x * ln10) / ln10 for x in (x0, x1)]
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>',
        f'<line class="axis" x1="{M}" y1="{H - M}" x2="{W - M}" y2="{H - M}" stroke="black"/>',
        f'<line class="axis" x1="{M}" y1="{M}" x2="{M}" y2="{H - M}" stroke="black"/>',
        f'<text x="{W / 2}" y="{H - 12}" text-anchor="middle" font-size="12">log10 n</text>',
        f'<text x="14" y="{H / 2}" font-size="12" transform="rotate(-90 14 {H / 2})" text-anchor="middle">log10 mean</text>',
        f'<text x="{W / 2}" y="24" text-anchor="middle" font-size="13">{rep.name}: slope {fit.slope:.4f}</text>',
        f'<line class="fit" x1="{sx(x0):.2f}" y1="{sy(fy[0]):.2f}" x2="{sx(x1):.2f}" y2="{sy(fy[1]):.2f}" stroke="red"/>',
    ]
    for a, b in zip(lx, ly):
        out.append(f'<circle class="point" cx="{sx(a):.2f}" cy="{sy(b):.2f}" r="3" fill="black"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_report(report, formats=("csv", "json"), out_dir=".", stem=None):
    """Write ``report`` as CSV rows, JSON metadata/fit and/or an SVG plot.

    Returns
    -------
    dict
        Format -> written path.
    """
    if not report.rows:
        raise InvalidInputError("report has no rows")
    bad = set(formats) - {"csv", "json", "svg"}
    if bad:
        raise InvalidInputError(f"unknown formats: {sorted(bad)}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = stem or report.name
    written = {}
    for fmt in formats:
        path = out / f"{stem}.{fmt}"
        text = {"csv": _rows_csv, "json": _report_json, "svg": _svg}[fmt](report if fmt != "csv" else report.rows)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        written[fmt] = os.fspath(path)
    return written
