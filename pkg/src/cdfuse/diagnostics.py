"""Point and interval summaries, discrepancy detection and projection geometry.

Joint densities of (p0, p1) are passed around as log-density callables
``logjoint(p0, p1)`` accepting broadcastable arrays; normalization is not
required.
"""
from __future__ import annotations

import csv
import io
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import optimize, special

from .errors import UsageError
from .grids import NORMALIZATION_TOL, GridDensity, invert_cdf

STATISTICS = ("mode", "median", "mean")
INTERVAL_LEVELS = {"I80": 0.10, "I90": 0.05, "I95": 0.025}


# ---------------------------------------------------------------------------
# summaries
# ---------------------------------------------------------------------------


def _parabolic_peak(x, y, i):
    """Vertex of the parabola through (x[i-1..i+1], y[i-1..i+1]); x may be non-uniform."""
    if i == 0 or i == len(x) - 1:
        return float(x[i])
    x0, x1, x2 = x[i - 1], x[i], x[i + 1]
    y0, y1, y2 = y[i - 1], y[i], y[i + 1]
    den = (x0 - x1) * (x0 - x2) * (x1 - x2)
    a = (x2 * (y1 - y0) + x1 * (y0 - y2) + x0 * (y2 - y1)) / den
    b = (x2 * x2 * (y0 - y1) + x1 * x1 * (y2 - y0) + x0 * x0 * (y1 - y2)) / den
    if not a < 0:
        return float(x1)
    v = -b / (2 * a)
    return float(min(max(v, x0), x2))


def grid_mode(g: GridDensity) -> float:
    """Grid argmax refined by a three-point parabola."""
    i = int(np.argmax(g.values))
    return _parabolic_peak(g.grid, g.values, i)


@dataclass(frozen=True)
class SummaryReport:
    """Mode, median, mean and equal-tailed 80/90/95% intervals."""

    mode: float
    median: float
    mean: float
    I80: tuple
    I90: tuple
    I95: tuple
    label: str = ""

    def value(self, statistic: str) -> float:
        if statistic not in STATISTICS:
            raise UsageError(f"statistic must be one of {STATISTICS}, got {statistic!r}")
        return float(getattr(self, statistic))

    def row(self, digits: int = 4) -> list:
        vals = [self.mode, self.median, self.mean, *self.I80, *self.I90, *self.I95]
        return [self.label] + [f"{v:.{digits}f}" for v in vals]

    def as_dict(self) -> dict:
        return {"label": self.label, "mode": self.mode, "median": self.median, "mean": self.mean,
                "I80": list(self.I80), "I90": list(self.I90), "I95": list(self.I95)}


CSV_HEADER = ["label", "mode", "median", "mean", "I80_lo", "I80_hi", "I90_lo", "I90_hi", "I95_lo", "I95_hi"]


def reports_to_csv(reports: Sequence[SummaryReport], path=None, digits: int = 4) -> str:
    """Rows in the table layout (Mode, Median, Mean, I80, I90, I95)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in reports:
        w.writerow(r.row(digits))
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def summarize(obj, label: str = "") -> SummaryReport:
    """Summarize a normalized GridDensity or a confidence distribution.

    For a GridDensity: mode by grid argmax with parabolic refinement,
    quantiles by inverting the cumulative trapezoid, mean by trapezoid.
    A confidence distribution uses its own quantile function, its mode
    hint when it has one, and its exact mean when known.
    """
    from .cd import ConfDist

    if isinstance(obj, ConfDist):
        q = np.asarray(obj.quantile([0.10, 0.90, 0.05, 0.95, 0.025, 0.975, 0.5]), dtype=float)
        return SummaryReport(obj.mode(), float(q[6]), obj.mean(), (float(q[0]), float(q[1])),
                             (float(q[2]), float(q[3])), (float(q[4]), float(q[5])), label or obj.label)
    if not isinstance(obj, GridDensity):
        raise UsageError(f"cannot summarize {type(obj).__name__}")
    if abs(obj.integral() - 1.0) > NORMALIZATION_TOL:
        raise UsageError(f"density is not normalized (integral {obj.integral():.10g}); call normalize() first")
    cdf = obj.cdf_values()
    q = invert_cdf(obj.grid, cdf, np.array([0.10, 0.90, 0.05, 0.95, 0.025, 0.975, 0.5]))
    return SummaryReport(grid_mode(obj), float(q[6]), obj.mean(), (float(q[0]), float(q[1])),
                         (float(q[2]), float(q[3])), (float(q[4]), float(q[5])), label)


def draws_mode(x, method: str = "kde", bins: int = 100) -> float:
    """Mode of scalar draws: KDE argmax (default) or the midpoint of the fullest histogram bin."""
    x = np.asarray(x, dtype=float).ravel()
    if method == "kde":
        from .bayes.posterior import kde_from_samples

        return grid_mode(kde_from_samples(x, transform=None))
    if method == "bins":
        if int(bins) != bins or bins < 1:
            raise UsageError("bins must be a positive integer")
        counts, edges = np.histogram(x, bins=int(bins))
        k = int(np.argmax(counts))
        return float(0.5 * (edges[k] + edges[k + 1]))
    raise UsageError(f"method must be 'kde' or 'bins', got {method!r}")


# ---------------------------------------------------------------------------
# discrepancy
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DiscrepancyVerdict:
    """Whether the posterior value lies outside the prior-likelihood interval."""

    statistic: str
    prior_value: float
    likelihood_value: float
    posterior_value: float
    discrepant: bool
    direction: Optional[tuple] = None
    by_statistic: dict = field(default_factory=dict, compare=False)

    @property
    def any_statistic(self) -> bool:
        return any(self.by_statistic.values()) if self.by_statistic else self.discrepant


def _is_discrepant(prior, lik, post) -> bool:
    return not (min(prior, lik) <= post <= max(prior, lik))


def _as_report(obj) -> SummaryReport:
    return obj if isinstance(obj, SummaryReport) else summarize(obj)


def detect_discrepancy(prior_g, lik_g, post_g, statistic: str = "mean", direction=None) -> DiscrepancyVerdict:
    """Verdict on ``statistic``; the other two statistics are recorded in ``by_statistic``.

    Inputs may be GridDensity, ConfDist or precomputed SummaryReport objects.
    """
    if statistic not in STATISTICS:
        raise UsageError(f"statistic must be one of {STATISTICS}, got {statistic!r}")
    reps = [_as_report(x) for x in (prior_g, lik_g, post_g)]
    flags = {s: _is_discrepant(*(r.value(s) for r in reps)) for s in STATISTICS}
    a, b, c = (r.value(statistic) for r in reps)
    return DiscrepancyVerdict(statistic, a, b, c, flags[statistic], direction, flags)


# ---------------------------------------------------------------------------
# joint-density geometry
# ---------------------------------------------------------------------------


def _cell_grid(resolution: int):
    u = (np.arange(resolution) + 0.5) / resolution
    return np.meshgrid(u, u, indexing="ij")


def _joint_weights(logjoint: Callable, resolution: int) -> np.ndarray:
    P0, P1 = _cell_grid(resolution)
    with np.errstate(divide="ignore", invalid="ignore"):
        lf = np.asarray(logjoint(P0, P1), dtype=float)
    lf = np.where(np.isnan(lf), -np.inf, lf)
    top = np.max(lf)
    if not np.isfinite(top):
        raise UsageError("joint density vanishes on the evaluation grid")
    return np.exp(lf - top)


def _project_mode(weights, P0, P1, a, b, n_bins):
    """Mode of the density of a p0 + b p1, by cloud-in-cell binning of grid masses."""
    lo = min(0.0, a) + min(0.0, b)
    hi = max(0.0, a) + max(0.0, b)
    s = a * P0 + b * P1
    pos = (s - lo) / (hi - lo) * (n_bins - 1)
    i = np.clip(np.floor(pos).astype(np.int64), 0, n_bins - 2)
    frac = pos - i
    mass = np.bincount(i.ravel(), (weights * (1.0 - frac)).ravel(), minlength=n_bins)
    mass += np.bincount(i.ravel() + 1, (weights * frac).ravel(), minlength=n_bins)
    centres = np.linspace(lo, hi, n_bins)
    return _parabolic_peak(centres, mass, int(np.argmax(mass)))


def directional_scan(prior_j: Callable, lik_j: Callable, post_j: Callable, angles: int = 360,
                     resolution: int = 512, threads: Optional[int] = None):
    """Mode-discrepancy verdicts for projections onto a p0 + b p1 = cos(phi) p0 + sin(phi) p1.

    The three joints are tabulated on a ``resolution``^2 cell grid of the
    unit square; for each direction the cell masses are binned along the
    projection and the projected modes compared. Opposite directions are
    exact reflections of each other, so only one of each pair is computed.
    Results are ordered by angle.
    """
    if angles < 1:
        raise UsageError("need at least one angle")
    P0, P1 = _cell_grid(resolution)
    weights = [_joint_weights(j, resolution) for j in (prior_j, lik_j, post_j)]
    phis = 2.0 * math.pi * np.arange(angles) / angles
    half = angles // 2 if angles % 2 == 0 else angles

    def one(k):
        a, b = math.cos(phis[k]), math.sin(phis[k])
        return [_project_mode(w, P0, P1, a, b, resolution) for w in weights]

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            modes = list(ex.map(one, range(half)))
    else:
        modes = [one(k) for k in range(half)]
    if half < angles:
        modes = modes + [[-m for m in trio] for trio in modes]
    out = []
    for k in range(angles):
        a, b = math.cos(phis[k]), math.sin(phis[k])
        m = modes[k]
        flag = _is_discrepant(*m)
        out.append((round(float(np.degrees(phis[k])), 9),
                    DiscrepancyVerdict("mode", m[0], m[1], m[2], flag, (a, b), {"mode": flag})))
    return out


def project_joint_to_delta(logjoint: Callable, resolution: int = 2001, n_nodes: int = 512,
                           chunk: int = 256) -> GridDensity:
    """Density of delta = p1 - p0 by Gauss-Legendre integration along each 45-degree line.

    Uses the same uniform delta grid over [-1, 1] as marginalize_delta and
    provides an independent route to the same density for smooth joints.
    """
    x, w = np.polynomial.legendre.leggauss(n_nodes)
    t = 0.5 * (x + 1.0)
    logw = np.log(0.5 * w)
    grid = np.linspace(-1.0, 1.0, resolution)
    lo = np.maximum(0.0, -grid)
    length = 1.0 - np.abs(grid)
    logv = np.full(resolution, -np.inf)
    for s in range(0, resolution, chunk):
        rows = slice(s, s + chunk)
        L = length[rows][:, None]
        p0 = lo[rows][:, None] + L * t[None, :]
        p1 = p0 + grid[rows][:, None]
        inside = (L > 0) & (p0 > 0) & (p0 < 1) & (p1 > 0) & (p1 < 1)
        with np.errstate(divide="ignore", invalid="ignore"):
            lf = np.asarray(logjoint(np.where(inside, p0, 0.5), np.where(inside, p1, 0.5)), dtype=float)
        lf = np.where(inside & ~np.isnan(lf), lf, -np.inf)
        with np.errstate(divide="ignore"):
            logv[rows] = special.logsumexp(lf + logw[None, :], axis=1) + np.log(L[:, 0])
    finite = np.isfinite(logv)
    if not finite.any():
        raise UsageError("joint density vanishes on every line")
    vals = np.where(finite, np.exp(logv - np.max(logv[finite])), 0.0)
    return GridDensity.from_values(grid, vals)


def joint_mode(logjoint: Callable, resolution: int = 256):
    """(p0, p1) maximizing the joint: grid search polished by Nelder-Mead in logit coordinates."""
    P0, P1 = _cell_grid(resolution)
    with np.errstate(divide="ignore", invalid="ignore"):
        lf = np.asarray(logjoint(P0, P1), dtype=float)
    lf = np.where(np.isnan(lf), -np.inf, lf)
    i, j = np.unravel_index(int(np.argmax(lf)), lf.shape)
    start = special.logit([P0[i, j], P1[i, j]])

    def neg(y):
        p = special.expit(y)
        v = float(logjoint(np.array(p[0]), np.array(p[1])))
        return -v if np.isfinite(v) else np.inf

    res = optimize.minimize(neg, start, method="Nelder-Mead", options={"xatol": 1e-10, "fatol": 1e-12})
    p = special.expit(res.x)
    return float(p[0]), float(p[1])


def contour_export(logjoint: Callable, levels: Sequence[float], resolution: int = 256,
                   normalize: bool = True) -> dict:
    """Iso-density polylines of a joint density on the unit square.

    The density is tabulated at cell centres (scaled to integrate to one
    when ``normalize`` is set) and traced by marching squares. Returns
    {level: [array of (p0, p1) vertices, ...]}; a level with no crossing
    yields an empty list and a warning.
    """
    from skimage import measure

    P0, P1 = _cell_grid(resolution)
    with np.errstate(divide="ignore", invalid="ignore"):
        lf = np.asarray(logjoint(P0, P1), dtype=float)
    lf = np.where(np.isnan(lf), -np.inf, lf)
    dens = np.exp(lf - np.max(lf))
    if normalize:
        dens = dens / (dens.sum() / resolution ** 2)
    out = {}
    for level in levels:
        lines = measure.find_contours(dens, float(level))
        if not lines:
            warnings.warn(f"no contour at density level {level}", UserWarning, stacklevel=2)
        out[float(level)] = [(ln + 0.5) / resolution for ln in lines]
    return out


def contours_to_csv(contours: dict, path=None) -> str:
    """Long-format CSV: level, path index, p0, p1."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["level", "path", "p0", "p1"])
    for level, lines in contours.items():
        for k, ln in enumerate(lines):
            for p0, p1 in ln:
                w.writerow([f"{level:.8g}", k, f"{p0:.8f}", f"{p1:.8f}"])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text
