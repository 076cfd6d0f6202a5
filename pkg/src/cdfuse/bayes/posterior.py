"""Joint and marginal posteriors of (p0, p1) and of delta = p1 - p0."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import special

from ..elicit.priors import IndepBeta, PriorSpec
from ..errors import ConvergenceError, DomainError, UsageError
from ..grids import GridDensity
from ..specfun import BetaParams
from .likelihood import TrialData, loglik

LogJoint = Callable[[np.ndarray, np.ndarray], np.ndarray]


def exact_indep_beta_posterior(prior: PriorSpec, d: TrialData):
    """Conjugate update: Beta(s0 + q0, n0 - s0 + r0) and Beta(s1 + q1, n1 - s1 + r1)."""
    fam = prior.family if isinstance(prior, PriorSpec) else prior
    if not isinstance(fam, IndepBeta):
        raise UsageError(f"exact posterior needs the indep-beta family, got {getattr(fam, 'kind', fam)!r}")
    return (BetaParams(d.s0 + fam.q0, d.f0 + fam.r0), BetaParams(d.s1 + fam.q1, d.f1 + fam.r1))


def indep_beta_logjoint(b0: BetaParams, b1: BetaParams) -> LogJoint:
    """Normalized log density of independent Beta(b0) x Beta(b1)."""
    return IndepBeta(b0.q, b0.r, b1.q, b1.r).logpdf


def posterior_logjoint(prior: PriorSpec, d: TrialData) -> LogJoint:
    """Unnormalized log posterior log pi(p0, p1) + loglik, -inf outside (0, 1)^2."""

    def f(p0, p1):
        p0 = np.asarray(p0, dtype=float)
        p1 = np.asarray(p1, dtype=float)
        inside = (p0 > 0) & (p0 < 1) & (p1 > 0) & (p1 < 1)
        a = np.where(inside, p0, 0.5)
        b = np.where(inside, p1, 0.5)
        return np.where(inside, prior.logpdf(a, b) + loglik(a, b, d), -np.inf)

    return f


def likelihood_logjoint(d: TrialData) -> LogJoint:
    def f(p0, p1):
        return loglik(p0, p1, d)

    return f


# ---------------------------------------------------------------------------
# integrating out p0 along lines p1 = p0 + delta
# ---------------------------------------------------------------------------


_DE_TMAX = 6.0
_DE_H0 = 0.25


def _de_nodes(k):
    """Abscissae t in (0, 1), complements 1 - t and unit-step weights at DE parameters k."""
    u = np.pi * np.sinh(k)
    t = special.expit(u)
    tc = special.expit(-u)
    w = np.pi * np.cosh(k) * t * tc
    keep = (t > 0) & (tc > 0) & (w > 0)
    return t[keep], tc[keep], w[keep]


def _de_level_params(level: int):
    """DE parameters new at a refinement level; level 0 is the full coarse rule."""
    h = _DE_H0 / 2 ** level
    if level == 0:
        return np.arange(-_DE_TMAX, _DE_TMAX + 0.5 * h, h), h
    m = np.arange(-int(_DE_TMAX / h), int(_DE_TMAX / h) + 1)
    m = m[m % 2 != 0]
    return m * h, h


def line_log_integrals(logjoint: LogJoint, deltas, tol=1e-9, max_level=10, chunk_points=2_000_000,
                       strict=True):
    """log of int f(p0, p0 + delta) dp0 over the feasible p0 interval, per delta.

    Each line is integrated by a double-exponential (tanh-sinh) rule. The
    step is halved, reusing earlier nodes, until a line's integral relative
    to the largest line integral changes by less than ``tol``; converged
    lines drop out of further refinement. Endpoint singularities of
    beta-type densities are absorbed by the rule's clustering. Degenerate
    lines (|delta| = 1) get -inf. Unconverged lines raise ConvergenceError,
    or with ``strict=False`` are returned as a boolean mask alongside the
    values.
    """
    deltas = np.asarray(deltas, dtype=float)
    lo = np.maximum(0.0, -deltas)
    length = 1.0 - np.abs(deltas)

    def partial_sums(sel, level):
        k, h = _de_level_params(level)
        t, tc, w = _de_nodes(k)
        out = np.full(sel.size, -np.inf)
        step = max(1, chunk_points // max(t.size, 1))
        logw = np.log(w * h)
        for s in range(0, sel.size, step):
            rows = sel[s:s + step]
            L = length[rows][:, None]
            a = lo[rows][:, None]
            # measure the upper half of the line from its far end to keep precision
            p0 = np.where(t[None, :] < 0.5, a + L * t[None, :], (a + L) - L * tc[None, :])
            p1 = p0 + deltas[rows][:, None]
            # nodes that round onto the boundary carry negligible weight; drop them
            inside = (p0 > 0) & (p0 < 1) & (p1 > 0) & (p1 < 1)
            with np.errstate(divide="ignore", invalid="ignore"):
                lf = np.asarray(logjoint(np.where(inside, p0, 0.5), np.where(inside, p1, 0.5)), dtype=float)
            lf = np.where(inside & ~np.isnan(lf), lf, -np.inf)
            out[s:s + step] = special.logsumexp(lf + logw[None, :], axis=1) + np.log(L[:, 0])
        return out

    result = np.full(deltas.shape, -np.inf)
    active = np.flatnonzero(length > 0)
    result[active] = partial_sums(active, 0)
    top = None
    for level in range(1, max_level + 1):
        if active.size == 0:
            break
        prev = result[active]
        cur = np.logaddexp(prev - np.log(2.0), partial_sums(active, level))
        result[active] = cur
        finite = result[np.isfinite(result)]
        top = float(np.max(finite)) if finite.size else 0.0
        with np.errstate(invalid="ignore", over="ignore"):
            change = np.abs(np.exp(cur - top) - np.exp(prev - top))
        change = np.where(np.isnan(change), 0.0, change)
        active = active[change > tol]
    bad = np.zeros(deltas.shape, dtype=bool)
    bad[active] = True
    if active.size and strict:
        raise ConvergenceError("line integrals did not converge", unconverged_lines=int(active.size),
                               deltas=deltas[active].tolist())
    return result if strict else (result, bad)


def marginalize_delta(logjoint: LogJoint, resolution: int = 2001, tol: float = 1e-9,
                      on_divergence: str = "raise") -> GridDensity:
    """Density of delta = p1 - p0 on a uniform grid over [-1, 1].

    f(delta) = int f(p0, p0 + delta) dp0 over (max(0, -delta), min(1, 1 - delta)),
    normalized by the trapezoid rule on the grid.

    Some joints have delta-marginals that are infinite at isolated points
    (a bivariate beta with r < 1 on the diagonal, for example), where the
    line integral cannot converge. ``on_divergence='raise'`` reports this as
    a ConvergenceError; ``'interpolate'`` replaces such grid values by
    log-linear interpolation from converged neighbours and warns.
    """
    if resolution < 3:
        raise UsageError("resolution must be at least 3")
    if on_divergence not in ("raise", "interpolate"):
        raise UsageError("on_divergence must be 'raise' or 'interpolate'")
    grid = np.linspace(-1.0, 1.0, resolution)
    if on_divergence == "raise":
        logv = line_log_integrals(logjoint, grid, tol=tol)
    else:
        logv, bad = line_log_integrals(logjoint, grid, tol=tol, strict=False)
        if bad.any():
            good = ~bad & np.isfinite(logv)
            if not good.any():
                raise ConvergenceError("no line integral converged")
            logv = logv.copy()
            logv[bad] = np.interp(grid[bad], grid[good], logv[good])
            warnings.warn(f"{int(bad.sum())} delta line integral(s) diverge; values interpolated "
                          f"at delta = {np.round(grid[bad], 6).tolist()}", RuntimeWarning, stacklevel=2)
    finite = np.isfinite(logv)
    if not finite.any():
        raise DomainError("joint density vanishes on every line")
    vals = np.where(finite, np.exp(logv - np.max(logv[finite])), 0.0)
    if not np.all(np.isfinite(vals)):
        raise DomainError("joint density is not integrable along delta lines")
    return GridDensity.from_values(grid, vals)


# ---------------------------------------------------------------------------
# kernel density estimates from draws
# ---------------------------------------------------------------------------


def silverman_bandwidth(x) -> float:
    x = np.asarray(x, dtype=float)
    sd = np.std(x, ddof=1)
    iqr = np.subtract(*np.percentile(x, [75, 25]))
    spread = min(sd, iqr / 1.34) if iqr > 0 else sd
    return 0.9 * spread * x.size ** (-0.2)


def scott_bandwidth(x) -> float:
    x = np.asarray(x, dtype=float)
    return 1.06 * np.std(x, ddof=1) * x.size ** (-0.2)


_BANDWIDTH_RULES = {"silverman": silverman_bandwidth, "scott": scott_bandwidth}


def delta_transform(p0, p1):
    return p1 - p0


def kde_from_samples(samples, transform=delta_transform, bandwidth="silverman", grid=None,
                     n_grid: int = 2001) -> GridDensity:
    """Gaussian-kernel density estimate of transform(p0, p1) over the draws.

    ``samples`` is a PosteriorSamples, an (n, 2) array of (p0, p1) pairs,
    or (with ``transform=None``) a 1-D array of scalar draws. ``bandwidth``
    is a rule name ('silverman', the default, or 'scott') or a positive
    number. Without an explicit grid the estimate is tabulated over the
    draw range padded by five bandwidths.
    """
    draws = getattr(samples, "draws", samples)
    draws = np.asarray(draws, dtype=float)
    if transform is None:
        x = draws.ravel()
    else:
        if draws.ndim != 2 or draws.shape[1] != 2:
            raise UsageError("samples must be (n, 2) pairs of (p0, p1)")
        x = np.asarray(transform(draws[:, 0], draws[:, 1]), dtype=float)
    if x.size < 2:
        raise UsageError("need at least two draws for a density estimate")
    if isinstance(bandwidth, str):
        try:
            rule = _BANDWIDTH_RULES[bandwidth]
        except KeyError:
            raise UsageError(f"unknown bandwidth rule {bandwidth!r}") from None
        if np.ptp(x) == 0:
            raise DomainError("draws have zero variance; a rule-based bandwidth is undefined")
        h = rule(x)
    else:
        h = float(bandwidth)
        if not h > 0:
            raise UsageError("bandwidth must be positive")
    if grid is None:
        grid = np.linspace(x.min() - 5 * h, x.max() + 5 * h, n_grid)
    grid = np.asarray(grid, dtype=float)
    vals = np.zeros(grid.size)
    # accumulate in slices to bound memory
    step = max(1, 2_000_000 // grid.size)
    for s in range(0, x.size, step):
        z = (grid[None, :] - x[s:s + step, None]) / h
        vals += np.exp(-0.5 * z * z).sum(axis=0)
    vals /= x.size * h * math.sqrt(2.0 * math.pi)
    return GridDensity.from_values(grid, vals)
