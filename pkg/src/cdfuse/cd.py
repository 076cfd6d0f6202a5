"""Confidence distributions for the treatment difference and their combination.

A confidence distribution (CD) H(delta) is a data-dependent distribution
function on the parameter space whose value at the true parameter is
uniform over repeated sampling. Here every CD carries

* a CDF callable (exact where a closed form exists),
* its normal score z(delta) = Phi^-1(H(delta)) and the derivative of z,
  which is what the combination rule consumes,
* a tabulated density (GridDensity) for summaries and export.

Two CDs are combined by

    H_c(delta) = Phi( (w1 z0(delta) + w2 zT(delta)) / sqrt(w1^2 + w2^2) ),

with default weights w1 = 1 / sigma_d (prior spread) and w2 = 1 / C_d
(trial standard error).
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from scipy import optimize, special, stats

from .bayes.likelihood import TrialData, profile_loglik
from .elicit.survey import PooledHistogram
from .errors import CombinationError, DomainError, UsageError
from .grids import GridDensity, invert_cdf

CLIP = 1e-15
DEFAULT_POINTS = 4001
NORMAL_SPAN = 10.0


def _phi(z):
    return np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)


def _clip(p):
    return np.clip(p, CLIP, 1.0 - CLIP)


@dataclass(frozen=True)
class ConfDist:
    """A confidence distribution for a scalar parameter."""

    grid: np.ndarray
    cdf_values: np.ndarray
    density: GridDensity
    support: tuple
    cdf_fn: Optional[Callable] = None
    z_fn: Optional[Callable] = None
    dz_fn: Optional[Callable] = None
    normal: Optional[tuple] = None
    mode_hint: Optional[float] = None
    mean_value: Optional[float] = None
    label: str = ""

    def __post_init__(self):
        grid = np.array(self.grid, dtype=float)
        cdf = np.array(self.cdf_values, dtype=float)
        if grid.shape != cdf.shape or grid.ndim != 1:
            raise UsageError("grid and cdf values must be matching 1-D arrays")
        if np.any(np.diff(cdf) < -1e-12):
            raise UsageError("cdf values must be non-decreasing")
        grid.setflags(write=False)
        cdf.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "cdf_values", cdf)
        object.__setattr__(self, "support", (float(self.support[0]), float(self.support[1])))

    # -- constructors -----------------------------------------------------

    @classmethod
    def from_density(cls, grid, values, label="", mode_hint=None) -> "ConfDist":
        """Tabulated density; the CDF is its cumulative trapezoid integral."""
        g = GridDensity.from_values(grid, values)
        cdf = g.cdf_values()
        return cls(g.grid, cdf, g, (g.grid[0], g.grid[-1]), mode_hint=mode_hint, label=label)

    @classmethod
    def normal_cd(cls, mu: float, sigma: float, label="", n_points=DEFAULT_POINTS) -> "ConfDist":
        if not sigma > 0:
            raise DomainError("normal CD needs a positive scale")
        grid = np.linspace(mu - NORMAL_SPAN * sigma, mu + NORMAL_SPAN * sigma, n_points)
        dens = GridDensity(grid, stats.norm.pdf(grid, mu, sigma), normalized=True)
        return cls(
            grid, stats.norm.cdf(grid, mu, sigma), dens, (-math.inf, math.inf),
            cdf_fn=lambda x: special.ndtr((np.asarray(x, dtype=float) - mu) / sigma),
            z_fn=lambda x: (np.asarray(x, dtype=float) - mu) / sigma,
            dz_fn=lambda x: np.full(np.shape(x), 1.0 / sigma),
            normal=(float(mu), float(sigma)), mode_hint=float(mu), mean_value=float(mu), label=label,
        )

    # -- evaluation -------------------------------------------------------

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        if self.cdf_fn is not None:
            out = np.asarray(self.cdf_fn(x), dtype=float)
        else:
            out = np.interp(x, self.grid, self.cdf_values, left=0.0, right=1.0)
        return out if out.ndim else float(out)

    def pdf(self, x):
        if self.normal is not None:
            mu, s = self.normal
            return stats.norm.pdf(x, mu, s)
        return self.density(x)

    def z(self, x):
        """Normal score Phi^-1(H(x)), with H clipped to [1e-15, 1 - 1e-15]."""
        if self.z_fn is not None:
            return self.z_fn(x)
        return special.ndtri(_clip(self.cdf(x)))

    def dz(self, x):
        """Derivative of the normal score; zero where H is clipped."""
        if self.dz_fn is not None:
            return self.dz_fn(x)
        x = np.asarray(x, dtype=float)
        h = np.asarray(self.cdf(x), dtype=float)
        clipped = (h <= CLIP) | (h >= 1.0 - CLIP)
        z = special.ndtri(_clip(h))
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.asarray(self.pdf(x), dtype=float) / _phi(z)
        return np.where(clipped, 0.0, out)

    def quantile(self, alpha):
        a = np.asarray(alpha, dtype=float)
        if np.any((a < 0) | (a > 1)):
            raise UsageError("quantile level must lie in [0, 1]")
        if self.normal is not None:
            mu, s = self.normal
            out = mu + s * special.ndtri(a)
            return out if out.ndim else float(out)
        rough = np.atleast_1d(invert_cdf(self.grid, self.cdf_values, a))
        if self.cdf_fn is None:
            return rough if a.ndim else float(rough[0])
        # polish on the exact CDF inside the bracketing grid cell
        out = rough.copy()
        for i, (lvl, x0) in enumerate(zip(np.atleast_1d(a), rough)):
            j = np.clip(np.searchsorted(self.grid, x0), 1, self.grid.size - 1)
            lo, hi = self.grid[max(j - 2, 0)], self.grid[min(j + 1, self.grid.size - 1)]
            flo, fhi = self.cdf(lo) - lvl, self.cdf(hi) - lvl
            if flo < 0 < fhi:
                out[i] = optimize.brentq(lambda x: self.cdf(x) - lvl, lo, hi, xtol=1e-13)
        return out if a.ndim else float(out[0])

    def median(self) -> float:
        return float(self.quantile(0.5))

    def mean(self) -> float:
        if self.mean_value is not None:
            return float(self.mean_value)
        return self.density.mean()

    def mode(self) -> float:
        if self.mode_hint is not None:
            return float(self.mode_hint)
        from .diagnostics import grid_mode

        return grid_mode(self.density)

    # -- export -----------------------------------------------------------

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["grid", "cdf", "density"])
        dens = np.interp(self.grid, self.density.grid, self.density.values)
        for x, c, f in zip(self.grid, self.cdf_values, dens):
            w.writerow([f"{x:.10g}", f"{c:.12g}", f"{f:.12g}"])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, path, label="") -> "ConfDist":
        rows = list(csv.reader(io.StringIO(Path(path).read_text())))
        data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
        grid, cdf, dens = data[:, 0], data[:, 1], data[:, 2]
        g = GridDensity.from_values(grid, dens)
        return cls(grid, np.maximum.accumulate(cdf), g, (grid[0], grid[-1]), label=label)


@dataclass(frozen=True)
class CombinerSpec:
    """Weights (w1, w2) of the prior and trial CDs in the normal-score combination."""

    w1: float
    w2: float

    def __post_init__(self):
        if not (self.w1 > 0 and self.w2 > 0 and math.isfinite(self.w1) and math.isfinite(self.w2)):
            raise CombinationError("combination weights must be positive and finite")

    @classmethod
    def default(cls, sigma_d: float, d: TrialData) -> "CombinerSpec":
        """w1 = 1 / sigma_d, w2 = 1 / C_d."""
        return cls(1.0 / sigma_d, 1.0 / d.wald_se)


# ---------------------------------------------------------------------------
# prior CDs
# ---------------------------------------------------------------------------


def prior_cd_from_histogram(h: PooledHistogram, n_points: int = DEFAULT_POINTS) -> ConfDist:
    """CD whose density is the pooled histogram (uniform within each bin).

    The CDF is piecewise linear between bin edges, quantiles invert it
    exactly, and the reported mode is the midpoint of the highest-density bin.
    """
    edges = h.bin_edges
    cum = np.concatenate([[0.0], np.cumsum(h.weights)])
    cum[-1] = 1.0
    grid = np.union1d(np.linspace(edges[0], edges[-1], n_points), edges)
    heights = h.weights / np.diff(edges)
    dens_vals = np.asarray(h.density(grid), dtype=float)
    # at interior edges take the larger neighbouring height so no bin is lost visually
    dens = GridDensity.from_values(grid, dens_vals)
    top = int(np.argmax(heights))

    def cdf_fn(x):
        return np.interp(np.asarray(x, dtype=float), edges, cum, left=0.0, right=1.0)

    return ConfDist(
        grid, cdf_fn(grid), dens, (edges[0], edges[-1]), cdf_fn=cdf_fn,
        mode_hint=float(0.5 * (edges[top] + edges[top + 1])), mean_value=float(h.mean),
        label="prior (histogram)",
    )


def histogram_quantile(h: PooledHistogram, alpha):
    """Exact quantile of the piecewise-linear histogram CDF."""
    edges = h.bin_edges
    cum = np.concatenate([[0.0], np.cumsum(h.weights)])
    cum[-1] = 1.0
    return invert_cdf(edges, cum, alpha)


def prior_cd_normal(mu_d: float, sigma_d: float) -> ConfDist:
    """H0(delta) = Phi((delta - mu_d) / sigma_d)."""
    return ConfDist.normal_cd(mu_d, sigma_d, label="prior (normal)")


# ---------------------------------------------------------------------------
# trial CDs
# ---------------------------------------------------------------------------


def trial_cd_wald(d: TrialData) -> ConfDist:
    """H_T(delta) = Phi((delta - delta_hat) / C_d)."""
    if not (0 < d.s0 < d.n0 and 0 < d.s1 < d.n1):
        raise DomainError(
            "the Wald CD needs 0 < s < n in both arms (its standard error is zero otherwise); "
            "use the profile-likelihood CD instead"
        )
    return ConfDist.normal_cd(d.delta_hat, d.wald_se, label="trial (Wald)")


def trial_cd_profile(d: TrialData, resolution: int = DEFAULT_POINTS) -> ConfDist:
    """CD with density proportional to exp(profile loglik) on (-1, 1).

    The density is tabulated on a uniform grid over [-1, 1] merged with a
    finer grid around the maximum; the CDF is the cumulative trapezoid.
    """
    edge = 1.0 - 1e-12
    coarse = np.linspace(-edge, edge, resolution)
    centre = d.delta_hat
    spread = d.wald_se if d.wald_se > 0 else 0.05
    fine = np.linspace(max(-edge, centre - 12 * spread), min(edge, centre + 12 * spread), resolution)
    grid = np.union1d(coarse, fine)
    prof = profile_loglik(grid, d)
    vals = np.exp(prof - np.max(prof))
    cd = ConfDist.from_density(grid, vals, label="trial (profile)")
    return ConfDist(cd.grid, cd.cdf_values, cd.density, (-1.0, 1.0), label=cd.label)


# ---------------------------------------------------------------------------
# combination
# ---------------------------------------------------------------------------


def _overlap(a: tuple, b: tuple) -> tuple:
    lo, hi = max(a[0], b[0]), min(a[1], b[1])
    if not lo < hi:
        raise CombinationError(f"CD supports {a} and {b} do not overlap")
    return lo, hi


def combine_cds(h0: ConfDist, ht: ConfDist, spec: CombinerSpec, n_points: int = DEFAULT_POINTS) -> ConfDist:
    """Normal-score combination of a prior CD and a trial CD.

    Normal scores are clipped at Phi^-1(1e-15) and Phi^-1(1 - 1e-15). When
    both inputs are normal the result is evaluated in closed form and is
    itself normal.
    """
    _overlap(h0.support, ht.support)
    w1, w2 = spec.w1, spec.w2
    norm = math.hypot(w1, w2)

    if h0.normal is not None and ht.normal is not None:
        (m0, s0), (mt, st) = h0.normal, ht.normal
        # z_c = a delta - b is linear in delta
        a = (w1 / s0 + w2 / st) / norm
        b = (w1 * m0 / s0 + w2 * mt / st) / norm
        return ConfDist.normal_cd(b / a, 1.0 / a, label="combined")

    def zc(x):
        return (w1 * h0.z(x) + w2 * ht.z(x)) / norm

    def cdf_fn(x):
        return special.ndtr(zc(x))

    # uniform grid over the union of the tabulated ranges; the density is the
    # numerical derivative of the combined CDF, which averages the integrable
    # spikes that arise where an input CDF leaves 0 or 1 with positive slope
    lo = min(h0.grid[0], ht.grid[0])
    hi = max(h0.grid[-1], ht.grid[-1])
    grid = np.linspace(lo, hi, n_points)
    cdf = special.ndtr(zc(grid))
    dens_vals = np.maximum(np.gradient(cdf, grid), 0.0)
    dens = GridDensity.from_values(grid, dens_vals)
    return ConfDist(grid, cdf, dens, (lo, hi), cdf_fn=cdf_fn, z_fn=zc,
                    dz_fn=lambda x: (w1 * h0.dz(x) + w2 * ht.dz(x)) / norm, label="combined")


def combined_normal_closed_form(mu_d: float, sigma_d: float, d: TrialData) -> ConfDist:
    """N(delta_tilde, C_tilde^2), the precision-weighted normal combination.

    delta_tilde = (delta_hat / C_d^2 + mu_d / sigma_d^2) / (1 / C_d^2 + 1 / sigma_d^2).
    """
    if not (0 < d.s0 < d.n0 and 0 < d.s1 < d.n1):
        raise DomainError("closed-form combination needs 0 < s < n in both arms")
    c2 = d.wald_se ** 2
    s2 = sigma_d ** 2
    prec = 1.0 / c2 + 1.0 / s2
    centre = (d.delta_hat / c2 + mu_d / s2) / prec
    return ConfDist.normal_cd(centre, math.sqrt(1.0 / prec), label="combined (closed form)")


# ---------------------------------------------------------------------------
# validity
# ---------------------------------------------------------------------------


def cd_validate_uniformity(generator, cd_constructor, trials: int, rng, true_value: float):
    """KS p-value that H_n(true_value) is uniform over repeated data sets.

    ``generator(rng)`` returns one simulated data set; ``cd_constructor``
    turns it into an object with a ``cdf`` method.
    """
    if trials < 2:
        raise UsageError("need at least two replications")
    values = np.empty(trials)
    for i in range(trials):
        values[i] = cd_constructor(generator(rng)).cdf(true_value)
    return float(stats.kstest(values, "uniform").pvalue)


def binomial_generator(n0: int, p0: float, n1: int, p1: float):
    """Generator of TrialData with independent binomial arms."""

    def gen(rng):
        return TrialData(n0, int(rng.binomial(n0, p0)), n1, int(rng.binomial(n1, p1)))

    return gen
