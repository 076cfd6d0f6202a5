"""Densities tabulated on a grid, the common currency between modules."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .errors import UsageError

NORMALIZATION_TOL = 1e-8


@dataclass(frozen=True)
class GridDensity:
    """A non-negative function sampled on an increasing grid."""

    grid: np.ndarray
    values: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        grid = np.array(self.grid, dtype=float)
        values = np.array(self.values, dtype=float)
        if grid.ndim != 1 or grid.shape != values.shape or grid.size < 2:
            raise UsageError("grid and values must be 1-D arrays of equal length >= 2")
        if np.any(np.diff(grid) <= 0):
            raise UsageError("grid must be strictly increasing")
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise UsageError("density values must be finite and non-negative")
        grid.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_values(cls, grid, values) -> "GridDensity":
        """Build a normalized density from unnormalized values."""
        values = np.asarray(values, dtype=float)
        total = np.trapezoid(values, grid)
        if not np.isfinite(total) or total <= 0:
            raise UsageError("density has zero or non-finite mass")
        return cls(np.asarray(grid, dtype=float), values / total, normalized=True)

    def integral(self) -> float:
        return float(np.trapezoid(self.values, self.grid))

    def normalize(self) -> "GridDensity":
        return GridDensity.from_values(self.grid, self.values)

    def cdf_values(self) -> np.ndarray:
        c = cumulative_trapezoid(self.values, self.grid, initial=0.0)
        return c / c[-1]

    def mean(self) -> float:
        return float(np.trapezoid(self.grid * self.values, self.grid) / self.integral())

    def sd(self) -> float:
        m = self.mean()
        v = np.trapezoid((self.grid - m) ** 2 * self.values, self.grid) / self.integral()
        return float(np.sqrt(v))

    def quantile(self, alpha):
        return invert_cdf(self.grid, self.cdf_values(), alpha)

    def __call__(self, x):
        return np.interp(x, self.grid, self.values, left=0.0, right=0.0)

    def to_rows(self):
        cdf = self.cdf_values()
        return [(float(x), float(v), float(c)) for x, v, c in zip(self.grid, self.values, cdf)]


def invert_cdf(grid, cdf, alpha):
    """Invert a tabulated non-decreasing CDF by linear interpolation.

    Flat stretches resolve to their left end, matching inf{x: F(x) >= alpha}.
    """
    grid = np.asarray(grid, dtype=float)
    cdf = np.maximum.accumulate(np.asarray(cdf, dtype=float))
    a = np.atleast_1d(np.asarray(alpha, dtype=float))
    idx = np.searchsorted(cdf, a, side="left")
    idx = np.clip(idx, 1, grid.size - 1)
    c0, c1 = cdf[idx - 1], cdf[idx]
    x0, x1 = grid[idx - 1], grid[idx]
    span = c1 - c0
    with np.errstate(invalid="ignore", divide="ignore"):
        frac = np.where(span > 0, (a - c0) / span, 1.0)
    out = x0 + np.clip(frac, 0.0, 1.0) * (x1 - x0)
    out = np.where(a <= cdf[0], grid[0], out)
    out = np.where(a >= cdf[-1], grid[np.argmax(cdf >= cdf[-1])], out)
    return out if np.ndim(alpha) else float(out[0])
