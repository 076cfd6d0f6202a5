"""Two-arm binomial data, its likelihood and the profile likelihood of delta = p1 - p0."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from ..errors import DomainError, ValidationError


@dataclass(frozen=True)
class TrialData:
    """Successes s0 of n0 in the control arm and s1 of n1 under treatment."""

    n0: int
    s0: int
    n1: int
    s1: int

    def __post_init__(self):
        for name in ("n0", "s0", "n1", "s1"):
            v = getattr(self, name)
            if isinstance(v, bool) or int(v) != v:
                raise ValidationError(f"{name} must be an integer count, got {v!r}")
            object.__setattr__(self, name, int(v))
        if self.n0 < 1 or self.n1 < 1:
            raise ValidationError("each arm needs at least one patient")
        if not (0 <= self.s0 <= self.n0 and 0 <= self.s1 <= self.n1):
            raise ValidationError("successes must satisfy 0 <= s <= n in each arm")

    @classmethod
    def parse(cls, text: str) -> "TrialData":
        """From 'n0,s0,n1,s1'."""
        try:
            parts = [int(x) for x in text.split(",")]
        except ValueError:
            raise ValidationError(f"trial counts must be four integers n0,s0,n1,s1, got {text!r}") from None
        if len(parts) != 4:
            raise ValidationError(f"trial counts must be four integers n0,s0,n1,s1, got {text!r}")
        return cls(*parts)

    @property
    def f0(self) -> int:
        return self.n0 - self.s0

    @property
    def f1(self) -> int:
        return self.n1 - self.s1

    @property
    def xbar0(self) -> float:
        return self.s0 / self.n0

    @property
    def xbar1(self) -> float:
        return self.s1 / self.n1

    @property
    def delta_hat(self) -> float:
        return self.xbar1 - self.xbar0

    @property
    def wald_se(self) -> float:
        """C_d with C_d^2 = X1(1-X1)/n1 + X0(1-X0)/n0."""
        return math.sqrt(self.xbar1 * (1 - self.xbar1) / self.n1 + self.xbar0 * (1 - self.xbar0) / self.n0)

    def swapped(self) -> "TrialData":
        return TrialData(self.n1, self.s1, self.n0, self.s0)

    def as_tuple(self):
        return (self.n0, self.s0, self.n1, self.s1)


def loglik(p0, p1, d: TrialData):
    """s0 ln p0 + (n0-s0) ln(1-p0) + s1 ln p1 + (n1-s1) ln(1-p1).

    At a boundary a term is -inf when its count is positive and 0 otherwise.
    """
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    if np.any((p0 < 0) | (p0 > 1) | (p1 < 0) | (p1 > 1)):
        raise DomainError("probabilities must lie in [0, 1]")
    with np.errstate(divide="ignore"):
        out = (special.xlogy(d.s0, p0) + special.xlog1py(d.f0, -p0)
               + special.xlogy(d.s1, p1) + special.xlog1py(d.f1, -p1))
    return out if out.ndim else float(out)


def max_loglik(d: TrialData) -> float:
    return loglik(d.xbar0, d.xbar1, d)


def _score_limit(c, gap):
    """c / gap with the convention 0 / 0 = 0 and c / 0 = +inf for c > 0."""
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(c > 0, c / gap, 0.0)


def profile_argmax(delta, d: TrialData, tol=1e-10, max_iter=200):
    """p0 maximizing loglik(p0, p0 + delta) over (max(0,-delta), min(1,1-delta)).

    The profile objective is concave in p0, so its score is strictly
    decreasing. Boundary optima (possible with zero counts) are detected from
    the one-sided score limits; interior optima are found by Newton steps
    safeguarded by bisection until |score| < tol.
    """
    delta = np.asarray(delta, dtype=float)
    if np.any(~((delta > -1.0) & (delta < 1.0))):
        raise DomainError("delta must lie in (-1, 1); the feasible p0 interval is empty otherwise")
    s0, f0, s1, f1 = float(d.s0), float(d.f0), float(d.s1), float(d.f1)
    lo = np.maximum(0.0, -delta)
    hi = np.minimum(1.0, 1.0 - delta)

    def score(x):
        return s0 / x - f0 / (1.0 - x) + s1 / (x + delta) - f1 / (1.0 - x - delta)

    def curvature(x):
        return -(s0 / x ** 2 + f0 / (1.0 - x) ** 2 + s1 / (x + delta) ** 2 + f1 / (1.0 - x - delta) ** 2)

    # one-sided limits of the score at the ends of the feasible interval; the
    # four gaps p0, 1-p0, p1, 1-p1 are written out exactly at each end
    pos = delta >= 0
    zero = np.zeros_like(delta)
    g_lo = (_score_limit(s0, np.where(pos, zero, -delta)) - _score_limit(f0, np.where(pos, 1.0, 1.0 + delta))
            + _score_limit(s1, np.where(pos, delta, zero)) - _score_limit(f1, np.where(pos, 1.0 - delta, 1.0)))
    g_hi = (_score_limit(s0, np.where(pos, 1.0 - delta, 1.0)) - _score_limit(f0, np.where(pos, delta, zero))
            + _score_limit(s1, np.where(pos, 1.0, 1.0 + delta)) - _score_limit(f1, np.where(pos, zero, -delta)))
    with np.errstate(invalid="ignore"):
        at_lo = ~(g_lo > 0)
        at_hi = ~(g_hi < 0) & ~at_lo
    x = np.where(at_lo, lo, np.where(at_hi, hi, 0.5 * (lo + hi)))
    todo = ~(at_lo | at_hi)
    a, b = lo.copy(), hi.copy()
    with np.errstate(divide="ignore", invalid="ignore"):
        for _ in range(max_iter):
            if not todo.any():
                break
            g = score(x)
            done = todo & (np.abs(g) < tol)
            todo &= ~done
            a = np.where(todo & (g > 0), x, a)
            b = np.where(todo & (g < 0), x, b)
            newton = x - g / curvature(x)
            ok = (newton > a) & (newton < b) & np.isfinite(newton)
            nxt = np.where(ok, newton, 0.5 * (a + b))
            stalled = todo & (np.abs(nxt - x) <= 4 * np.finfo(float).eps * np.maximum(1.0, np.abs(x)))
            todo &= ~stalled
            x = np.where(todo, nxt, x)
    return x


def profile_loglik(delta, d: TrialData):
    """max over p0 of loglik(p0, p0 + delta)."""
    delta = np.asarray(delta, dtype=float)
    p0 = profile_argmax(delta, d)
    p1 = np.clip(p0 + delta, 0.0, 1.0)
    out = loglik(p0, p1, d)
    return out if np.ndim(out) else float(out)
