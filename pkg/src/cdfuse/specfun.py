"""Special functions and the beta-family kernels everything else builds on.

The bivariate beta used throughout is the Olkin-Liu construction: with
independent standard gammas U, V, W of shapes q0, q1, r,

    p0 = U / (U + W),   p1 = V / (V + W).

Both margins are beta and the shared W induces positive dependence.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import special

from .errors import ConvergenceError, DomainError


@dataclass(frozen=True)
class GammaParams:
    """Standard gamma (scale 1) with the given shape."""

    shape: float

    def __post_init__(self):
        if not self.shape > 0:
            raise DomainError(f"gamma shape must be positive, got {self.shape}")


@dataclass(frozen=True)
class BetaParams:
    q: float
    r: float

    def __post_init__(self):
        if not (self.q > 0 and self.r > 0):
            raise DomainError(f"beta shapes must be positive, got ({self.q}, {self.r})")

    @property
    def mean(self) -> float:
        return self.q / (self.q + self.r)

    @property
    def var(self) -> float:
        s = self.q + self.r
        return self.q * self.r / (s * s * (s + 1.0))


@dataclass(frozen=True)
class BibetaParams:
    q0: float
    q1: float
    r: float

    def __post_init__(self):
        if not (self.q0 > 0 and self.q1 > 0 and self.r > 0):
            raise DomainError(
                f"bivariate beta shapes must be positive, got ({self.q0}, {self.q1}, {self.r})"
            )

    def as_tuple(self):
        return (float(self.q0), float(self.q1), float(self.r))


def log_beta_fn(a, b):
    """ln B(a, b) for positive a, b (scalar or array)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.any(~(a > 0)) or np.any(~(b > 0)):
        raise DomainError("log_beta_fn requires a > 0 and b > 0")
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    big = hi >= _STIRLING_MIN
    out = special.betaln(a, b)
    if np.any(big):
        lo_b, hi_b = np.broadcast_to(lo, out.shape)[big], np.broadcast_to(hi, out.shape)[big]
        out = np.array(out, dtype=float, copy=True)
        out[big] = special.gammaln(lo_b) + _lgamma_ratio(lo_b, hi_b)
    return float(out) if out.ndim == 0 else out


_STIRLING_MIN = 20.0
_STIRLING_COEF = (1 / 12, -1 / 360, 1 / 1260, -1 / 1680, 1 / 1188)


def _stirling_tail(x):
    """ln G(x) - [(x - 1/2) ln x - x + ln(2 pi) / 2] for x >= 20."""
    inv = 1.0 / x
    inv2 = inv * inv
    acc = np.zeros_like(x)
    for c in reversed(_STIRLING_COEF):
        acc = acc * inv2 + c
    return acc * inv


def _lgamma_ratio(a, b):
    """ln G(b) - ln G(a + b) for b >= 20 without cancellation in ln G."""
    s = a + b
    return (-(b - 0.5) * np.log1p(a / b) - a * np.log(s) + a
            + _stirling_tail(b) - _stirling_tail(s))


# ---------------------------------------------------------------------------
# 3F2 at unit argument
# ---------------------------------------------------------------------------

_FIRST_CHUNK = 1024
_MAX_CHUNK = 1 << 20


def _nonpos_int(x: float) -> bool:
    return x <= 0 and float(x).is_integer()


class _Neumaier:
    __slots__ = ("s", "c")

    def __init__(self):
        self.s = 0.0
        self.c = 0.0

    def add(self, x: float):
        t = self.s + x
        if abs(self.s) >= abs(x):
            self.c += (self.s - t) + x
        else:
            self.c += (x - t) + self.s
        self.s = t

    @property
    def value(self) -> float:
        return self.s + self.c


def _series_unit(a, b, c, d, e, rtol, max_terms):
    """Direct summation of sum_k (a)_k (b)_k (c)_k / ((d)_k (e)_k k!).

    Terms are generated in vectorised chunks in log space. Once the terms are
    in their power-law regime t_k ~ C k^-(1+s), the remainder is estimated
    with Hurwitz zeta sums (two-term asymptotic), and iteration stops when
    the error of that estimate is below rtol of the total.
    """
    params = (a, b, c, d, e)
    s = d + e - a - b - c
    big = max(abs(x) for x in params)
    c1 = 0.5 * (a * (a - 1) + b * (b - 1) + c * (c - 1) - d * (d - 1) - e * (e - 1))
    acc = _Neumaier()
    acc.add(1.0)
    log_t, sign = 0.0, 1.0
    k0 = 0
    chunk = _FIRST_CHUNK
    tail = 0.0
    while True:
        n = min(chunk, max_terms - k0)
        if n <= 0:
            raise ConvergenceError(
                f"3F2({a}, {b}, {c}; {d}, {e}; 1) did not converge within {max_terms} terms",
                partial_sum=acc.value,
                terms=k0,
                last_term=sign * math.exp(log_t),
                tail_estimate=tail,
            )
        k = np.arange(k0, k0 + n, dtype=float)
        ratio = (a + k) * (b + k) * (c + k) / ((d + k) * (e + k) * (k + 1.0))
        zero = np.flatnonzero(ratio == 0.0)
        if zero.size:
            ratio = ratio[: zero[0]]
        if ratio.size:
            with np.errstate(divide="ignore"):
                log_terms = log_t + np.cumsum(np.log(np.abs(ratio)))
            signs = sign * np.cumprod(np.sign(ratio))
            terms = signs * np.exp(log_terms)
            acc.add(math.fsum(terms))
            log_t, sign = float(log_terms[-1]), float(signs[-1])
        if zero.size:
            return acc.value
        k0 += n
        K = float(k0)
        t_K = sign * math.exp(log_t)
        total = acc.value
        if t_K == 0.0:
            return total
        if K > 10.0 * big + 10.0 and 0.0 < ratio[-1] < 1.0:
            scale = t_K / (K ** (-(1.0 + s)) * (1.0 + c1 / K))
            tail = scale * (special.zeta(1.0 + s, K + 1.0) + c1 * special.zeta(2.0 + s, K + 1.0))
            err = abs(tail) * (1.0 + c1 * c1) / (K * K)
            if err <= rtol * abs(total + tail):
                return total + tail
        chunk = min(chunk * 2, _MAX_CHUNK)


def hyp3f2_unit(a, b, c, d, e, *, rtol=1e-12, max_terms=10_000_000, transform=True) -> float:
    """Generalized hypergeometric 3F2(a, b, c; d, e; 1).

    The series converges iff the parameter excess s = d + e - a - b - c is
    positive (or a numerator parameter is a non-positive integer, in which
    case the series terminates). With ``transform=True`` and all parameters
    positive, Thomae's relation is used to move to an equivalent series whose
    excess equals the largest numerator parameter, when that is larger than s.
    """
    a, b, c, d, e = (float(x) for x in (a, b, c, d, e))
    if _nonpos_int(d) or _nonpos_int(e):
        raise DomainError(f"3F2 denominator parameter is a non-positive integer ({d}, {e})")
    if a == 0.0 or b == 0.0 or c == 0.0:
        return 1.0
    if any(_nonpos_int(x) for x in (a, b, c)):
        return _series_unit(a, b, c, d, e, rtol, max_terms)
    s = d + e - a - b - c
    if not s > 0:
        raise DomainError(f"3F2 at unit argument diverges: d + e - a - b - c = {s} <= 0")
    if transform and min(a, b, c, d, e) > 0:
        nums = sorted((a, b, c), reverse=True)
        pivot, u, v = nums
        if pivot > s:
            log_pref = (
                special.gammaln(d) + special.gammaln(e) + special.gammaln(s)
                - special.gammaln(pivot) - special.gammaln(s + u) - special.gammaln(s + v)
            )
            inner = _series_unit(d - pivot, e - pivot, s, s + u, s + v, rtol, max_terms)
            return float(math.exp(log_pref) * inner)
    return _series_unit(a, b, c, d, e, rtol, max_terms)


def hyp3f2_partial_sums(a, b, c, d, e, n: int) -> np.ndarray:
    """First ``n`` partial sums of the unit-argument 3F2 series."""
    k = np.arange(n - 1, dtype=float)
    ratio = (a + k) * (b + k) * (c + k) / ((d + k) * (e + k) * (k + 1.0))
    terms = np.concatenate([[1.0], np.cumprod(ratio)])
    return np.cumsum(terms)


def _hyp3f2_11r(r, d, e, rtol=1e-14, max_terms=200_000, strict=True):
    """Vectorised 3F2(1, 1, r; d, e; 1) for positive r and d, e > r + 1.

    Every term ratio (1+k)(r+k)/((d+k)(e+k)) is below one, so the terms
    decrease monotonically from 1. Elements that have not converged after
    ``max_terms`` raise ConvergenceError, or with ``strict=False`` are
    recomputed by the scalar routine.
    """
    r, d, e = np.broadcast_arrays(*(np.asarray(x, dtype=float) for x in (r, d, e)))
    total = np.ones(r.shape)
    term = np.ones(r.shape)
    s = d + e - 2.0 - r
    active = np.ones(r.shape, dtype=bool)
    k = 0
    while active.any() and k < max_terms:
        term = np.where(active, term * (1.0 + k) * (r + k) / ((d + k) * (e + k)), 0.0)
        total += term
        k += 1
        # remainder of a k^-(1+s) tail is about term * k / s
        active &= term * (k + 1.0) / s > rtol * total
    if active.any():
        if strict:
            raise ConvergenceError("vectorised 3F2 did not converge", partial_sum=total)
        for idx in zip(*np.nonzero(active)):
            total[idx] = hyp3f2_unit(1.0, 1.0, r[idx], d[idx], e[idx])
    return total


def bibeta_cross_moment(q0, q1, r):
    """E(p0 * p1) under the bivariate beta with shapes (q0, q1, r).

    Uses E(p0 p1) = E(p0) E(p1) 3F2(1, 1, r; q0 + r + 1, q1 + r + 1; 1),
    whose series excess is q0 + q1 + r.
    """
    q0, q1, r = (np.asarray(x, dtype=float) for x in (q0, q1, r))
    m0 = q0 / (q0 + r)
    m1 = q1 / (q1 + r)
    if q0.ndim == q1.ndim == r.ndim == 0:
        f = hyp3f2_unit(1.0, 1.0, float(r), float(q0 + r + 1.0), float(q1 + r + 1.0))
        return float(m0 * m1 * f)
    return m0 * m1 * _hyp3f2_11r(r, q0 + r + 1.0, q1 + r + 1.0)


def bibeta_moments(params: BibetaParams) -> dict:
    """Closed-form first and second moments of (p0, p1) and of p1 - p0."""
    q0, q1, r = params.as_tuple()
    m0 = q0 / (q0 + r)
    m1 = q1 / (q1 + r)
    e00 = q0 * (q0 + 1) / ((q0 + r) * (q0 + r + 1))
    e11 = q1 * (q1 + 1) / ((q1 + r) * (q1 + r + 1))
    e01 = bibeta_cross_moment(q0, q1, r)
    ed2 = e00 + e11 - 2.0 * e01
    return {
        "mean_p0": m0,
        "mean_p1": m1,
        "var_p0": e00 - m0 * m0,
        "var_p1": e11 - m1 * m1,
        "cov": e01 - m0 * m1,
        "mean_delta": m1 - m0,
        "second_delta": ed2,
        "var_delta": ed2 - (m1 - m0) ** 2,
    }


# ---------------------------------------------------------------------------
# bivariate beta density and sampler
# ---------------------------------------------------------------------------


def _exp_log(expo, x):
    """expo * log(x) with x in [0, 1]; at x == 0 gives -inf/+inf/0 by sign of expo."""
    expo = np.asarray(expo, dtype=float)
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = expo * np.log(x)
    at0 = x == 0.0
    if np.any(at0):
        edge = np.where(expo > 0, -np.inf, np.where(expo < 0, np.inf, 0.0))
        out = np.where(at0, edge, out)
    return out


def bibeta_log_normalizer(params: BibetaParams, method: str = "closed") -> float:
    """Log of the integral of the unnormalized bivariate beta kernel.

    ``closed`` uses ln G(q0) + ln G(q1) + ln G(r) - ln G(q0 + q1 + r), which
    follows from the latent gamma construction. ``quadrature`` integrates the
    kernel numerically (cached per parameter triple).
    """
    q0, q1, r = params.as_tuple()
    if method == "closed":
        return float(
            special.gammaln(q0) + special.gammaln(q1) + special.gammaln(r) - special.gammaln(q0 + q1 + r)
        )
    if method == "quadrature":
        return _bibeta_log_normalizer_quad(q0, q1, r)
    raise ValueError(f"unknown normalizer method {method!r}")


def _tanh_sinh_rule(h: float, tmax: float = 6.0):
    """Double-exponential rule on (0, 1).

    Returns p, 1 - p (each computed without cancellation) and weights; robust
    to integrable algebraic singularities at either end.
    """
    t = np.arange(-tmax, tmax + 0.5 * h, h)
    u = 0.5 * np.pi * np.sinh(t)
    p = special.expit(2.0 * u)
    q = special.expit(-2.0 * u)
    w = h * 0.5 * np.pi * np.cosh(t) * p * q * 2.0
    keep = (p > 0.0) & (q > 0.0)
    return p[keep], q[keep], w[keep]


@lru_cache(maxsize=256)
def _bibeta_log_normalizer_quad(q0, q1, r):
    def integrate(h):
        p, q, w = _tanh_sinh_rule(h)
        lp, lq, lw = np.log(p), np.log(q), np.log(w)
        # 1 - p0 p1 = (1 - p0) + p0 (1 - p1)
        one_minus = q[:, None] + p[:, None] * q[None, :]
        lf = (
            (q0 - 1.0) * lp[:, None] + (q1 - 1.0) * lp[None, :]
            + (q1 + r - 1.0) * lq[:, None] + (q0 + r - 1.0) * lq[None, :]
            - (q0 + q1 + r) * np.log(one_minus)
            + lw[:, None] + lw[None, :]
        )
        return float(special.logsumexp(lf))

    prev = integrate(0.1)
    for h in (0.05, 0.025, 0.0125, 0.00625, 0.003125):
        cur = integrate(h)
        if abs(cur - prev) <= 1e-9:
            return cur
        prev = cur
    raise ConvergenceError("bivariate beta normalizer quadrature not converged", estimate=prev)


def bibeta_logpdf(p0, p1, params: BibetaParams, normalized: bool = False):
    """Log density of the bivariate beta at (p0, p1).

    Unnormalized by default:
        p0^(q0-1) p1^(q1-1) (1-p0)^(q1+r-1) (1-p1)^(q0+r-1) / (1 - p0 p1)^(q0+q1+r)
    At the boundary each factor follows the sign of its exponent: a zero base
    with positive exponent contributes -inf, with negative exponent +inf.
    """
    q0, q1, r = params.as_tuple()
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    if np.any((p0 < 0) | (p0 > 1) | (p1 < 0) | (p1 > 1)):
        raise DomainError("bivariate beta arguments must lie in [0, 1]")
    out = (
        _exp_log(q0 - 1.0, p0)
        + _exp_log(q1 - 1.0, p1)
        + _exp_log(q1 + r - 1.0, 1.0 - p0)
        + _exp_log(q0 + r - 1.0, 1.0 - p1)
        - _exp_log(q0 + q1 + r, 1.0 - p0 * p1)
    )
    if normalized:
        out = out - bibeta_log_normalizer(params)
    return float(out) if out.ndim == 0 else out


def bibeta_sample(params: BibetaParams, rng: np.random.Generator, size=None):
    """Exact draws via three independent standard gammas."""
    q0, q1, r = params.as_tuple()
    u = rng.standard_gamma(q0, size)
    v = rng.standard_gamma(q1, size)
    w = rng.standard_gamma(r, size)
    return u / (u + w), v / (v + w)


# ---------------------------------------------------------------------------
# expectations over gamma hyper-variables
# ---------------------------------------------------------------------------


@lru_cache(maxsize=512)
def gamma_quadrature(shape: float, n: int = 24):
    """Nodes and weights with sum_j w_j f(x_j) ~ E f(X), X ~ Gamma(shape, 1).

    Generalized Gauss-Laguerre for moderate shapes; for large shapes the
    Laguerre weights overflow, so Gauss-Hermite on log X is used instead.
    """
    if not shape > 0:
        raise DomainError("gamma shape must be positive")
    if shape <= 100.0:
        x, w = special.roots_genlaguerre(n, shape - 1.0)
        w = w / w.sum()
    else:
        t, h = np.polynomial.hermite.hermgauss(n)
        sigma = 1.0 / math.sqrt(shape)
        z = math.log(shape) + math.sqrt(2.0) * sigma * t
        logg = shape * z - np.exp(z) - special.gammaln(shape)
        w = h * np.exp(t * t + logg - np.max(logg))
        w = w / w.sum()
        x = np.exp(z)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w
