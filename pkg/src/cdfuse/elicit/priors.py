"""The four beta-family priors for (p0, p1) and their moments.

* IndepBeta(q0, r0, q1, r1): p_i ~ Beta(q_i, r_i) independently.
* HierBeta(alpha0, beta0, alpha1, beta1): p_i | q_i, r_i ~ Beta(q_i, r_i)
  with q_i ~ Gamma(alpha_i), r_i ~ Gamma(beta_i), arms independent.
* Bibeta(q0, q1, r): the latent-gamma bivariate beta.
* HierBibeta(alpha0, alpha1, beta): Bibeta(q0, q1, r) with
  q0 ~ Gamma(alpha0), q1 ~ Gamma(alpha1), r ~ Gamma(beta).

Gamma variates are standard (unit scale) throughout.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Union

import numpy as np
from scipy import integrate, special

from ..errors import ConvergenceError, DomainError, UsageError, ValidationError
from ..specfun import (
    BibetaParams,
    _hyp3f2_11r,
    bibeta_logpdf,
    bibeta_log_normalizer,
    bibeta_moments,
    bibeta_sample,
    gamma_quadrature,
)


@dataclass(frozen=True)
class MomentTargets:
    """Elicited moments: control mean/sd and treatment-difference mean/sd."""

    mu0: float
    sigma0: Optional[float]
    mu_d: float
    sigma_d: float

    def __post_init__(self):
        if not 0.0 < self.mu0 < 1.0:
            raise ValidationError(f"mu0 must lie in (0, 1), got {self.mu0}")
        if not 0.0 < self.mu0 + self.mu_d < 1.0:
            raise ValidationError(f"mu0 + mu_d must lie in (0, 1), got {self.mu0 + self.mu_d}")
        if not self.sigma_d > 0:
            raise ValidationError("sigma_d must be positive")
        if self.sigma0 is not None and self.sigma0 < 0:
            raise ValidationError("sigma0 must be non-negative")

    @property
    def mu1(self) -> float:
        return self.mu0 + self.mu_d

    def arm_variances(self):
        """(var p0, var p1) implied for independent arms: var p1 = sigma_d^2 - sigma0^2."""
        if self.sigma0 is None:
            raise ValidationError("sigma0 is required for families with independent arms")
        v0 = self.sigma0 ** 2
        v1 = self.sigma_d ** 2 - v0
        if not v1 > 0:
            raise ValidationError(
                f"sigma_d ({self.sigma_d}) must exceed sigma0 ({self.sigma0}) so that var(p1) > 0"
            )
        return v0, v1

    def as_dict(self):
        return {"mu0": self.mu0, "sigma0": self.sigma0, "mu_d": self.mu_d, "sigma_d": self.sigma_d}


def _beta_logpdf(p, q, r):
    p = np.asarray(p, dtype=float)
    with np.errstate(divide="ignore"):
        return special.xlogy(q - 1.0, p) + special.xlog1py(r - 1.0, -p) - special.betaln(q, r)


# ---------------------------------------------------------------------------
# hierarchical beta marginal moments
# ---------------------------------------------------------------------------


def inv1p_gamma_mean(shape: float) -> float:
    """E[1 / (1 + eta)] for eta ~ Gamma(shape).

    Adaptive quadrature; the unbounded tail is mapped to a finite interval
    by x = u / (1 - u). The integrand is assembled in log space so large
    shapes do not overflow.
    """
    if not shape > 0:
        raise DomainError("shape must be positive")
    lg = special.gammaln(shape)

    def f(u):
        if u <= 0.0 or u >= 1.0:
            return 0.0
        x = u / (1.0 - u)
        # x^(a-1) e^-x / Gamma(a) / (1 + x) * dx/du, with 1 + x = 1/(1-u)
        logv = (shape - 1.0) * math.log(x) - x - lg + math.log1p(-u) - 2.0 * math.log1p(-u)
        return math.exp(logv)

    def g(x):
        if x <= 0.0:
            return 0.0
        return math.exp((shape - 1.0) * math.log(x) - x - lg - math.log1p(x))

    opts = {"epsabs": 1e-15, "epsrel": 1e-12, "limit": 200}
    if shape < 1.0:
        # x^(shape-1) is singular at the origin: integrate [0, 1] with an
        # algebraic weight rule and the rest of the half-line in u
        head, err_h = integrate.quad(lambda x: math.exp(-x - lg) / (1.0 + x), 0.0, 1.0,
                                     weight="alg", wvar=(shape - 1.0, 0.0), epsabs=1e-15, epsrel=1e-12)
        tail, err_t = integrate.quad(f, 0.5, 1.0, **opts)
        val, err = head + tail, err_h + err_t
    else:
        # the bulk sits within a few sd (sqrt(shape)) of the mode; integrate
        # that window in x and map the far tail through u
        peak = shape - 1.0
        half = 40.0 * math.sqrt(shape) + 10.0
        lo, hi = max(0.0, peak - half), peak + half
        parts = [integrate.quad(g, lo, hi, points=[peak], **opts),
                 integrate.quad(f, hi / (1.0 + hi), 1.0, **opts)]
        if lo > 0.0:
            parts.append(integrate.quad(g, 0.0, lo, **opts))
        val = sum(v for v, _ in parts)
        err = sum(e for _, e in parts)
    if err > 1e-9 * max(val, 1e-300):
        raise ConvergenceError("E[1/(1+eta)] quadrature did not converge", value=val, error=err)
    return float(val)


def hier_beta_arm_moments(alpha: float, beta: float):
    """(mean, variance) of p under p | q, r ~ Beta(q, r), q ~ Gamma(alpha), r ~ Gamma(beta).

    Writing xi = q/(q+r) ~ Beta(alpha, beta) and eta = q+r ~ Gamma(alpha+beta),
    which are independent,
        var p = alpha beta / (A (A + 1)) * [1/A + E{1/(1 + eta)}],  A = alpha + beta.
    """
    a_sum = alpha + beta
    mean = alpha / a_sum
    var = alpha * beta / (a_sum * (a_sum + 1.0)) * (1.0 / a_sum + inv1p_gamma_mean(a_sum))
    return mean, var


# ---------------------------------------------------------------------------
# hierarchical bivariate beta second moment of delta
# ---------------------------------------------------------------------------


def _bibeta_second_delta(q0, q1, r):
    """E[(p1 - p0)^2 | q0, q1, r], vectorised."""
    e00 = q0 * (q0 + 1.0) / ((q0 + r) * (q0 + r + 1.0))
    e11 = q1 * (q1 + 1.0) / ((q1 + r) * (q1 + r + 1.0))
    cross = q0 / (q0 + r) * q1 / (q1 + r) * _hyp3f2_vec(r, q0 + r + 1.0, q1 + r + 1.0)
    return e00 + e11 - 2.0 * cross


def _hyp3f2_vec(r, d, e):
    """3F2(1, 1, r; d, e; 1) for arrays; slow elements go to the scalar routine."""
    return _hyp3f2_11r(r, d, e, max_terms=2000, strict=False)


def hier_bibeta_delta_second_moment(alpha0, alpha1, beta, method="quadrature", n_nodes=24,
                                    mc_draws=400_000, seed=20240611):
    """E[(p1 - p0)^2] under the hierarchical bivariate beta.

    ``quadrature`` integrates the conditional second moment against the
    three gamma hyperpriors with a tensor Gauss rule; ``mc`` averages it
    over seeded draws of (q0, q1, r). Either way the conditional moment is
    exact, so total variance = E{var(. | q)} + var{E(. | q)} is respected.
    """
    if method == "quadrature":
        x0, w0 = gamma_quadrature(float(alpha0), n_nodes)
        x1, w1 = gamma_quadrature(float(alpha1), n_nodes)
        xr, wr = gamma_quadrature(float(beta), n_nodes)
        Q0, Q1, R = np.meshgrid(x0, x1, xr, indexing="ij")
        W = w0[:, None, None] * w1[None, :, None] * wr[None, None, :]
        return float(np.sum(W * _bibeta_second_delta(Q0, Q1, R)))
    if method == "mc":
        rng = np.random.default_rng(seed)
        q0 = rng.standard_gamma(alpha0, mc_draws)
        q1 = rng.standard_gamma(alpha1, mc_draws)
        r = rng.standard_gamma(beta, mc_draws)
        return float(np.mean(_bibeta_second_delta(q0, q1, r)))
    raise UsageError(f"unknown method {method!r}")


# ---------------------------------------------------------------------------
# families
# ---------------------------------------------------------------------------


def _require_positive(name, **vals):
    for k, v in vals.items():
        if not (np.isfinite(v) and v > 0):
            raise DomainError(f"{name}: hyperparameter {k} must be positive, got {v}")


@dataclass(frozen=True)
class IndepBeta:
    q0: float
    r0: float
    q1: float
    r1: float
    kind = "indep-beta"

    def __post_init__(self):
        _require_positive(self.kind, q0=self.q0, r0=self.r0, q1=self.q1, r1=self.r1)

    def params(self):
        return {"q0": self.q0, "r0": self.r0, "q1": self.q1, "r1": self.r1}

    def moments(self) -> dict:
        def arm(q, r):
            s = q + r
            return q / s, q * r / (s * s * (s + 1.0))

        m0, v0 = arm(self.q0, self.r0)
        m1, v1 = arm(self.q1, self.r1)
        return {"mean_p0": m0, "mean_p1": m1, "var_p0": v0, "var_p1": v1, "cov": 0.0,
                "mean_delta": m1 - m0, "var_delta": v0 + v1}

    def sample(self, rng, size=None):
        return rng.beta(self.q0, self.r0, size), rng.beta(self.q1, self.r1, size)

    def logpdf(self, p0, p1):
        return _beta_logpdf(p0, self.q0, self.r0) + _beta_logpdf(p1, self.q1, self.r1)


@dataclass(frozen=True)
class HierBeta:
    alpha0: float
    beta0: float
    alpha1: float
    beta1: float
    kind = "hier-beta"

    def __post_init__(self):
        _require_positive(self.kind, alpha0=self.alpha0, beta0=self.beta0,
                          alpha1=self.alpha1, beta1=self.beta1)

    def params(self):
        return {"alpha0": self.alpha0, "beta0": self.beta0, "alpha1": self.alpha1, "beta1": self.beta1}

    def moments(self) -> dict:
        m0, v0 = hier_beta_arm_moments(self.alpha0, self.beta0)
        m1, v1 = hier_beta_arm_moments(self.alpha1, self.beta1)
        return {"mean_p0": m0, "mean_p1": m1, "var_p0": v0, "var_p1": v1, "cov": 0.0,
                "mean_delta": m1 - m0, "var_delta": v0 + v1}

    def sample(self, rng, size=None):
        q0 = rng.standard_gamma(self.alpha0, size)
        r0 = rng.standard_gamma(self.beta0, size)
        q1 = rng.standard_gamma(self.alpha1, size)
        r1 = rng.standard_gamma(self.beta1, size)
        return rng.beta(q0, r0), rng.beta(q1, r1)

    def logpdf(self, p0, p1, exact=False):
        """Marginal log density of (p0, p1).

        Each arm's density integrates the hyper-variables by Gauss quadrature.
        Unless ``exact`` is set, the log density is read from a cubic spline in
        logit(p), tabulated once per arm, with direct quadrature for points
        in the far tails.
        """
        if exact:
            return (_hier_beta_marginal_logpdf(p0, self.alpha0, self.beta0)
                    + _hier_beta_marginal_logpdf(p1, self.alpha1, self.beta1))
        return (_hier_beta_spline(self.alpha0, self.beta0)(p0)
                + _hier_beta_spline(self.alpha1, self.beta1)(p1))


_LOGIT_SPAN = 30.0


def _hier_beta_marginal_logpdf(p, alpha, beta, n_nodes=32, chunk=16384):
    xq, wq = gamma_quadrature(float(alpha), n_nodes)
    xr, wr = gamma_quadrature(float(beta), n_nodes)
    lw = np.log(wq)[:, None] + np.log(wr)[None, :]
    lb = special.betaln(xq[:, None], xr[None, :])
    p = np.asarray(p, dtype=float)
    flat = p.ravel()
    out = np.empty(flat.size)
    with np.errstate(divide="ignore"):
        for s in range(0, flat.size, chunk):
            x = flat[s:s + chunk, None, None]
            lp = (special.xlogy(xq[None, :, None] - 1.0, x)
                  + special.xlog1py(xr[None, None, :] - 1.0, -x) - lb[None] + lw[None])
            out[s:s + chunk] = special.logsumexp(lp.reshape(lp.shape[0], -1), axis=1)
    out = out.reshape(p.shape)
    return out if out.ndim else float(out)


@lru_cache(maxsize=64)
def _hier_beta_spline(alpha, beta, n_knots=4001):
    from scipy.interpolate import CubicSpline

    y = np.linspace(-_LOGIT_SPAN, _LOGIT_SPAN, n_knots)
    spline = CubicSpline(y, _hier_beta_marginal_logpdf(special.expit(y), alpha, beta))

    def logpdf(p):
        p = np.asarray(p, dtype=float)
        with np.errstate(divide="ignore"):
            y = special.logit(p)
        inner = np.abs(y) <= _LOGIT_SPAN
        out = np.empty(p.shape)
        out[inner] = spline(y[inner])
        if not inner.all():
            out[~inner] = _hier_beta_marginal_logpdf(p[~inner], alpha, beta)
        return out if out.ndim else float(out)

    return logpdf


@dataclass(frozen=True)
class Bibeta:
    q0: float
    q1: float
    r: float
    kind = "bibeta"

    def __post_init__(self):
        _require_positive(self.kind, q0=self.q0, q1=self.q1, r=self.r)

    @property
    def bp(self) -> BibetaParams:
        return BibetaParams(self.q0, self.q1, self.r)

    def params(self):
        return {"q0": self.q0, "q1": self.q1, "r": self.r}

    def moments(self) -> dict:
        m = bibeta_moments(self.bp)
        return {k: m[k] for k in ("mean_p0", "mean_p1", "var_p0", "var_p1", "cov", "mean_delta", "var_delta")}

    def sample(self, rng, size=None):
        return bibeta_sample(self.bp, rng, size)

    def logpdf(self, p0, p1):
        return bibeta_logpdf(p0, p1, self.bp, normalized=True)


@dataclass(frozen=True)
class HierBibeta:
    alpha0: float
    alpha1: float
    beta: float
    kind = "hier-bibeta"

    def __post_init__(self):
        _require_positive(self.kind, alpha0=self.alpha0, alpha1=self.alpha1, beta=self.beta)

    def params(self):
        return {"alpha0": self.alpha0, "alpha1": self.alpha1, "beta": self.beta}

    def moments(self, method="quadrature") -> dict:
        m0, v0 = hier_beta_arm_moments(self.alpha0, self.beta)
        m1, v1 = hier_beta_arm_moments(self.alpha1, self.beta)
        e2 = hier_bibeta_delta_second_moment(self.alpha0, self.alpha1, self.beta, method=method)
        var_d = e2 - (m1 - m0) ** 2
        return {"mean_p0": m0, "mean_p1": m1, "var_p0": v0, "var_p1": v1,
                "cov": 0.5 * (v0 + v1 - var_d), "mean_delta": m1 - m0, "var_delta": var_d}

    def sample(self, rng, size=None):
        q0 = rng.standard_gamma(self.alpha0, size)
        q1 = rng.standard_gamma(self.alpha1, size)
        r = rng.standard_gamma(self.beta, size)
        u = rng.standard_gamma(q0)
        v = rng.standard_gamma(q1)
        w = rng.standard_gamma(r)
        return u / (u + w), v / (v + w)

    def logpdf(self, p0, p1, n_nodes=14):
        """Marginal log density; the three hyper-variables are integrated by a tensor Gauss rule."""
        return _hier_bibeta_logpdf(p0, p1, self.alpha0, self.alpha1, self.beta, n_nodes)


def _hier_bibeta_logpdf(p0, p1, alpha0, alpha1, beta, n_nodes, chunk=4096):
    x0, w0 = gamma_quadrature(float(alpha0), n_nodes)
    x1, w1 = gamma_quadrature(float(alpha1), n_nodes)
    xr, wr = gamma_quadrature(float(beta), n_nodes)
    Q0, Q1, R = (a.ravel() for a in np.meshgrid(x0, x1, xr, indexing="ij"))
    lw = (np.log(w0)[:, None, None] + np.log(w1)[None, :, None] + np.log(wr)[None, None, :]).ravel()
    lnorm = special.gammaln(Q0) + special.gammaln(Q1) + special.gammaln(R) - special.gammaln(Q0 + Q1 + R)
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    p0b, p1b = np.broadcast_arrays(p0, p1)
    a0 = p0b.ravel()
    a1 = p1b.ravel()
    out = np.empty(a0.size)
    with np.errstate(divide="ignore"):
        for start in range(0, a0.size, chunk):
            s = slice(start, start + chunk)
            lp0, lp1 = np.log(a0[s])[:, None], np.log(a1[s])[:, None]
            lq0, lq1 = np.log1p(-a0[s])[:, None], np.log1p(-a1[s])[:, None]
            lcross = np.log1p(-a0[s] * a1[s])[:, None]
            lf = ((Q0 - 1.0) * lp0 + (Q1 - 1.0) * lp1 + (Q1 + R - 1.0) * lq0
                  + (Q0 + R - 1.0) * lq1 - (Q0 + Q1 + R) * lcross - lnorm + lw)
            out[s] = special.logsumexp(lf, axis=1)
    out = out.reshape(p0b.shape)
    return out if out.ndim else float(out)


Family = Union[IndepBeta, HierBeta, Bibeta, HierBibeta]
FAMILIES = {cls.kind: cls for cls in (IndepBeta, HierBeta, Bibeta, HierBibeta)}


@dataclass(frozen=True)
class PriorSpec:
    """A fitted prior: the family with its hyperparameters plus the targets it was fitted to."""

    family: Family
    provenance: Optional[MomentTargets] = None
    residual: float = 0.0
    info: dict = field(default_factory=dict, compare=False)

    @property
    def kind(self) -> str:
        return self.family.kind

    def moments(self) -> dict:
        return self.family.moments()

    def sample(self, rng, size=None):
        return self.family.sample(rng, size)

    def logpdf(self, p0, p1):
        return self.family.logpdf(p0, p1)

    def to_dict(self) -> dict:
        return {
            "family": self.kind,
            "params": {k: float(v) for k, v in self.family.params().items()},
            "targets": None if self.provenance is None else self.provenance.as_dict(),
            "residual": float(self.residual),
        }

    @classmethod
    def from_params(cls, kind: str, **params) -> "PriorSpec":
        try:
            fam = FAMILIES[kind]
        except KeyError:
            raise ValidationError(f"unknown prior family {kind!r}") from None
        return cls(fam(**params))
