"""Method-of-moments hyperparameter fitting for the four prior families.

In every family the mean equations pin the hyperparameter ratios exactly
(for example q0 / (q0 + r) = mu0), so each fit reduces to one scale
variable that is bracketed on a log grid and solved with Brent's method.
A damped Newton solver on the full log-parameter vector, with a simplex
fallback, is used when the one-dimensional bracket cannot be formed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from ..errors import FitError, ValidationError
from .priors import (
    Bibeta,
    HierBeta,
    HierBibeta,
    IndepBeta,
    MomentTargets,
    PriorSpec,
    hier_beta_arm_moments,
    hier_bibeta_delta_second_moment,
)
from .survey import PooledHistogram

RESIDUAL_TOL = 1e-9
MAX_ITER = 500


def damped_newton(fun, x0, tol=RESIDUAL_TOL, max_iter=MAX_ITER, fd_step=1e-7):
    """Solve fun(x) = 0 by Newton steps with a forward-difference Jacobian.

    Each step is halved until the residual norm decreases. If Newton
    stalls, Nelder-Mead on the squared residual takes over. Raises
    FitError with the final residuals when neither reaches ``tol``.
    """
    x = np.asarray(x0, dtype=float).copy()

    def safe(z):
        try:
            f = np.asarray(fun(z), dtype=float)
        except (FloatingPointError, ArithmeticError, ValueError):
            return None
        return f if np.all(np.isfinite(f)) else None

    def jacobian(z, fz):
        jac = np.empty((fz.size, z.size))
        for j in range(z.size):
            h = fd_step * max(1.0, abs(z[j]))
            for sign in (1.0, -1.0):
                zp = z.copy()
                zp[j] += sign * h
                fp = safe(zp)
                if fp is not None:
                    jac[:, j] = sign * (fp - fz) / h
                    break
            else:
                return None
        return jac

    f = safe(x)
    if f is None:
        raise FitError("residuals undefined at the starting point", residuals=None)
    for _ in range(max_iter):
        if np.max(np.abs(f)) < tol:
            return x, f
        jac = jacobian(x, f)
        if jac is None:
            break
        step = np.linalg.lstsq(jac, -f, rcond=None)[0]
        norm = np.linalg.norm(f)
        lam = 1.0
        improved = False
        while lam > 1e-8:
            cand = x + lam * step
            fc = safe(cand)
            if fc is not None and np.linalg.norm(fc) < norm:
                x, f, improved = cand, fc, True
                break
            lam *= 0.5  # reject the step and shrink the trust region
        if not improved:
            break
    if np.max(np.abs(f)) < tol:
        return x, f

    def sq(z):
        fz = safe(z)
        return 1e300 if fz is None else float(np.dot(fz, fz))

    res = optimize.minimize(sq, x, method="Nelder-Mead",
                            options={"xatol": 1e-13, "fatol": tol * tol * 1e-4, "maxiter": 20 * max_iter})
    fz = safe(res.x)
    if fz is not None and np.max(np.abs(fz)) < tol:
        return res.x, fz
    raise FitError("moment equations did not converge", residuals=None if fz is None else fz.tolist())


def _solve_scale(resid, start=0.0, step=math.log(2.0), max_steps=60):
    """Root of a monotone scalar residual in a log-scale variable.

    Walks outward from ``start`` in steps of ``step`` until the residual
    changes sign, then polishes with Brent's method. Returns None when no
    sign change is found.
    """
    def safe(t):
        try:
            v = resid(t)
        except (ArithmeticError, ValueError):
            return float("nan")
        return v

    t0, f0 = start, safe(start)
    if not np.isfinite(f0):
        return None
    if f0 == 0.0:
        return t0
    # the moment residuals decrease with scale: positive means the scale is too small
    direction = 1.0 if f0 > 0 else -1.0
    for _ in range(max_steps):
        t1 = t0 + direction * step
        f1 = safe(t1)
        if not np.isfinite(f1):
            return None
        if f0 * f1 <= 0:
            lo, hi = sorted((t0, t1))
            return optimize.brentq(resid, lo, hi, xtol=1e-15, rtol=1e-15, maxiter=MAX_ITER)
        if abs(f1) >= abs(f0):
            direction = -direction  # moving away from the root
        t0, f0 = t1, f1
    return None


def _beta_from_moments(mean, var, label):
    bound = mean * (1.0 - mean)
    if not 0.0 < mean < 1.0:
        raise FitError(f"{label}: mean {mean} outside (0, 1)")
    if not 0.0 < var < bound:
        raise FitError(f"{label}: variance {var:.6g} must lie in (0, mean(1-mean) = {bound:.6g})")
    s = bound / var - 1.0
    return mean * s, (1.0 - mean) * s


def fit_indep_beta(t: MomentTargets) -> PriorSpec:
    """Closed form per arm: s = mu(1-mu)/sigma^2 - 1, q = mu s, r = (1-mu) s."""
    try:
        v0, v1 = t.arm_variances()
    except ValidationError as exc:
        raise FitError(str(exc)) from None
    q0, r0 = _beta_from_moments(t.mu0, v0, "control arm")
    q1, r1 = _beta_from_moments(t.mu1, v1, "treatment arm")
    fam = IndepBeta(q0, r0, q1, r1)
    return PriorSpec(fam, t, _residual(fam, t))


def _fit_hier_arm(mean, var, label):
    bound = mean * (1.0 - mean)
    if not 0.0 < var < bound:
        raise FitError(f"{label}: variance {var:.6g} must lie in (0, mean(1-mean) = {bound:.6g})")

    def resid(log_a):
        a_sum = math.exp(log_a)
        _, v = hier_beta_arm_moments(mean * a_sum, (1.0 - mean) * a_sum)
        return math.log(v) - math.log(var)

    log_a = _solve_scale(resid, start=math.log(mean * (1.0 - mean) / var))
    if log_a is None:
        def full(z):
            m, v = hier_beta_arm_moments(math.exp(z[0]), math.exp(z[1]))
            return [m - mean, v / var - 1.0]

        z, _ = damped_newton(full, [math.log(mean * 10), math.log((1 - mean) * 10)])
        return math.exp(z[0]), math.exp(z[1])
    a_sum = math.exp(log_a)
    return mean * a_sum, (1.0 - mean) * a_sum


def fit_hier_beta(t: MomentTargets) -> PriorSpec:
    """Match each arm's mean alpha/(alpha+beta) and hierarchical variance."""
    try:
        v0, v1 = t.arm_variances()
    except ValidationError as exc:
        raise FitError(str(exc)) from None
    a0, b0 = _fit_hier_arm(t.mu0, v0, "control arm")
    a1, b1 = _fit_hier_arm(t.mu1, v1, "treatment arm")
    fam = HierBeta(a0, b0, a1, b1)
    return PriorSpec(fam, t, _residual(fam, t))


def fit_bibeta(t: MomentTargets) -> PriorSpec:
    """Match q0/(q0+r) = mu0, q1/(q1+r) = mu0 + mu_d and E(p1-p0)^2 = sigma_d^2 + mu_d^2."""
    k0 = t.mu0 / (1.0 - t.mu0)
    k1 = t.mu1 / (1.0 - t.mu1)
    target = t.sigma_d ** 2 + t.mu_d ** 2

    def resid(log_r):
        r = math.exp(log_r)
        m = Bibeta(k0 * r, k1 * r, r).moments()
        return math.log(m["var_delta"] + m["mean_delta"] ** 2) - math.log(target)

    log_r = _solve_scale(resid, start=math.log(2.0))
    if log_r is None:
        def full(z):
            q0, q1, r = np.exp(z)
            m = Bibeta(q0, q1, r).moments()
            return [m["mean_p0"] - t.mu0, m["mean_p1"] - t.mu1,
                    (m["var_delta"] + m["mean_delta"] ** 2) / target - 1.0]

        z, _ = damped_newton(full, np.log([k0 * 2.0, k1 * 2.0, 2.0]))
        fam = Bibeta(*np.exp(z))
    else:
        r = math.exp(log_r)
        fam = Bibeta(k0 * r, k1 * r, r)
    return PriorSpec(fam, t, _residual(fam, t))


def fit_hier_bibeta(t: MomentTargets, method: str = "quadrature") -> PriorSpec:
    """Match alpha_i/(alpha_i+beta) to the arm means and var(p1-p0) to sigma_d^2.

    ``method`` selects how the hierarchical second moment of the difference
    is integrated: tensor Gauss quadrature or seeded Monte Carlo.
    """
    k0 = t.mu0 / (1.0 - t.mu0)
    k1 = t.mu1 / (1.0 - t.mu1)
    target = t.sigma_d ** 2 + t.mu_d ** 2

    def second(b):
        return hier_bibeta_delta_second_moment(k0 * b, k1 * b, b, method=method)

    def resid(log_b):
        return math.log(second(math.exp(log_b))) - math.log(target)

    start = math.log(fit_bibeta(t).family.r)
    log_b = _solve_scale(resid, start=start)
    if log_b is None:
        raise FitError("no hierarchical bivariate beta matches the requested spread",
                       residuals=[resid(start)])
    b = math.exp(log_b)
    fam = HierBibeta(k0 * b, k1 * b, b)
    return PriorSpec(fam, t, _residual(fam, t, method=method), info={"method": method})


def _residual(fam, t: MomentTargets, **kw) -> float:
    m = fam.moments(**kw)
    res = [m["mean_p0"] - t.mu0, m["mean_delta"] - t.mu_d,
           math.sqrt(max(m["var_delta"], 0.0)) - t.sigma_d]
    if isinstance(fam, (IndepBeta, HierBeta)) and t.sigma0 is not None:
        res.append(math.sqrt(m["var_p0"]) - t.sigma0)
    return float(np.max(np.abs(res)))


FITTERS = {
    "indep-beta": fit_indep_beta,
    "hier-beta": fit_hier_beta,
    "bibeta": fit_bibeta,
    "hier-bibeta": fit_hier_bibeta,
}


def fit_prior(kind: str, t: MomentTargets) -> PriorSpec:
    try:
        fitter = FITTERS[kind]
    except KeyError:
        raise ValidationError(f"unknown prior family {kind!r}") from None
    return fitter(t)


# ---------------------------------------------------------------------------
# single-curve fits to the pooled histogram
# ---------------------------------------------------------------------------


def fit_normal_prior(h: PooledHistogram):
    """Normal curve matching the first two histogram moments: (mean, sd)."""
    return float(h.mean), float(h.sd)


@dataclass(frozen=True)
class ShiftedLognormal:
    """delta = c + exp(N(mu_l, sigma_l^2))."""

    mu_l: float
    sigma_l: float
    c: float

    @property
    def mean(self) -> float:
        return self.c + math.exp(self.mu_l + 0.5 * self.sigma_l ** 2)

    @property
    def sd(self) -> float:
        s2 = self.sigma_l ** 2
        return math.sqrt(math.expm1(s2)) * math.exp(self.mu_l + 0.5 * s2)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        y = x - self.c
        with np.errstate(divide="ignore", invalid="ignore"):
            z = (np.log(y) - self.mu_l) / self.sigma_l
            out = np.exp(-0.5 * z * z) / (y * self.sigma_l * math.sqrt(2.0 * math.pi))
        out = np.where(y > 0, out, 0.0)
        return out if out.ndim else float(out)


def fit_lognormal_prior(h: PooledHistogram, c: float) -> ShiftedLognormal:
    """Shifted log-normal with the histogram's mean and sd.

    With m = mean - c: sigma_l^2 = log(1 + sd^2 / m^2), mu_l = log m - sigma_l^2 / 2.
    """
    m = h.mean - c
    if not m > 0:
        raise FitError(f"shift c = {c} must lie below the histogram mean {h.mean}")
    s2 = math.log1p((h.sd / m) ** 2)
    return ShiftedLognormal(math.log(m) - 0.5 * s2, math.sqrt(s2), float(c))
