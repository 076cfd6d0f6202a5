"""Random-walk Metropolis-Hastings for (p0, p1) under the four prior families.

Hierarchical priors are sampled on the extended state (p0, p1 plus their
gamma hyper-variables); only the (p0, p1) margin is reported.

Two proposal schemes are available:

``adaptive``
    Gaussian random walk on logit(p) and log(hyper-variable) coordinates,
    with Jacobian terms included in the target. A per-chain scale multiplier
    is tuned toward 0.234 acceptance (0.44 for one-coordinate updates)
    during the first half of burn-in, then frozen.
``paper-mode``
    Uniform-window random walk on the untransformed coordinates with no
    adaptation. The default window for p is [-1, 1], which on the unit
    square acts almost as an independence sampler and yields very low
    acceptance rates.

Each chain draws from its own stream, seeded by (seed, chain index).
Uniform variates are consumed in a fixed order per iteration, and normal
variates are produced from uniforms by the inverse CDF, so the draws do
not depend on the block size, the number of threads, or which other chains
run alongside.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy import special

from ..elicit.priors import Bibeta, HierBeta, HierBibeta, IndepBeta, PriorSpec
from ..errors import SamplerError, UsageError, ValidationError
from .likelihood import TrialData

MODES = ("adaptive", "paper-mode")
UNIT, POSITIVE = 0, 1


@dataclass(frozen=True)
class MCMCConfig:
    burn_in: int = 25_000
    chains: int = 1000
    draws_per_chain: int = 1
    thin: int = 1
    mode: str = "adaptive"
    proposal_scale: Optional[float] = None
    hyper_scale: Optional[float] = None
    blockwise: bool = False
    seed: int = 0
    block_size: int = 512
    threads: Optional[int] = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValidationError(f"mcmc mode must be one of {MODES}, got {self.mode!r}")
        for name in ("burn_in", "chains", "draws_per_chain", "thin", "block_size"):
            v = getattr(self, name)
            if int(v) != v or v < (0 if name == "burn_in" else 1):
                raise ValidationError(f"mcmc {name} must be a {'non-negative' if name == 'burn_in' else 'positive'} integer")
        for name in ("proposal_scale", "hyper_scale"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ValidationError(f"mcmc {name} must be positive")

    @classmethod
    def from_dict(cls, cfg: dict) -> "MCMCConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(cfg) - known
        if unknown:
            raise ValidationError(f"unknown mcmc settings: {sorted(unknown)}")
        return cls(**cfg)

    @classmethod
    def single_chain(cls, draws: int = 1000, thin: int = 25, **kw) -> "MCMCConfig":
        """One long chain, thinned, instead of one retained draw per chain."""
        return cls(chains=1, draws_per_chain=draws, thin=thin, **kw)

    def as_dict(self):
        return asdict(self)


@dataclass
class PosteriorSamples:
    """Retained (p0, p1) draws with sampler metadata."""

    draws: np.ndarray
    meta: dict = field(default_factory=dict)
    hyper: Optional[np.ndarray] = None

    def __post_init__(self):
        self.draws = np.asarray(self.draws, dtype=float)
        if self.draws.ndim != 2 or self.draws.shape[1] != 2:
            raise UsageError("draws must be an (n, 2) array")
        if np.any((self.draws <= 0) | (self.draws >= 1)):
            raise UsageError("draws must lie in the open unit square")

    @property
    def delta(self) -> np.ndarray:
        return self.draws[:, 1] - self.draws[:, 0]

    @property
    def acceptance_rate(self) -> float:
        return float(self.meta.get("acceptance_rate", float("nan")))

    def __len__(self):
        return self.draws.shape[0]


# ---------------------------------------------------------------------------
# log targets on the natural scale, vectorised over chains (rows)
# ---------------------------------------------------------------------------


def _gamma_logpdf(x, shape):
    return (shape - 1.0) * np.log(x) - x - special.gammaln(shape)


def _loglik_cols(p0, p1, d: TrialData):
    return d.s0 * np.log(p0) + d.f0 * np.log1p(-p0) + d.s1 * np.log(p1) + d.f1 * np.log1p(-p1)


class _Model:
    """A posterior on an extended state with per-coordinate support kinds."""

    kinds: tuple
    names: tuple

    def __init__(self, fam, d: TrialData):
        self.fam = fam
        self.d = d

    @property
    def dim(self):
        return len(self.kinds)

    def in_support(self, x):
        kinds = np.asarray(self.kinds)
        unit_ok = np.all((x[:, kinds == UNIT] > 0) & (x[:, kinds == UNIT] < 1), axis=1)
        pos_ok = np.all(x[:, kinds == POSITIVE] > 0, axis=1)
        return unit_ok & pos_ok

    def log_target(self, x):
        ok = self.in_support(x)
        safe = np.where(ok[:, None], x, self._safe_point)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            val = self._log_prior(safe) + _loglik_cols(safe[:, 0], safe[:, 1], self.d)
        val = np.where(ok & ~np.isnan(val), val, -np.inf)
        return val

    @property
    def _safe_point(self):
        return np.array([0.5 if k == UNIT else 1.0 for k in self.kinds])

    def prior_draw(self, rng):
        raise NotImplementedError

    def hyper_shapes(self):
        return ()


class _IndepBetaModel(_Model):
    kinds = (UNIT, UNIT)
    names = ("p0", "p1")

    def _log_prior(self, x):
        f = self.fam
        p0, p1 = x[:, 0], x[:, 1]
        return ((f.q0 - 1) * np.log(p0) + (f.r0 - 1) * np.log1p(-p0)
                + (f.q1 - 1) * np.log(p1) + (f.r1 - 1) * np.log1p(-p1))

    def prior_draw(self, rng):
        f = self.fam
        return np.array([rng.beta(f.q0, f.r0), rng.beta(f.q1, f.r1)])


class _BibetaModel(_Model):
    kinds = (UNIT, UNIT)
    names = ("p0", "p1")

    def _log_prior(self, x):
        f = self.fam
        p0, p1 = x[:, 0], x[:, 1]
        return ((f.q0 - 1) * np.log(p0) + (f.q1 - 1) * np.log(p1) + (f.q1 + f.r - 1) * np.log1p(-p0)
                + (f.q0 + f.r - 1) * np.log1p(-p1) - (f.q0 + f.q1 + f.r) * np.log1p(-p0 * p1))

    def prior_draw(self, rng):
        f = self.fam
        u, v, w = rng.standard_gamma(f.q0), rng.standard_gamma(f.q1), rng.standard_gamma(f.r)
        return np.array([u / (u + w), v / (v + w)])


class _HierBetaModel(_Model):
    kinds = (UNIT, UNIT, POSITIVE, POSITIVE, POSITIVE, POSITIVE)
    names = ("p0", "p1", "q0", "r0", "q1", "r1")

    def _log_prior(self, x):
        f = self.fam
        p0, p1, q0, r0, q1, r1 = x.T
        return ((q0 - 1) * np.log(p0) + (r0 - 1) * np.log1p(-p0) - special.betaln(q0, r0)
                + (q1 - 1) * np.log(p1) + (r1 - 1) * np.log1p(-p1) - special.betaln(q1, r1)
                + _gamma_logpdf(q0, f.alpha0) + _gamma_logpdf(r0, f.beta0)
                + _gamma_logpdf(q1, f.alpha1) + _gamma_logpdf(r1, f.beta1))

    def prior_draw(self, rng):
        f = self.fam
        q0, r0 = rng.standard_gamma(f.alpha0), rng.standard_gamma(f.beta0)
        q1, r1 = rng.standard_gamma(f.alpha1), rng.standard_gamma(f.beta1)
        return np.array([rng.beta(q0, r0), rng.beta(q1, r1), q0, r0, q1, r1])

    def hyper_shapes(self):
        f = self.fam
        return (f.alpha0, f.beta0, f.alpha1, f.beta1)


class _HierBibetaModel(_Model):
    kinds = (UNIT, UNIT, POSITIVE, POSITIVE, POSITIVE)
    names = ("p0", "p1", "q0", "q1", "r")

    def _log_prior(self, x):
        f = self.fam
        p0, p1, q0, q1, r = x.T
        s = q0 + q1 + r
        log_norm = special.gammaln(q0) + special.gammaln(q1) + special.gammaln(r) - special.gammaln(s)
        return ((q0 - 1) * np.log(p0) + (q1 - 1) * np.log(p1) + (q1 + r - 1) * np.log1p(-p0)
                + (q0 + r - 1) * np.log1p(-p1) - s * np.log1p(-p0 * p1) - log_norm
                + _gamma_logpdf(q0, f.alpha0) + _gamma_logpdf(q1, f.alpha1) + _gamma_logpdf(r, f.beta))

    def prior_draw(self, rng):
        f = self.fam
        q0, q1, r = rng.standard_gamma(f.alpha0), rng.standard_gamma(f.alpha1), rng.standard_gamma(f.beta)
        u, v, w = rng.standard_gamma(q0), rng.standard_gamma(q1), rng.standard_gamma(r)
        return np.array([u / (u + w), v / (v + w), q0, q1, r])

    def hyper_shapes(self):
        f = self.fam
        return (f.alpha0, f.alpha1, f.beta)


_MODELS = {IndepBeta: _IndepBetaModel, Bibeta: _BibetaModel, HierBeta: _HierBetaModel,
           HierBibeta: _HierBibetaModel}


def build_model(prior, d: TrialData) -> _Model:
    fam = prior.family if isinstance(prior, PriorSpec) else prior
    try:
        return _MODELS[type(fam)](fam, d)
    except KeyError:
        raise UsageError(f"no sampler for prior {fam!r}") from None


# ---------------------------------------------------------------------------
# coordinate transforms for the adaptive sampler
# ---------------------------------------------------------------------------


def _to_internal(x, kinds):
    y = np.empty_like(x)
    for j, k in enumerate(kinds):
        y[:, j] = special.logit(x[:, j]) if k == UNIT else np.log(x[:, j])
    return y


def _to_natural(y, kinds):
    x = np.empty_like(y)
    for j, k in enumerate(kinds):
        x[:, j] = special.expit(y[:, j]) if k == UNIT else np.exp(y[:, j])
    return x


def _log_jacobian(y, kinds):
    out = np.zeros(y.shape[0])
    for j, k in enumerate(kinds):
        if k == UNIT:
            # d expit(y)/dy = p (1 - p)
            out += -np.logaddexp(0.0, -y[:, j]) - np.logaddexp(0.0, y[:, j])
        else:
            out += y[:, j]
    return out


# ---------------------------------------------------------------------------
# the sampler
# ---------------------------------------------------------------------------


class _Streams:
    """Per-chain uniform streams served in blocks of iterations."""

    def __init__(self, gens, per_iter, block):
        self.gens = gens
        self.per_iter = per_iter
        self.block = block
        self.buf = None
        self.pos = block

    def next(self):
        if self.pos >= self.block:
            self.buf = np.stack([g.random((self.block, self.per_iter)) for g in self.gens], axis=1)
            self.pos = 0
        u = self.buf[self.pos]
        self.pos += 1
        return u


def _chain_generators(entropy: int, start: int, stop: int):
    return [np.random.default_rng(np.random.SeedSequence(entropy=entropy, spawn_key=(i,)))
            for i in range(start, stop)]


def _run_group(model: _Model, cfg: MCMCConfig, entropy: int, start: int, stop: int):
    gens = _chain_generators(entropy, start, stop)
    n = stop - start
    D = model.dim
    kinds = model.kinds
    x = np.stack([model.prior_draw(g) for g in gens])
    # keep starting points strictly inside the support
    unit = np.asarray(kinds) == UNIT
    x[:, unit] = np.clip(x[:, unit], 1e-12, 1.0 - 1e-12)
    x[:, ~unit] = np.maximum(x[:, ~unit], 1e-12)

    adaptive = cfg.mode == "adaptive"
    blockwise = cfg.blockwise
    per_iter = 2 * D if blockwise else D + 1
    streams = _Streams(gens, per_iter, cfg.block_size)

    if adaptive:
        base = cfg.proposal_scale if cfg.proposal_scale is not None else (2.38 / np.sqrt(D) * 0.3)
        scale = np.full((n, D) if blockwise else (n, 1), float(base))
        state = _to_internal(x, kinds)
        lp = model.log_target(x) + _log_jacobian(state, kinds)
        target_rate = 0.44 if blockwise else 0.234
    else:
        pw = cfg.proposal_scale if cfg.proposal_scale is not None else 1.0
        hw = cfg.hyper_scale if cfg.hyper_scale is not None else 1.0
        shapes = model.hyper_shapes()
        width = np.array([pw if k == UNIT else hw * np.sqrt(shapes[j - 2]) for j, k in enumerate(kinds)])
        state = x
        lp = model.log_target(x)
    if not np.all(np.isfinite(lp)):
        raise SamplerError("log posterior is not finite at the starting points")

    adapt_until = cfg.burn_in // 2 if adaptive else 0
    batch = 50
    batch_acc = np.zeros(scale.shape if adaptive else (n, 1))
    n_batches = 0
    accepted_burn = np.zeros(n, dtype=np.int64)
    accepted_kept = np.zeros(n, dtype=np.int64)
    kept_iters = 0
    total = cfg.burn_in + cfg.draws_per_chain * cfg.thin
    out = np.empty((n, cfg.draws_per_chain, D))
    k_out = 0

    def logpost(s):
        if adaptive:
            nat = _to_natural(s, kinds)
            return model.log_target(nat) + _log_jacobian(s, kinds)
        return model.log_target(s)

    for it in range(total):
        u = streams.next()
        if blockwise:
            acc_any = np.zeros(n, dtype=bool)
            acc_cols = np.zeros((n, D))
            for j in range(D):
                prop = state.copy()
                if adaptive:
                    prop[:, j] += scale[:, j] * special.ndtri(u[:, 2 * j])
                else:
                    prop[:, j] += width[j] * (2.0 * u[:, 2 * j] - 1.0)
                lq = logpost(prop)
                acc = np.log(u[:, 2 * j + 1]) < lq - lp
                state = np.where(acc[:, None], prop, state)
                lp = np.where(acc, lq, lp)
                acc_any |= acc
                acc_cols[:, j] = acc
            acc = acc_any
        else:
            if adaptive:
                prop = state + scale * special.ndtri(u[:, :D])
            else:
                prop = state + width[None, :] * (2.0 * u[:, :D] - 1.0)
            lq = logpost(prop)
            acc = np.log(u[:, D]) < lq - lp
            state = np.where(acc[:, None], prop, state)
            lp = np.where(acc, lq, lp)
            acc_cols = acc[:, None].astype(float)

        if it < cfg.burn_in:
            accepted_burn += acc
        else:
            accepted_kept += acc
            kept_iters += 1
        if it < adapt_until:
            batch_acc += acc_cols
            if (it + 1) % batch == 0:
                n_batches += 1
                gamma = min(0.5, 1.0 / np.sqrt(n_batches))
                scale = scale * np.exp(gamma * (batch_acc / batch - target_rate))
                batch_acc[:] = 0.0
        if it >= cfg.burn_in and (it - cfg.burn_in + 1) % cfg.thin == 0:
            out[:, k_out] = _to_natural(state, kinds) if adaptive else state
            k_out += 1

    return out, accepted_burn, accepted_kept, kept_iters


def _thread_count(cfg: MCMCConfig, chains: int) -> int:
    if cfg.threads is not None:
        n = int(cfg.threads)
    else:
        env = os.environ.get("CDFUSE_THREADS")
        n = int(env) if env else 1
    return max(1, min(n, chains))


def _entropy(rng, cfg: MCMCConfig) -> int:
    if rng is None:
        return int(cfg.seed)
    if isinstance(rng, (int, np.integer)):
        return int(rng)
    if isinstance(rng, np.random.SeedSequence):
        return int(rng.generate_state(1, dtype=np.uint64)[0])
    if isinstance(rng, np.random.Generator):
        return int(rng.integers(0, 2 ** 63 - 1))
    raise UsageError("rng must be an int seed, SeedSequence, Generator or None")


def mh_sample(prior, d: TrialData, cfg: Optional[MCMCConfig] = None, rng=None) -> PosteriorSamples:
    """Draw from pi(p0, p1 | data) proportional to pi(p0, p1) exp(loglik).

    With the default configuration 1000 chains each run 25 000 burn-in
    iterations and contribute their final state. Raises SamplerError if any
    chain accepted nothing during burn-in.
    """
    cfg = cfg or MCMCConfig()
    model = build_model(prior, d)
    entropy = _entropy(rng, cfg)
    n_threads = _thread_count(cfg, cfg.chains)
    bounds = np.linspace(0, cfg.chains, n_threads + 1).astype(int)
    groups = [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    if len(groups) == 1:
        results = [_run_group(model, cfg, entropy, *groups[0])]
    else:
        with ThreadPoolExecutor(max_workers=len(groups)) as pool:
            results = list(pool.map(lambda g: _run_group(model, cfg, entropy, *g), groups))
    states = np.concatenate([r[0] for r in results])
    acc_burn = np.concatenate([r[1] for r in results])
    acc_kept = np.concatenate([r[2] for r in results])
    kept_iters = results[0][3]
    if cfg.burn_in > 0 and np.any(acc_burn == 0):
        bad = int(np.sum(acc_burn == 0))
        raise SamplerError(
            f"{bad} of {cfg.chains} chains accepted no proposals during burn-in; "
            "rescale the proposal (proposal_scale / hyper_scale) or lengthen burn-in"
        )
    flat = states.reshape(-1, model.dim)
    iters = cfg.burn_in + kept_iters
    rate = float((acc_burn.sum() + acc_kept.sum()) / (cfg.chains * max(iters, 1)))
    meta = {
        "family": model.fam.kind,
        "mode": cfg.mode,
        "burn_in": cfg.burn_in,
        "chains": cfg.chains,
        "draws_per_chain": cfg.draws_per_chain,
        "thin": cfg.thin,
        "seed": entropy,
        "acceptance_rate": rate,
        "burn_in_acceptance_rate": float(acc_burn.sum() / (cfg.chains * max(cfg.burn_in, 1))),
        "state": list(model.names),
    }
    hyper = flat[:, 2:] if model.dim > 2 else None
    draws = np.clip(flat[:, :2], np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0))
    return PosteriorSamples(draws, meta, hyper)
