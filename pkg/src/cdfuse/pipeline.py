"""End-to-end analyses behind the command-line interface.

``run_analysis`` takes a RunConfig and returns labelled densities, summary
reports and a discrepancy verdict; ``reproduce_table`` recomputes the rows
of a reference table listed in ``data/reference_tables.json``.
"""
from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

from .bayes.likelihood import TrialData
from .bayes.mcmc import MCMCConfig, mh_sample
from .bayes.posterior import (
    exact_indep_beta_posterior,
    indep_beta_logjoint,
    kde_from_samples,
    marginalize_delta,
    posterior_logjoint,
)
from .cd import (
    CombinerSpec,
    ConfDist,
    combine_cds,
    prior_cd_from_histogram,
    prior_cd_normal,
    trial_cd_profile,
    trial_cd_wald,
)
from .diagnostics import SummaryReport, detect_discrepancy, summarize
from .elicit.fit import fit_prior
from .elicit.priors import FAMILIES, IndepBeta, MomentTargets, PriorSpec
from .elicit.survey import DEFAULT_BIN_EDGES, PooledHistogram, SurveyTable, load_table1, pool_survey
from .errors import ValidationError
from .grids import GridDensity
from .sim import SimConfig, simulate_survey
from .specfun import BibetaParams

log = logging.getLogger(__name__)

BAYES_FAMILIES = tuple(FAMILIES)
CD_FAMILIES = ("cd-hist", "cd-normal")
ALL_FAMILIES = BAYES_FAMILIES + CD_FAMILIES
POSTERIOR_METHODS = ("grid", "mcmc")
TRIAL_CDS = ("wald", "profile")
CASE_STUDY = TrialData(68, 31, 59, 33)
# the hierarchical bivariate beta density costs a 3-D quadrature per point
_COARSE_RESOLUTION = {"hier-bibeta": 801}


@dataclass(frozen=True)
class RunConfig:
    """Everything an analysis run needs; built from a JSON file and/or flags."""

    trial: TrialData
    prior: str
    survey_path: Optional[str] = None
    mu0: Optional[float] = None
    sigma0: Optional[float] = None
    bin_edges: tuple = DEFAULT_BIN_EDGES
    mcmc: MCMCConfig = field(default_factory=MCMCConfig)
    out_dir: str = "cdfuse-out"
    seed: int = 0
    posterior: str = "grid"
    trial_cd: Optional[str] = None
    resolution: Optional[int] = None

    def __post_init__(self):
        if self.prior not in ALL_FAMILIES:
            raise ValidationError(f"prior must be one of {ALL_FAMILIES}, got {self.prior!r}")
        if self.posterior not in POSTERIOR_METHODS:
            raise ValidationError(f"posterior must be one of {POSTERIOR_METHODS}, got {self.posterior!r}")
        if self.trial_cd is not None and self.trial_cd not in TRIAL_CDS:
            raise ValidationError(f"trial_cd must be one of {TRIAL_CDS}, got {self.trial_cd!r}")
        if self.survey_path is not None and not Path(self.survey_path).is_file():
            raise ValidationError(f"survey file not found: {self.survey_path}")
        if self.prior in BAYES_FAMILIES:
            if self.mu0 is None:
                raise ValidationError(f"missing required field 'mu0' for prior family {self.prior!r}")
            if self.prior in ("indep-beta", "hier-beta") and self.sigma0 is None:
                raise ValidationError(f"missing required field 'sigma0' for prior family {self.prior!r}")
        if self.resolution is not None and (int(self.resolution) != self.resolution or self.resolution < 101):
            raise ValidationError("resolution must be an integer >= 101")

    @property
    def grid_resolution(self) -> int:
        return self.resolution or _COARSE_RESOLUTION.get(self.prior, 2001)

    @property
    def trial_cd_kind(self) -> str:
        return self.trial_cd or ("wald" if self.prior == "cd-normal" else "profile")

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        raw = dict(raw)
        known = set(cls.__dataclass_fields__)
        unknown = set(raw) - known
        if unknown:
            raise ValidationError(f"unknown config fields: {sorted(unknown)}")
        if "trial" not in raw or raw["trial"] is None:
            raise ValidationError("missing required field 'trial' (n0,s0,n1,s1)")
        if "prior" not in raw or raw["prior"] is None:
            raise ValidationError("missing required field 'prior'")
        trial = raw["trial"]
        if isinstance(trial, str):
            raw["trial"] = TrialData.parse(trial)
        elif isinstance(trial, dict):
            raw["trial"] = TrialData(**trial)
        elif not isinstance(trial, TrialData):
            if len(trial) != 4:
                raise ValidationError("trial must hold four counts n0,s0,n1,s1")
            raw["trial"] = TrialData(*trial)
        if "bin_edges" in raw and raw["bin_edges"] is not None:
            raw["bin_edges"] = tuple(float(x) for x in raw["bin_edges"])
        else:
            raw.pop("bin_edges", None)
        mc = raw.get("mcmc")
        if isinstance(mc, dict):
            mc = dict(mc)
            mc.setdefault("seed", raw.get("seed", 0))
            raw["mcmc"] = MCMCConfig.from_dict(mc)
        elif mc is None:
            raw["mcmc"] = MCMCConfig(seed=raw.get("seed", 0))
        for k in ("mu0", "sigma0"):
            if raw.get(k) is not None:
                raw[k] = float(raw[k])
        return cls(**raw)

    def as_dict(self) -> dict:
        return {
            "trial": list(self.trial.as_tuple()), "prior": self.prior, "survey_path": self.survey_path,
            "mu0": self.mu0, "sigma0": self.sigma0, "bin_edges": list(self.bin_edges),
            "mcmc": self.mcmc.as_dict(), "out_dir": self.out_dir, "seed": self.seed,
            "posterior": self.posterior, "trial_cd": self.trial_cd_kind, "resolution": self.grid_resolution,
        }


@dataclass
class AnalysisResult:
    densities: dict
    reports: list
    verdict: object
    prior_spec: Optional[dict] = None
    extras: dict = field(default_factory=dict)


def load_survey(cfg: RunConfig) -> SurveyTable:
    if cfg.survey_path is None:
        return load_table1(cfg.bin_edges)
    return SurveyTable.from_csv(cfg.survey_path, cfg.bin_edges)


# ---------------------------------------------------------------------------
# building blocks
# ---------------------------------------------------------------------------


def prior_delta_density(prior: PriorSpec, resolution: int) -> GridDensity:
    """Prior density of delta; isolated infinite points are interpolated over and logged."""
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        g = marginalize_delta(prior.logpdf, resolution=resolution, on_divergence="interpolate")
    for w in caught:
        log.info("%s prior: %s", prior.kind, w.message)
    return g


def posterior_delta_density(prior: PriorSpec, d: TrialData, method: str, resolution: int,
                            mcmc: Optional[MCMCConfig] = None):
    """(density of delta, sampler metadata or None)."""
    if method == "mcmc":
        samples = mh_sample(prior, d, mcmc or MCMCConfig())
        return kde_from_samples(samples), dict(samples.meta)
    if isinstance(prior.family, IndepBeta):
        b0, b1 = exact_indep_beta_posterior(prior, d)
        return marginalize_delta(indep_beta_logjoint(b0, b1), resolution=resolution), None
    return marginalize_delta(posterior_logjoint(prior, d), resolution=resolution), None


def combined_cd(prior_cd: ConfDist, sigma_d: float, d: TrialData, trial_cd: str):
    tcd = trial_cd_wald(d) if trial_cd == "wald" else trial_cd_profile(d)
    return combine_cds(prior_cd, tcd, CombinerSpec.default(sigma_d, d))


def run_analysis(cfg: RunConfig) -> AnalysisResult:
    d = cfg.trial
    h = pool_survey(load_survey(cfg))
    lik_cd = trial_cd_profile(d)
    lik_rep = summarize(lik_cd, "likelihood")
    densities = {"likelihood": lik_cd.density}
    extras = {"pooled_mean": h.mean, "pooled_sd": h.sd}
    if cfg.prior in CD_FAMILIES:
        pcd = prior_cd_from_histogram(h) if cfg.prior == "cd-hist" else prior_cd_normal(h.mean, h.sd)
        comb = combined_cd(pcd, h.sd, d, cfg.trial_cd_kind)
        densities.update(prior=pcd.density, combined=comb.density)
        reports = [summarize(pcd, "prior"), lik_rep, summarize(comb, "combined")]
        prior_spec = None
    else:
        targets = MomentTargets(cfg.mu0, cfg.sigma0, h.mean, h.sd)
        prior = fit_prior(cfg.prior, targets)
        res = cfg.grid_resolution
        g_prior = prior_delta_density(prior, res)
        g_post, meta = posterior_delta_density(prior, d, cfg.posterior, res, cfg.mcmc)
        if meta:
            extras["mcmc"] = {k: meta[k] for k in sorted(meta) if isinstance(meta[k], (int, float, str))}
        densities.update(prior=g_prior, posterior=g_post)
        reports = [summarize(g_prior, "prior"), lik_rep, summarize(g_post, "posterior")]
        prior_spec = prior.to_dict()
    verdict = detect_discrepancy(reports[0], reports[1], reports[2], "mean")
    return AnalysisResult(densities, reports, verdict, prior_spec, extras)


# ---------------------------------------------------------------------------
# reference tables
# ---------------------------------------------------------------------------

STAT_COLUMNS = ("mode", "median", "mean", "I80_lo", "I80_hi", "I90_lo", "I90_hi", "I95_lo", "I95_hi")


def load_reference_tables() -> dict:
    return json.loads(resources.files("cdfuse.data").joinpath("reference_tables.json").read_text())


def report_values(r: SummaryReport):
    return [r.mode, r.median, r.mean, *r.I80, *r.I90, *r.I95]


@dataclass(frozen=True)
class ReproCell:
    row: str
    statistic: str
    computed: Optional[float]
    reference: float
    tol: float
    status: str

    @property
    def delta(self) -> Optional[float]:
        return None if self.computed is None else self.computed - self.reference


def _cells(row, report: Optional[SummaryReport], skipped: Optional[str] = None):
    vals = [None] * 9 if report is None else report_values(report)
    out = []
    for i, (name, ref, got) in enumerate(zip(STAT_COLUMNS, row["values"], vals)):
        tol = row["tol"]["point"] if i < 3 else row["tol"]["interval"]
        if got is None:
            status = skipped or "skipped: missing input"
        else:
            # compare at the table's three-decimal precision
            status = "pass" if abs(got - ref) <= tol + 1e-9 else "fail"
        out.append(ReproCell(row["id"], name, got, ref, tol, status))
    return out


class _Context:
    """Lazily computed shared pieces for one table."""

    def __init__(self, table: str, spec: dict, mu0, sigma0, posterior, mcmc):
        self.table, self.spec = table, spec
        self.d = TrialData(*spec["inputs"]["trial"])
        self.mu0, self.sigma0 = mu0, sigma0
        self.posterior, self.mcmc = posterior, mcmc
        self._cache = {}

    def get(self, key, fn):
        if key not in self._cache:
            self._cache[key] = fn()
        return self._cache[key]

    def histogram(self) -> PooledHistogram:
        def make():
            if self.table == "table2":
                return pool_survey(load_table1())
            sim = self.spec["inputs"]["simulation"]
            cfg = SimConfig(BibetaParams(*map(float, sim["truth"])), sim["experts"],
                            sim["patients_per_expert"], seed=sim["seed"])
            return pool_survey(simulate_survey(cfg))
        return self.get("hist", make)

    def prior(self, family) -> Optional[PriorSpec]:
        def make():
            if self.table == "table3":
                return PriorSpec.from_params(family, **self.spec["inputs"]["priors"][family])
            h = self.histogram()
            return fit_prior(family, MomentTargets(self.mu0, self.sigma0, h.mean, h.sd))
        return self.get(("prior", family), make)

    def bibeta_marginal(self) -> GridDensity:
        def make():
            p = PriorSpec.from_params("bibeta", **self.spec["inputs"]["priors"]["bibeta"])
            return marginalize_delta(p.logpdf)
        return self.get("bibeta-marginal", make)


def _row_report(ctx: _Context, row) -> Optional[SummaryReport]:
    kind = row["kind"]
    d = ctx.d
    if kind == "likelihood":
        return summarize(trial_cd_profile(d))
    if kind.startswith("cd-hist"):
        h = ctx.histogram()
        pcd = prior_cd_from_histogram(h)
        return summarize(pcd if kind.endswith("prior") else combined_cd(pcd, h.sd, d, row["trial_cd"]))
    if kind.startswith("cd-normal"):
        h = ctx.histogram()
        pcd = prior_cd_normal(h.mean, h.sd)
        return summarize(pcd if kind.endswith("prior") else combined_cd(pcd, h.sd, d, row["trial_cd"]))
    if kind.startswith("cd-bibeta"):
        g = ctx.bibeta_marginal()
        pcd = ConfDist.from_density(g.grid, g.values, label="prior (bivariate beta)")
        return summarize(pcd if kind.endswith("prior") else combined_cd(pcd, g.sd(), d, row["trial_cd"]))
    if kind.startswith("bayes"):
        missing = [k for k in row.get("needs", []) if getattr(ctx, k) is None]
        if missing:
            return None
        fam = row["family"]
        prior = ctx.prior(fam)
        res = _COARSE_RESOLUTION.get(fam, 2001)
        if kind == "bayes-prior":
            return summarize(prior_delta_density(prior, res))
        g, _ = posterior_delta_density(prior, d, ctx.posterior, res, ctx.mcmc)
        return summarize(g)
    raise ValidationError(f"unknown reference row kind {kind!r}")


def reproduce_table(table: str, mu0=None, sigma0=None, posterior="grid", mcmc: Optional[MCMCConfig] = None,
                    rows: Optional[list] = None):
    """Recompute a reference table; returns a list of ReproCell."""
    ref = load_reference_tables()
    if table not in ("table2", "table3"):
        raise ValidationError(f"table must be 'table2' or 'table3', got {table!r}")
    spec = ref[table]
    if rows is not None:
        unknown = sorted(set(rows) - {r["id"] for r in spec["rows"]})
        if unknown:
            raise ValidationError(f"unknown {table} row id(s): {unknown}")
    ctx = _Context(table, spec, mu0, sigma0, posterior, mcmc)
    cells = []
    for row in spec["rows"]:
        if rows is not None and row["id"] not in rows:
            continue
        cells.extend(_cells(row, _row_report(ctx, row)))
    return cells
