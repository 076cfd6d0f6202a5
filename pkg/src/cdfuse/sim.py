"""Synthetic expert surveys drawn from a bivariate-beta ground truth."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .elicit.survey import N_BINS, SurveyTable, survey_from_counts, validate_edges
from .errors import ValidationError
from .specfun import BibetaParams, bibeta_sample

log = logging.getLogger(__name__)

SIM_BIN_EDGES = tuple(round(-0.10 + 0.05 * k, 10) for k in range(N_BINS + 1))
SAMPLING_MODES = ("per-patient", "per-expert")


@dataclass(frozen=True)
class SimConfig:
    """Ground truth and survey layout.

    ``sampling='per-patient'`` (default) draws a fresh (p0, p1) for every
    virtual patient and tallies delta = p1 - p0. ``'per-expert'`` draws one
    (p0, p1) per expert, simulates Bernoulli outcomes for each patient in
    both arms and tallies the expert's estimate of delta (so each row puts
    all of its weight in one bin).
    """

    truth: BibetaParams = field(default_factory=lambda: BibetaParams(6.0, 20.0, 2.0))
    experts: int = 11
    patients_per_expert: int = 100
    bin_edges: tuple = SIM_BIN_EDGES
    seed: int = 0
    sampling: str = "per-patient"

    def __post_init__(self):
        if int(self.experts) != self.experts or self.experts < 1:
            raise ValidationError("experts must be a positive integer")
        if int(self.patients_per_expert) != self.patients_per_expert or self.patients_per_expert < 1:
            raise ValidationError("patients_per_expert must be a positive integer")
        if self.sampling not in SAMPLING_MODES:
            raise ValidationError(f"sampling must be one of {SAMPLING_MODES}, got {self.sampling!r}")
        object.__setattr__(self, "bin_edges", tuple(float(x) for x in validate_edges(self.bin_edges)))

    @classmethod
    def from_dict(cls, raw: dict) -> "SimConfig":
        raw = dict(raw)
        truth = raw.pop("truth", None)
        if truth is not None:
            if isinstance(truth, dict):
                truth = BibetaParams(float(truth["q0"]), float(truth["q1"]), float(truth["r"]))
            else:
                truth = BibetaParams(*(float(x) for x in truth))
            raw["truth"] = truth
        unknown = set(raw) - {"truth", "experts", "patients_per_expert", "bin_edges", "seed", "sampling"}
        if unknown:
            raise ValidationError(f"unknown simulation settings: {sorted(unknown)}")
        return cls(**raw)


def _tally(delta, edges):
    """Counts per bin over [L1, L13); values outside clamp into the end bins."""
    idx = np.searchsorted(edges, delta, side="right") - 1
    clamped = int(np.count_nonzero((idx < 0) | (idx >= N_BINS)))
    idx = np.clip(idx, 0, N_BINS - 1)
    return np.bincount(idx, minlength=N_BINS), clamped


def simulate_survey(cfg: SimConfig, rng: Optional[np.random.Generator] = None, return_clamped: bool = False):
    """Simulate one survey table; row e comes from its own derived seed.

    Without ``rng`` the expert streams derive from ``cfg.seed``; with one,
    a single draw from it seeds the streams. With ``return_clamped`` the
    number of out-of-range tallies is returned alongside the table.
    """
    entropy = cfg.seed if rng is None else int(rng.integers(0, 2 ** 63))
    edges = np.asarray(cfg.bin_edges)
    counts = np.zeros((cfg.experts, N_BINS), dtype=np.int64)
    clamped = 0
    n = cfg.patients_per_expert
    for e in range(cfg.experts):
        g = np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy, spawn_key=(e,))))
        if cfg.sampling == "per-patient":
            p0, p1 = bibeta_sample(cfg.truth, g, n)
            delta = p1 - p0
        else:
            p0, p1 = bibeta_sample(cfg.truth, g, None)
            x0 = g.binomial(n, p0)
            x1 = g.binomial(n, p1)
            delta = np.array([(x1 - x0) / n])
        c, k = _tally(np.atleast_1d(delta), edges)
        if cfg.sampling == "per-expert":
            c = c * n
        counts[e] = c
        clamped += k
    if clamped:
        log.info("%d simulated differences fell outside [%g, %g) and were clamped", clamped, edges[0], edges[-1])
    table = survey_from_counts(counts, edges, tuple(str(i + 1) for i in range(cfg.experts)))
    return (table, clamped) if return_clamped else table
