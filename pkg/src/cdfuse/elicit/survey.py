"""Expert survey tables and their arithmetic pooling into a histogram prior."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from ..errors import ValidationError

N_BINS = 12
ROW_SUM_TOL = 1e-9
DEFAULT_BIN_EDGES = tuple(round(-0.24 + 0.04 * k, 10) for k in range(N_BINS + 1))


def validate_edges(edges) -> np.ndarray:
    edges = np.array(edges, dtype=float)
    if edges.ndim != 1 or edges.size != N_BINS + 1:
        raise ValidationError(f"bin_edges must hold {N_BINS + 1} values, got {edges.size}")
    if not np.all(np.isfinite(edges)) or np.any(np.diff(edges) <= 0):
        raise ValidationError("bin_edges must be finite and strictly increasing")
    edges.setflags(write=False)
    return edges


@dataclass(frozen=True)
class SurveyTable:
    """Per-expert percent weights over twelve intervals of the treatment difference."""

    weights: np.ndarray
    bin_edges: np.ndarray = field(default_factory=lambda: np.array(DEFAULT_BIN_EDGES))
    expert_ids: tuple = ()

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        if w.ndim != 2 or w.shape[1] != N_BINS or w.shape[0] < 1:
            raise ValidationError(f"survey weights must be an (experts, {N_BINS}) array")
        ids = tuple(str(i) for i in self.expert_ids) or tuple(str(i + 1) for i in range(w.shape[0]))
        if len(ids) != w.shape[0]:
            raise ValidationError("expert_ids length does not match number of rows")
        for eid, row in zip(ids, w):
            if not np.all(np.isfinite(row)) or np.any(row < 0):
                raise ValidationError(f"expert {eid}: weights must be finite and non-negative")
            total = row.sum()
            if abs(total - 100.0) > ROW_SUM_TOL:
                raise ValidationError(f"expert {eid}: weights sum to {total:g}, expected 100")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bin_edges", validate_edges(self.bin_edges))
        object.__setattr__(self, "expert_ids", ids)

    @property
    def experts(self) -> list:
        return [row.tolist() for row in self.weights]

    @property
    def n_experts(self) -> int:
        return self.weights.shape[0]

    def to_csv(self, path=None) -> str:
        """Write the table (id column plus twelve weights); returns the text."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["expert"] + [f"bin{k + 1}" for k in range(N_BINS)])
        for eid, row in zip(self.expert_ids, self.weights):
            writer.writerow([eid] + [_fmt_weight(x) for x in row])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, path, bin_edges=None) -> "SurveyTable":
        return cls.from_text(Path(path).read_text(), bin_edges)

    @classmethod
    def from_text(cls, text: str, bin_edges=None) -> "SurveyTable":
        rows = [r for r in csv.reader(io.StringIO(text)) if any(c.strip() for c in r)]
        if len(rows) < 2:
            raise ValidationError("survey CSV needs a header row and at least one expert row")
        body = rows[1:]
        ids, weights = [], []
        for lineno, row in enumerate(body, start=2):
            if len(row) == N_BINS + 1:
                eid, cells = row[0].strip(), row[1:]
            elif len(row) == N_BINS:
                eid, cells = str(len(ids) + 1), row
            else:
                raise ValidationError(f"line {lineno}: expected {N_BINS} weights, found {len(row)} columns")
            try:
                weights.append([float(c) if c.strip() else 0.0 for c in cells])
            except ValueError as exc:
                raise ValidationError(f"line {lineno}: non-numeric weight ({exc})") from None
            ids.append(eid)
        edges = DEFAULT_BIN_EDGES if bin_edges is None else bin_edges
        return cls(np.array(weights), np.array(edges, dtype=float), tuple(ids))


def _fmt_weight(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def load_table1(bin_edges=None) -> SurveyTable:
    """The bundled eleven-expert migraine survey."""
    text = resources.files("cdfuse.data").joinpath("table1_survey.csv").read_text()
    return SurveyTable.from_text(text, bin_edges)


@dataclass(frozen=True)
class PooledHistogram:
    """Group-mean bin probabilities with their summary moments."""

    weights: np.ndarray
    bin_edges: np.ndarray
    mean: float
    sd: float
    within_bin_spread: bool = True

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        edges = validate_edges(self.bin_edges)
        if w.shape != (N_BINS,) or np.any(w < 0):
            raise ValidationError("histogram weights must be 12 non-negative values")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValidationError(f"histogram weights sum to {w.sum()!r}, expected 1")
        if not self.sd > 0:
            raise ValidationError("histogram sd must be positive")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bin_edges", edges)

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[:-1] + self.bin_edges[1:])

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.bin_edges)

    def density(self, delta):
        return histogram_density(self, delta)

    def cdf(self, delta):
        """Integral of the piecewise-constant density: linear within each bin."""
        x = np.asarray(delta, dtype=float)
        cum = np.concatenate([[0.0], np.cumsum(self.weights)])
        cum[-1] = 1.0
        out = np.interp(x, self.bin_edges, cum, left=0.0, right=1.0)
        return out if out.ndim else float(out)

    @classmethod
    def from_weights(cls, weights, bin_edges=DEFAULT_BIN_EDGES, within_bin_spread=True):
        w = np.asarray(weights, dtype=float)
        w = w / w.sum()
        mean, sd = histogram_moments(w, bin_edges, within_bin_spread)
        return cls(w, np.asarray(bin_edges, dtype=float), mean, sd, within_bin_spread)


def histogram_moments(weights, bin_edges, within_bin_spread: bool = True):
    """Mean and sd of a binned distribution placed at the bin midpoints.

    With ``within_bin_spread`` each bin is treated as uniform, which adds
    sum_k w_k width_k^2 / 12 to the variance.
    """
    w = np.asarray(weights, dtype=float)
    edges = np.asarray(bin_edges, dtype=float)
    mid = 0.5 * (edges[:-1] + edges[1:])
    width = np.diff(edges)
    mean = float(np.dot(w, mid))
    var = float(np.dot(w, (mid - mean) ** 2))
    if within_bin_spread:
        var += float(np.dot(w, width ** 2) / 12.0)
    return mean, float(np.sqrt(var))


def pool_survey(table: SurveyTable, within_bin_spread: bool = True) -> PooledHistogram:
    """Arithmetic pooling: the column means of the survey, as probabilities."""
    if not isinstance(table, SurveyTable):
        raise ValidationError("pool_survey expects a SurveyTable")
    # summing in sorted order keeps the result independent of row order
    w = np.sort(table.weights, axis=0).sum(axis=0) / (100.0 * table.n_experts)
    w = w / w.sum()
    return PooledHistogram.from_weights(w, table.bin_edges, within_bin_spread)


def histogram_density(h: PooledHistogram, delta):
    """sum_k g_k / (L_{k+1} - L_k) * 1(L_k <= delta < L_{k+1}); zero outside."""
    x = np.asarray(delta, dtype=float)
    edges = h.bin_edges
    heights = h.weights / np.diff(edges)
    idx = np.searchsorted(edges, x, side="right") - 1
    inside = (idx >= 0) & (idx < N_BINS)
    out = np.where(inside, heights[np.clip(idx, 0, N_BINS - 1)], 0.0)
    return out if out.ndim else float(out)


def survey_from_counts(counts: Sequence[Sequence[int]], bin_edges=DEFAULT_BIN_EDGES, ids=()) -> SurveyTable:
    """Build a table from integer tallies; each row is rescaled to percent."""
    c = np.asarray(counts, dtype=float)
    pct = 100.0 * c / c.sum(axis=1, keepdims=True)
    return SurveyTable(pct, np.asarray(bin_edges, dtype=float), tuple(ids))
