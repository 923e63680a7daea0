"""Standard and adjusted log-likelihoods on piecewise-constant paths.

The adjusted log-likelihood weights each grid cell's Poisson log-likelihood
contribution ``N_k log(rate_k) - rate_k * dt_k`` by a reciprocal-rate weight

    w = max(ref_rate, epsilon) ** (-log10(gamma))

so gamma=10 weights by 1/ref_rate and gamma=1 recovers the unweighted
likelihood exactly. Weights are constants: they never carry gradient.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import Dataset, PiecewiseConstantPath

ORACLES = ("true_rate", "plugin_detached", "constant_one")


@dataclass(frozen=True)
class WeightingConfig:
    gamma: float = 10.0
    epsilon: float = 0.0
    oracle: str = "plugin_detached"

    def __post_init__(self):
        if not self.gamma >= 1:
            raise ValueError(f"gamma must be >= 1, got {self.gamma}")
        if not self.epsilon >= 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.oracle not in ORACLES:
            raise ValueError(f"unknown oracle {self.oracle!r}")

    @property
    def exponent(self) -> float:
        return -np.log10(self.gamma)


@dataclass(frozen=True)
class IntervalWeights:
    values: tuple
    normalized: bool = False

    def __post_init__(self):
        vals = tuple(np.asarray(v, dtype=float) for v in self.values)
        for v in vals:
            if not (np.all(np.isfinite(v)) and np.all(v > 0)):
                raise ValueError("weights must be positive and finite")
        object.__setattr__(self, "values", vals)

    def flat(self) -> np.ndarray:
        return np.concatenate(self.values) if self.values else np.empty(0)

    @classmethod
    def ones_like(cls, paths: Sequence[PiecewiseConstantPath]) -> "IntervalWeights":
        return cls(tuple(np.ones(p.grid.K) for p in paths))


@dataclass(frozen=True)
class ObjectiveValue:
    total: float
    per_sequence: tuple
    per_cell_terms: tuple | None = field(default=None, repr=False)


def interval_weight(ref_rate, cfg: WeightingConfig):
    """Reciprocal-rate weight for a reference rate (scalar or array)."""
    r = np.asarray(ref_rate, dtype=float)
    if cfg.epsilon > 0:
        r = np.maximum(r, cfg.epsilon)
    elif np.any(r <= 0):
        raise ValueError("reference rate must be positive when epsilon = 0")
    w = r ** cfg.exponent
    return float(w) if w.ndim == 0 else w


def cell_terms(rates, counts, dt) -> np.ndarray:
    """Per-cell Poisson log-likelihood contributions."""
    rates = np.asarray(rates, dtype=float)
    if np.any(rates <= 0):
        raise ValueError("predicted rates must be positive")
    return counts * np.log(rates) - rates * dt


def cell_gradient(rates, counts, dt, weights) -> np.ndarray:
    """d/d rate of ``weights * cell_terms``; weights held fixed."""
    rates = np.asarray(rates, dtype=float)
    if np.any(rates <= 0):
        raise ValueError("predicted rates must be positive")
    return weights * (counts / rates - dt)


def _cells(paths, data: Dataset):
    if len(paths) != len(data):
        raise ValueError(f"{len(paths)} paths for {len(data)} sequences")
    out = []
    for p, s in zip(paths, data.sequences):
        if not np.isclose(p.grid.end, s.horizon, rtol=0, atol=1e-12):
            raise ValueError(f"{s.id}: path grid ends at {p.grid.end}, horizon is {s.horizon}")
        if s.T and s.event_times[-1] > p.grid.end:
            raise ValueError(f"{s.id}: event time outside the grid")
        out.append((p.values, s.cell_counts(p.grid), p.grid.widths))
    return out


def _check_weights(paths, w: IntervalWeights):
    if len(w.values) != len(paths):
        raise ValueError("weights and paths differ in number of sequences")
    for p, v in zip(paths, w.values):
        if v.shape != (p.grid.K,):
            raise ValueError(f"weight shape {v.shape} does not match grid of {p.grid.K} cells")


def adjusted_log_likelihood(paths, data: Dataset, w: IntervalWeights,
                            keep_cells: bool = False) -> ObjectiveValue:
    _check_weights(paths, w)
    per_seq, per_cell = [], []
    for (rates, counts, dt), wk in zip(_cells(paths, data), w.values):
        terms = wk * cell_terms(rates, counts, dt)
        per_seq.append(float(terms.sum()))
        per_cell.append(terms)
    return ObjectiveValue(float(sum(per_seq)), tuple(per_seq),
                          tuple(per_cell) if keep_cells else None)


def log_likelihood(paths, data: Dataset, keep_cells: bool = False) -> ObjectiveValue:
    return adjusted_log_likelihood(paths, data, IntervalWeights.ones_like(paths), keep_cells)


def objective_gradient(paths, data: Dataset, w: IntervalWeights) -> list:
    """Per-cell gradient of the adjusted log-likelihood w.r.t. each rate."""
    _check_weights(paths, w)
    return [cell_gradient(rates, counts, dt, wk)
            for (rates, counts, dt), wk in zip(_cells(paths, data), w.values)]


def oracle_paths(data: Dataset) -> list:
    """Ground-truth generating intensity of each sequence on its unit grid."""
    return [PiecewiseConstantPath.constant(s.true_rate, s.horizon) for s in data.sequences]


def compute_weights(reference, cfg: WeightingConfig, normalize: bool = False) -> IntervalWeights:
    """Cell weights from reference paths (oracle or detached predictions).

    With ``normalize`` the weights are divided by their global mean.
    """
    if cfg.oracle == "constant_one":
        vals = [np.ones(p.grid.K) for p in reference]
    else:
        vals = [np.atleast_1d(interval_weight(p.values, cfg)) for p in reference]
    if normalize and vals:
        mean = np.concatenate(vals).mean()
        vals = [v / mean for v in vals]
    return IntervalWeights(tuple(vals), normalized=normalize)


def effective_sample_size(w) -> dict:
    """Kish effective sample size ``(sum w)^2 / sum w^2`` and its per-weight ratio."""
    flat = w.flat() if isinstance(w, IntervalWeights) else np.asarray(w, dtype=float).ravel()
    if flat.size == 0:
        raise ValueError("need at least one weight")
    ess = flat.sum() ** 2 / np.dot(flat, flat)
    return {"ess": float(ess), "per_example": float(ess / flat.size)}


def weighted_constant_rate(counts, horizons, weights) -> float:
    """Maximizer of the adjusted log-likelihood over a single constant rate."""
    counts, horizons, weights = map(np.asarray, (counts, horizons, weights))
    return float(np.dot(weights, counts) / np.dot(weights, horizons))
