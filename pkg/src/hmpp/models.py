"""Positive-rate predictors on a per-cell feature table.

All models share an exponential link, ``rate = exp(score(features))``, so
predictions are positive for any finite parameters. Gradients are analytic:
``backprop`` chains an upstream d/d(rate) through the link and the score.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import RATE_LABEL, SCHEMA_VERSION, Dataset, EventSequence, PiecewiseConstantPath, TimeGrid

KINDS = ("constant", "loglinear", "mlp")
FEATURES = ("log10_rate", "cell_position", "history_count")
DEFAULT_HIDDEN = 16


@dataclass(frozen=True)
class FeatureSpec:
    covariate: str = RATE_LABEL

    def to_dict(self) -> dict:
        return {"covariate": self.covariate, "features": list(FEATURES)}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSpec":
        return cls(covariate=d.get("covariate", RATE_LABEL))


def sequence_features(s: EventSequence, grid: TimeGrid, spec: FeatureSpec = FeatureSpec()) -> np.ndarray:
    """(K, 3) feature matrix: log10 covariate, k/K, and the count of events
    before each cell scaled by 1/(covariate * cell_start + 1)."""
    if spec.covariate not in s.covariates:
        raise ValueError(f"{s.id}: missing covariate {spec.covariate!r}")
    cov = float(s.covariates[spec.covariate])
    start = grid.boundaries[:-1]
    history = np.searchsorted(s.event_times, start, side="right")
    with np.errstate(divide="ignore", invalid="ignore"):
        X = np.column_stack([
            np.full(grid.K, np.log10(cov)),
            np.arange(grid.K) / grid.K,
            history / (cov * start + 1.0),
        ])
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{s.id}: non-finite feature values")
    return X


@dataclass
class CellTable:
    """Flattened per-cell view of a dataset used by training and evaluation."""

    X: np.ndarray
    counts: np.ndarray
    dt: np.ndarray
    seq_index: np.ndarray
    offsets: np.ndarray
    true_rate: np.ndarray

    @property
    def n_seq(self) -> int:
        return self.offsets.size - 1

    def rows(self, seqs) -> np.ndarray:
        return np.concatenate([np.arange(self.offsets[i], self.offsets[i + 1]) for i in seqs])


def build_cell_table(data: Dataset, spec: FeatureSpec = FeatureSpec()) -> CellTable:
    Xs, counts, dts, idx, truth = [], [], [], [], []
    for i, s in enumerate(data.sequences):
        grid = s.unit_grid()
        Xs.append(sequence_features(s, grid, spec))
        counts.append(s.cell_counts(grid))
        dts.append(grid.widths)
        idx.append(np.full(grid.K, i))
        try:
            r = s.true_rate
        except ValueError:
            r = np.nan
        truth.append(np.full(grid.K, r))
    sizes = [len(c) for c in counts]
    return CellTable(
        X=np.concatenate(Xs),
        counts=np.concatenate(counts).astype(float),
        dt=np.concatenate(dts),
        seq_index=np.concatenate(idx),
        offsets=np.concatenate([[0], np.cumsum(sizes)]),
        true_rate=np.concatenate(truth),
    )


def n_params(kind: str, hidden: int = DEFAULT_HIDDEN) -> int:
    F = len(FEATURES)
    return {"constant": 1, "loglinear": 2, "mlp": F * hidden + 2 * hidden + 1}[kind]


@dataclass
class ModelParams:
    kind: str
    params: np.ndarray
    hidden: int = DEFAULT_HIDDEN
    feature_spec: FeatureSpec = field(default_factory=FeatureSpec)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        self.params = np.asarray(self.params, dtype=float).copy()
        if self.params.shape != (n_params(self.kind, self.hidden),):
            raise ValueError(f"{self.kind} expects {n_params(self.kind, self.hidden)} parameters")
        if not np.all(np.isfinite(self.params)):
            raise ValueError("parameters must be finite")

    def copy(self, params=None) -> "ModelParams":
        return ModelParams(self.kind, self.params if params is None else params,
                           self.hidden, self.feature_spec)

    def _unpack(self, p=None):
        p = self.params if p is None else p
        F, H = len(FEATURES), self.hidden
        W1 = p[: F * H].reshape(F, H)
        b1 = p[F * H: F * H + H]
        w2 = p[F * H + H: F * H + 2 * H]
        return W1, b1, w2, p[-1]

    def score(self, X: np.ndarray) -> np.ndarray:
        p = self.params
        if self.kind == "constant":
            return np.full(X.shape[0], p[0])
        if self.kind == "loglinear":
            return p[0] + p[1] * X[:, 0]
        W1, b1, w2, b2 = self._unpack()
        return np.tanh(X @ W1 + b1) @ w2 + b2

    def rates(self, X: np.ndarray) -> np.ndarray:
        return np.exp(self.score(X))

    def score_vjp(self, X: np.ndarray, g_score: np.ndarray) -> np.ndarray:
        """Gradient over parameters of ``sum(g_score * score(X))``."""
        if self.kind == "constant":
            return np.array([g_score.sum()])
        if self.kind == "loglinear":
            return np.array([g_score.sum(), g_score @ X[:, 0]])
        W1, b1, w2, _ = self._unpack()
        h = np.tanh(X @ W1 + b1)
        g_pre = np.outer(g_score, w2) * (1.0 - h * h)
        return np.concatenate([(X.T @ g_pre).ravel(), g_pre.sum(0), h.T @ g_score, [g_score.sum()]])

    def penalty_mask(self) -> np.ndarray:
        """True for weights subject to elastic-net shrinkage; intercepts and
        biases are exempt."""
        mask = np.zeros(self.params.size, dtype=bool)
        if self.kind == "loglinear":
            mask[1] = True
        elif self.kind == "mlp":
            F, H = len(FEATURES), self.hidden
            mask[: F * H] = True
            mask[F * H + H: F * H + 2 * H] = True
        return mask

    def predict_path(self, s: EventSequence, grid: TimeGrid | None = None) -> PiecewiseConstantPath:
        return predict_rate_path(self, s, grid)

    def to_dict(self, train_config: dict | None = None) -> dict:
        return {
            "schema": SCHEMA_VERSION,
            "kind": self.kind,
            "hidden": self.hidden,
            "params": [float(x) for x in self.params],
            "feature_spec": self.feature_spec.to_dict(),
            "train_config": train_config or {},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelParams":
        return cls(d["kind"], np.array(d["params"], dtype=float), int(d.get("hidden", DEFAULT_HIDDEN)),
                   FeatureSpec.from_dict(d.get("feature_spec", {})))


@dataclass(frozen=True)
class OracleModel:
    """The generating intensity of each simulated sequence, optionally mis-scaled."""

    scale: float = 1.0

    def predict_path(self, s: EventSequence, grid: TimeGrid | None = None) -> PiecewiseConstantPath:
        grid = grid or s.unit_grid()
        return PiecewiseConstantPath(grid, np.full(grid.K, self.scale * s.true_rate))


def init_params(kind: str, seed: int = 0, hidden: int = DEFAULT_HIDDEN,
                feature_spec: FeatureSpec | None = None) -> ModelParams:
    """Zero init for constant/loglinear; Glorot-uniform weights for the MLP."""
    spec = feature_spec or FeatureSpec()
    if kind not in KINDS:
        raise ValueError(f"unknown model kind {kind!r}")
    params = np.zeros(n_params(kind, hidden))
    if kind == "mlp":
        rng = np.random.default_rng(seed)
        F, H = len(FEATURES), hidden
        s1 = np.sqrt(6.0 / (F + H))
        s2 = np.sqrt(6.0 / (H + 1))
        params[: F * H] = rng.uniform(-s1, s1, F * H)
        params[F * H + H: F * H + 2 * H] = rng.uniform(-s2, s2, H)
    return ModelParams(kind, params, hidden, spec)


def predict_rate_path(theta: ModelParams, s: EventSequence, grid: TimeGrid | None = None) -> PiecewiseConstantPath:
    grid = grid or s.unit_grid()
    if grid.end < s.horizon:
        raise ValueError(f"{s.id}: grid does not span [0, {s.horizon}]")
    return PiecewiseConstantPath(grid, theta.rates(sequence_features(s, grid, theta.feature_spec)))


def backprop(theta: ModelParams, s: EventSequence, grid: TimeGrid | None, upstream) -> np.ndarray:
    """Chain a per-cell d/d(rate) through the exponential link to the parameters."""
    grid = grid or s.unit_grid()
    upstream = np.asarray(upstream, dtype=float)
    if upstream.shape != (grid.K,):
        raise ValueError(f"upstream has shape {upstream.shape}, grid has {grid.K} cells")
    X = sequence_features(s, grid, theta.feature_spec)
    return theta.score_vjp(X, theta.rates(X) * upstream)


def regularization_penalty(theta: ModelParams, l1: float, l2: float) -> tuple[float, np.ndarray]:
    """Elastic-net value and subgradient (0 at 0 for the L1 term)."""
    if l1 < 0 or l2 < 0:
        raise ValueError("regularization coefficients must be non-negative")
    mask = theta.penalty_mask()
    w = np.where(mask, theta.params, 0.0)
    value = l1 * np.abs(w).sum() + l2 * np.dot(w, w)
    grad = l1 * np.sign(w) + 2.0 * l2 * w
    return float(value), grad


def save_model(theta: ModelParams, path, train_config: dict | None = None) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(theta.to_dict(train_config), f, indent=2, sort_keys=True)
        f.write("\n")


def load_model(path) -> tuple[ModelParams, dict]:
    with open(path, encoding="utf-8") as f:
        d = json.load(f)
    return ModelParams.from_dict(d), d.get("train_config", {})
