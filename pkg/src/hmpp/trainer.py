"""Mini-batch training of the standard (mlpp) and adjusted (hmpp) objectives.

HMPP weights are recomputed from the current predictions at every step and
used as constants in the gradient. Model selection always uses the
unweighted tune-set log-likelihood, because adjusted values computed under
different weightings are not comparable across steps.
"""
from __future__ import annotations

import itertools
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .core import Dataset
from .models import CellTable, FeatureSpec, ModelParams, build_cell_table, init_params, regularization_penalty
from .objectives import WeightingConfig, cell_gradient, cell_terms, effective_sample_size, interval_weight
from .optim import Adam

log = logging.getLogger(__name__)

MLPP_WEIGHTING = WeightingConfig(gamma=1.0, epsilon=0.0, oracle="constant_one")
DEFAULT_GRID = {
    "gamma": [10.0, 2.0],
    "epsilon": [0.0, 1e-2],
    "l1": [1e-2, 1e-3, 1e-4],
    "l2": [0.0, 1e-2],
}


class ConfigError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    def __init__(self, msg: str, state: dict):
        super().__init__(msg)
        self.state = state


@dataclass(frozen=True)
class TrainConfig:
    objective: str = "mlpp"
    weighting: WeightingConfig = field(default_factory=lambda: MLPP_WEIGHTING)
    epochs: int = 50
    learning_rate: float = 1e-3
    batch_size: int = 8
    betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    l1: float = 0.0
    l2: float = 0.0
    split: tuple = (0.70, 0.15, 0.15)
    seed: int = 0
    normalize_weights: bool = True
    # "step": weights from the current batch predictions; "epoch": from a
    # snapshot of predictions taken at the start of each epoch
    weight_refresh: str = "step"
    # "tune_ll": best epoch by tune log-likelihood; "last": final epoch
    selection: str = "tune_ll"
    hidden: int = 16
    covariate: str = "rate"

    def __post_init__(self):
        if self.objective not in ("mlpp", "hmpp"):
            raise ConfigError(f"unknown objective {self.objective!r}")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if len(self.split) != 3 or min(self.split) < 0 or not math.isclose(sum(self.split), 1.0, abs_tol=1e-9):
            raise ConfigError(f"split fractions must be three non-negative numbers summing to 1: {self.split}")
        if self.weight_refresh not in ("step", "epoch"):
            raise ConfigError(f"unknown weight_refresh {self.weight_refresh!r}")
        if self.selection not in ("tune_ll", "last"):
            raise ConfigError(f"unknown selection {self.selection!r}")
        if self.l1 < 0 or self.l2 < 0:
            raise ConfigError("regularization coefficients must be non-negative")

    def resolved(self) -> "TrainConfig":
        """Canonical form: hmpp with gamma=1 is exactly mlpp."""
        if self.objective == "mlpp" or self.weighting.gamma == 1.0 or self.weighting.oracle == "constant_one":
            return replace(self, objective="mlpp", weighting=MLPP_WEIGHTING)
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        d["split"] = list(self.split)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["weighting"] = WeightingConfig(**d.get("weighting", {}))
        for k in ("betas", "split"):
            if k in d:
                d[k] = tuple(d[k])
        d.pop("model_kind", None)
        return cls(**d)


@dataclass
class TrainReport:
    train_objective: list
    tune_ll: list
    selected_epoch: int
    ess: dict
    wall_clock: float = 0.0

    def to_dict(self, include_timing: bool = False) -> dict:
        d = {
            "epochs": [
                {"epoch": i + 1, "train_objective": a, "tune_ll": b}
                for i, (a, b) in enumerate(zip(self.train_objective, self.tune_ll))
            ],
            "selected_epoch": self.selected_epoch,
            "ess": self.ess,
        }
        if include_timing:
            d["wall_clock"] = self.wall_clock
        return d


def split_sizes(M: int, fractions) -> tuple[int, int, int]:
    n_train = int(math.floor(fractions[0] * M + 1e-9))
    n_tune = int(math.floor(fractions[1] * M + 1e-9))
    return n_train, n_tune, M - n_train - n_tune


def split_indices(M: int, fractions, seed: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Seeded shuffle, floor sizes for train and tune, remainder to test."""
    n_train, n_tune, n_test = split_sizes(M, fractions)
    if min(n_train, n_tune, n_test) < 1:
        raise ConfigError(f"split of {M} sequences by {tuple(fractions)} leaves an empty part")
    perm = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0,))).permutation(M)
    return perm[:n_train], perm[n_train:n_train + n_tune], perm[n_train + n_tune:]


def split_dataset(d: Dataset, cfg: TrainConfig) -> dict:
    tr, tu, te = split_indices(len(d), cfg.split, cfg.seed)
    return {"train": d.subset(tr), "tune": d.subset(tu), "test": d.subset(te)}


def table_log_likelihood(theta: ModelParams, table: CellTable) -> float:
    with np.errstate(over="ignore", invalid="ignore"):
        rates = theta.rates(table.X)
        if not np.all(np.isfinite(rates)) or np.any(rates <= 0):
            return -math.inf
        return float(cell_terms(rates, table.counts, table.dt).sum())


class _Weigher:
    """Raw and normalized cell weights for one training run."""

    def __init__(self, tc: TrainConfig, table: CellTable):
        self.cfg = tc.weighting
        self.active = tc.objective == "hmpp"
        self.normalize = tc.normalize_weights
        self.refresh = tc.weight_refresh
        self.oracle = self.cfg.oracle
        if self.active and self.oracle == "true_rate" and np.any(~np.isfinite(table.true_rate)):
            raise ConfigError("true_rate oracle needs a 'rate' covariate on every sequence")
        self.table = table
        self.scale = 1.0
        self.snapshot = None

    def start_epoch(self, theta: ModelParams):
        if not self.active or self.oracle == "constant_one":
            return
        if self.oracle == "true_rate":
            ref = self.table.true_rate
        else:
            ref = theta.rates(self.table.X)
            self.snapshot = ref
        if self.normalize:
            self.scale = float(np.mean(interval_weight(ref, self.cfg)))

    def batch(self, rows: np.ndarray, detached_rates: np.ndarray) -> np.ndarray:
        if not self.active or self.oracle == "constant_one":
            return np.ones(rows.size)
        if self.oracle == "true_rate":
            ref = self.table.true_rate[rows]
        elif self.refresh == "epoch":
            ref = self.snapshot[rows]
        else:
            ref = detached_rates.copy()
        return interval_weight(ref, self.cfg) / self.scale

    def raw(self, theta: ModelParams) -> np.ndarray:
        if not self.active or self.oracle == "constant_one":
            return np.ones(self.table.X.shape[0])
        ref = self.table.true_rate if self.oracle == "true_rate" else theta.rates(self.table.X)
        return interval_weight(ref, self.cfg)


def batch_gradient(theta: ModelParams, table: CellTable, rows: np.ndarray, weights: np.ndarray,
                   n_seq: int, l1: float = 0.0, l2: float = 0.0):
    """Loss (negated mean per-sequence objective plus elastic net) and its gradient."""
    X = table.X[rows]
    rates = theta.rates(X)
    counts, dt = table.counts[rows], table.dt[rows]
    objective = float(np.dot(weights, cell_terms(rates, counts, dt)))
    g_rate = cell_gradient(rates, counts, dt, weights)
    grad = -theta.score_vjp(X, rates * g_rate) / n_seq
    pen, pen_grad = regularization_penalty(theta, l1, l2)
    return -objective / n_seq + pen, grad + pen_grad, objective


def train(data: Dataset, tc: TrainConfig, model_kind: str = "constant",
          splits: dict | None = None) -> tuple[ModelParams, TrainReport]:
    tc = tc.resolved()
    started = time.perf_counter()
    splits = splits or split_dataset(data, tc)
    spec = FeatureSpec(tc.covariate)
    train_tab = build_cell_table(splits["train"], spec)
    tune_tab = build_cell_table(splits["tune"], spec)
    theta = init_params(model_kind, tc.seed, tc.hidden, spec)
    opt = Adam(theta.params.size, tc.learning_rate, tc.betas[0], tc.betas[1], tc.adam_eps)
    weigher = _Weigher(tc, train_tab)
    order_rng = np.random.default_rng(np.random.SeedSequence(tc.seed, spawn_key=(1,)))
    n = train_tab.n_seq

    train_obj, tune_ll = [], []
    best, best_ll, best_epoch = theta.copy(), -math.inf, 0
    step = 0
    for epoch in range(1, tc.epochs + 1):
        weigher.start_epoch(theta)
        perm = order_rng.permutation(n)
        epoch_obj = 0.0
        for b0 in range(0, n, tc.batch_size):
            batch = perm[b0:b0 + tc.batch_size]
            rows = train_tab.rows(batch)
            step += 1
            with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
                detached = theta.rates(train_tab.X[rows])
                ok = bool(np.all(np.isfinite(detached)) and np.all(detached > 0))
                if ok:
                    w = weigher.batch(rows, detached)
                    loss, grad, obj = batch_gradient(theta, train_tab, rows, w, batch.size, tc.l1, tc.l2)
                    new = opt.step(theta.params, grad)
            if not (ok and math.isfinite(loss) and np.all(np.isfinite(new))):
                raise TrainingDiverged(
                    f"non-finite objective at epoch {epoch}, step {step}",
                    {"epoch": epoch, "step": step, "loss": loss if ok else None, "params": theta.params.tolist(),
                     "config": tc.to_dict(), "model_kind": model_kind},
                )
            theta = theta.copy(new)
            epoch_obj += obj
        ll = table_log_likelihood(theta, tune_tab)
        train_obj.append(epoch_obj)
        tune_ll.append(ll)
        log.debug("epoch %d train objective %.6g tune ll %.6g", epoch, epoch_obj, ll)
        if tc.selection == "last" or ll > best_ll:
            best, best_ll, best_epoch = theta.copy(), ll, epoch
    if not math.isfinite(best_ll):
        raise TrainingDiverged("tune log-likelihood never finite",
                               {"params": theta.params.tolist(), "config": tc.to_dict()})
    with np.errstate(over="ignore"):
        ess = effective_sample_size(weigher.raw(best))
    report = TrainReport(train_obj, tune_ll, best_epoch, ess, time.perf_counter() - started)
    return best, report


def grid_configs(base: TrainConfig, grid: dict) -> list:
    names = list(grid)
    out = []
    for values in itertools.product(*(grid[k] for k in names)):
        kv = dict(zip(names, values))
        weighting = replace(base.weighting,
                            **{k: float(kv.pop(k)) for k in ("gamma", "epsilon") if k in kv})
        out.append(replace(base, weighting=weighting, **kv))
    return out


def hyperparameter_search(data: Dataset, grid: dict | None = None, base: TrainConfig | None = None,
                          model_kind: str = "loglinear") -> tuple[TrainConfig, list]:
    """Exhaustive grid search scored by tune-set log-likelihood; earlier grid
    entries win ties and diverged runs score -inf."""
    base = base or TrainConfig(objective="hmpp", weighting=WeightingConfig(10.0, 0.0, "plugin_detached"))
    configs = grid_configs(base, DEFAULT_GRID if grid is None else grid)
    if not configs:
        raise ConfigError("empty hyperparameter grid")
    splits = split_dataset(data, base)
    results = []
    best_i, best_ll = 0, -math.inf
    for i, cfg in enumerate(configs):
        try:
            _, rep = train(data, cfg, model_kind, splits)
            ll = rep.tune_ll[rep.selected_epoch - 1]
        except TrainingDiverged as e:
            log.warning("config %d diverged: %s", i, e)
            ll = -math.inf
        results.append({"config": cfg.to_dict(), "tune_ll": ll})
        if ll > best_ll:
            best_i, best_ll = i, ll
    return configs[best_i], results
