"""Singly- and doubly-stochastic homogeneous Poisson datasets.

Each sequence draws a base rate 10**V with V on [lo, hi]; in doubly mode the
generating rate is additionally scaled by an unobserved frailty 10**u. Every
sequence gets its own RNG stream keyed on (seed, index), so output does not
depend on generation order or thread count.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from .core import DEFAULT_HORIZON, RATE_LABEL, Dataset, EventSequence

NOISY_RATE_LABEL = "rate_noisy"


@dataclass(frozen=True)
class SimConfig:
    mode: str = "singly"
    samples: int = 2000
    horizon: float = DEFAULT_HORIZON
    base_rate_law: str = "log_uniform"
    log10_rate_range: tuple = (-2.0, 2.0)
    frailty_log10_range: tuple = (-2.0, 0.0)
    seed: int = 0
    # sd of Gaussian noise on log10 of the rate; > 0 adds a "rate_noisy" covariate
    covariate_noise: float = 0.0

    def __post_init__(self):
        if self.mode not in ("singly", "doubly"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.base_rate_law not in ("log_uniform", "log_truncated_exponential"):
            raise ValueError(f"unknown base rate law {self.base_rate_law!r}")
        if self.samples < 1:
            raise ValueError("samples must be >= 1")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if self.covariate_noise < 0:
            raise ValueError("covariate_noise must be >= 0")
        for name in ("log10_rate_range", "frailty_log10_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name}: lo must not exceed hi")
            object.__setattr__(self, name, (float(lo), float(hi)))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["log10_rate_range"] = list(self.log10_rate_range)
        d["frailty_log10_range"] = list(self.frailty_log10_range)
        return d


def sequence_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(index,)))


def sample_base_rate(rng: np.random.Generator, cfg: SimConfig) -> float:
    lo, hi = cfg.log10_rate_range
    u = rng.random()
    if lo == hi:
        return 10.0 ** lo
    if cfg.base_rate_law == "log_uniform":
        v = lo + (hi - lo) * u
    else:
        # inverse CDF of density proportional to 10**-v on [lo, hi]
        a, b = 10.0 ** -lo, 10.0 ** -hi
        v = -np.log10(a - u * (a - b))
    return float(10.0 ** min(max(v, lo), hi))


def sample_frailty(rng: np.random.Generator, cfg: SimConfig) -> float:
    if cfg.mode != "doubly":
        raise RuntimeError("frailty is only defined for doubly-stochastic simulation")
    lo, hi = cfg.frailty_log10_range
    return float(lo + (hi - lo) * rng.random())


def simulate_sequence(rng: np.random.Generator, rate: float, horizon: float) -> np.ndarray:
    """Event times of a homogeneous Poisson process on (0, horizon] from
    cumulated exponential gaps."""
    if rate < 0:
        raise ValueError(f"rate must be non-negative, got {rate}")
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    if rate == 0:
        return np.empty(0)
    mean = rate * horizon
    chunk = int(mean + 5.0 * np.sqrt(mean) + 10)
    times = np.cumsum(rng.exponential(1.0 / rate, size=chunk))
    while times[-1] <= horizon:
        more = times[-1] + np.cumsum(rng.exponential(1.0 / rate, size=chunk))
        times = np.concatenate([times, more])
    return times[: np.searchsorted(times, horizon, side="right")]


def _simulate_one(cfg: SimConfig, index: int) -> EventSequence:
    rng = sequence_rng(cfg.seed, index)
    base = sample_base_rate(rng, cfg)
    u = sample_frailty(rng, cfg) if cfg.mode == "doubly" else None
    rate = base * 10.0 ** u if u is not None else base
    times = simulate_sequence(rng, rate, cfg.horizon)
    covs = {RATE_LABEL: base}
    if cfg.covariate_noise > 0:
        covs[NOISY_RATE_LABEL] = float(base * 10.0 ** (cfg.covariate_noise * rng.standard_normal()))
    return EventSequence(f"s{index:06d}", cfg.horizon, times, covs, u)


def simulate_dataset(cfg: SimConfig, threads: int = 1) -> Dataset:
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            seqs = list(pool.map(lambda i: _simulate_one(cfg, i), range(cfg.samples)))
    else:
        seqs = [_simulate_one(cfg, i) for i in range(cfg.samples)]
    prov = {"seed": cfg.seed, "mode": cfg.mode, "horizon": cfg.horizon, "sim_config": cfg.to_dict()}
    return Dataset(tuple(seqs), prov)
