"""Calibration by prediction quantiles, lowest-quartile concordance,
time-rescaling KS checks and permutation variable importance."""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .core import Dataset, path_integral
from .models import FEATURES, ModelParams, build_cell_table
from .objectives import cell_terms

CSV_COLUMNS = ("group", "n", "pred_geomean", "pred_min", "pred_max", "empirical_rate", "events", "exposure")


@dataclass(frozen=True)
class CalibrationGroup:
    group: int
    n: int
    pred_geomean: float
    pred_min: float
    pred_max: float
    empirical_rate: float
    events: int
    exposure: float

    @property
    def log10_error(self) -> float:
        """|log10(predicted / empirical)|; infinite for a group with no events."""
        if self.empirical_rate <= 0:
            return math.inf
        return abs(math.log10(self.pred_geomean / self.empirical_rate))


@dataclass(frozen=True)
class CalibrationReport:
    groups: tuple

    def to_dict(self) -> dict:
        return {"groups": [asdict(g) for g in self.groups]}


@dataclass(frozen=True)
class ConcordanceResult:
    c: float
    ci_lo: float
    ci_hi: float
    n_pairs: int
    n: int


@dataclass(frozen=True)
class KSResult:
    D: float
    threshold_95: float
    passed: bool
    n: int


def mean_predicted_rates(model, data: Dataset) -> np.ndarray:
    """Time-averaged predicted rate of each sequence over [0, horizon]."""
    return np.array([path_integral(model.predict_path(s), 0.0, s.horizon) / s.horizon for s in data])


def calibration_report(preds, data: Dataset, Q: int = 10) -> CalibrationReport:
    preds = np.asarray(preds, dtype=float)
    if preds.shape != (len(data),):
        raise ValueError("need one prediction per sequence")
    if Q < 2:
        raise ValueError("need at least 2 groups")
    if Q > len(data):
        raise ValueError(f"{Q} groups requested for {len(data)} sequences")
    order = np.argsort(preds, kind="stable")
    events = np.array([s.T for s in data])
    exposure = np.array([s.horizon for s in data])
    groups = []
    for g, idx in enumerate(np.array_split(order, Q), start=1):
        p = preds[idx]
        ev, ex = int(events[idx].sum()), float(exposure[idx].sum())
        groups.append(CalibrationGroup(g, idx.size, float(np.exp(np.log(p).mean())), float(p.min()),
                                       float(p.max()), ev / ex, ev, ex))
    return CalibrationReport(tuple(groups))


def _pair_scores(p: np.ndarray, y: np.ndarray) -> np.ndarray:
    s = np.sign(p[:, None] - p[None, :]) * np.sign(y[:, None] - y[None, :])
    return np.where(s > 0, 1.0, np.where(s == 0, 0.5, 0.0))


def concordance(preds, outcomes, origin=None) -> tuple[float, int]:
    """Pairwise concordance with ties scored 1/2. Pairs drawn from the same
    ``origin`` (bootstrap duplicates) are skipped."""
    p, y = np.asarray(preds, float), np.asarray(outcomes, float)
    n = p.size
    iu = np.triu_indices(n, 1)
    mask = np.ones(iu[0].size, dtype=bool)
    if origin is not None:
        origin = np.asarray(origin)
        mask = origin[iu[0]] != origin[iu[1]]
    if not mask.any():
        return math.nan, 0
    scores = _pair_scores(p, y)[iu][mask]
    return float(scores.mean()), int(mask.sum())


def concordance_lowest_quartile(preds, data: Dataset, bootstrap_B: int = 1000, seed: int = 0,
                                by: str = "predicted", threads: int = 1) -> ConcordanceResult:
    """C statistic among the quarter of sequences with the lowest risk.

    The quartile is chosen by predicted rate, or by generating rate with
    ``by="true_rate"``. Outcomes are events per unit exposure. The 95%
    interval is a percentile bootstrap over sequences within the quartile.
    """
    preds = np.asarray(preds, dtype=float)
    if preds.shape != (len(data),):
        raise ValueError("need one prediction per sequence")
    if by == "predicted":
        key = preds
    elif by == "true_rate":
        key = np.array([s.true_rate for s in data])
    else:
        raise ValueError(f"unknown quartile ordering {by!r}")
    n_q = len(data) // 4
    if n_q < 2:
        raise ValueError(f"lowest quartile of {len(data)} sequences has fewer than 2 members")
    q = np.argsort(key, kind="stable")[:n_q]
    p = preds[q]
    y = np.array([data[i].T / data[i].horizon for i in q])
    c, n_pairs = concordance(p, y)

    seeds = np.random.SeedSequence(seed).spawn(bootstrap_B)

    def one(ss):
        idx = np.random.default_rng(ss).integers(0, n_q, n_q)
        return concordance(p[idx], y[idx], origin=idx)[0]

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            boot = np.array(list(pool.map(one, seeds)))
    else:
        boot = np.array([one(ss) for ss in seeds])
    boot = boot[np.isfinite(boot)]
    if boot.size:
        lo, hi = np.percentile(boot, [2.5, 97.5])
    else:
        lo = hi = c
    # percentile intervals can miss a skewed point estimate; widen to contain it
    return ConcordanceResult(c, float(min(lo, c)), float(max(hi, c)), n_pairs, n_q)


def rescale_intervals(model, data: Dataset, censored: str = "concatenate") -> np.ndarray:
    """Pooled rescaled inter-event gaps Lambda(u_i) - Lambda(u_{i-1}).

    With ``censored="concatenate"`` the rescaled axes of consecutive sequences
    are laid end to end, so the stretch after one sequence's last event is
    carried into the next sequence's first gap. The pooled process is then
    unit-rate Poisson and only the final stretch is lost. ``"drop"`` restarts
    each sequence at 0 and discards its censored tail, which shortens gaps
    from sequences whose total cumulative rate is small.
    """
    if censored not in ("concatenate", "drop"):
        raise ValueError(f"unknown censoring mode {censored!r}")
    gaps = []
    carry = 0.0
    for s in data:
        path = model.predict_path(s)
        total = float(path.cumulative(s.horizon))
        if not s.T:
            carry += total
            continue
        lam = path.cumulative(s.event_times)
        g = np.diff(np.concatenate([[0.0], lam]))
        if censored == "concatenate":
            g[0] += carry
            carry = total - float(lam[-1])
        gaps.append(g)
    return np.concatenate(gaps) if gaps else np.empty(0)


def ks_uniform_statistic(gaps) -> KSResult:
    """KS distance of z = 1 - exp(-gap) from Uniform(0, 1), 95% level."""
    g = np.asarray(gaps, dtype=float)
    n = g.size
    if n < 5:
        raise ValueError(f"need at least 5 gaps, got {n}")
    z = np.sort(-np.expm1(-g))
    i = np.arange(1, n + 1)
    D = float(max((i / n - z).max(), (z - (i - 1) / n).max()))
    thr = 1.36 / math.sqrt(n)
    return KSResult(D, thr, D < thr, n)


def permutation_importance(model: ModelParams, data: Dataset, feature_id: str, repeats: int = 20,
                           seed: int = 0) -> dict:
    """Mean drop in unweighted log-likelihood when one feature is shuffled
    across sequences."""
    if feature_id not in FEATURES:
        raise ValueError(f"unknown feature {feature_id!r}; expected one of {FEATURES}")
    f = FEATURES.index(feature_id)
    table = build_cell_table(data, model.feature_spec)
    base = float(cell_terms(model.rates(table.X), table.counts, table.dt).sum())
    sizes = np.diff(table.offsets)
    same_k = np.all(sizes == sizes[0])
    deltas = []
    for r in range(repeats):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(r,)))
        X = table.X.copy()
        if same_k:
            cube = X.reshape(table.n_seq, sizes[0], -1)
            cube[:, :, f] = cube[rng.permutation(table.n_seq), :, f]
        else:
            X[:, f] = X[rng.permutation(X.shape[0]), f]
        with np.errstate(over="ignore"):
            ll = float(cell_terms(model.rates(X), table.counts, table.dt).sum())
        deltas.append(base - ll)
    deltas = np.array(deltas)
    return {
        "feature": feature_id,
        "repeats": repeats,
        "mean": float(deltas.mean()),
        "sd": float(deltas.std(ddof=1)) if repeats > 1 else 0.0,
        "deltas": deltas.tolist(),
    }


def write_calibration_csv(report: CalibrationReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for g in report.groups:
            w.writerow([repr(v) if isinstance(v, float) else v for v in (getattr(g, c) for c in CSV_COLUMNS)])


def read_calibration_csv(path) -> CalibrationReport:
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    types = {"group": int, "n": int, "events": int}
    return CalibrationReport(tuple(
        CalibrationGroup(**{c: types.get(c, float)(row[c]) for c in CSV_COLUMNS}) for row in rows))


def calibration_svg(report: CalibrationReport, size: int = 360) -> str:
    """Log-log predicted vs empirical rate with an identity guide line."""
    xs = [math.log10(g.pred_geomean) for g in report.groups]
    ys = [math.log10(g.empirical_rate) if g.empirical_rate > 0 else None for g in report.groups]
    vals = xs + [y for y in ys if y is not None]
    lo, hi = math.floor(min(vals)), math.ceil(max(vals))
    if hi == lo:
        hi = lo + 1
    pad = 40

    def xy(x, y):
        sx = pad + (x - lo) / (hi - lo) * (size - 2 * pad)
        sy = size - pad - (y - lo) / (hi - lo) * (size - 2 * pad)
        return f"{sx:.3f}", f"{sy:.3f}"

    x0, y0 = xy(lo, lo)
    x1, y1 = xy(hi, hi)
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">',
        f'<line class="identity" x1="{x0}" y1="{y0}" x2="{x1}" y2="{y1}" stroke="#999" stroke-dasharray="4 3"/>',
        f'<text x="{size / 2}" y="{size - 8}" text-anchor="middle" font-size="11">log10 predicted rate</text>',
        f'<text x="12" y="{size / 2}" text-anchor="middle" font-size="11" '
        f'transform="rotate(-90 12 {size / 2})">log10 empirical rate</text>',
    ]
    # groups without events sit on the lower axis
    for g, x, y in zip(report.groups, xs, ys):
        cx, cy = xy(x, lo if y is None else y)
        lines.append(f'<circle class="group" data-group="{g.group}" cx="{cx}" cy="{cy}" r="4" fill="#1f77b4"/>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def emit_calibration_artifacts(report: CalibrationReport, path_prefix, svg: bool = True) -> list:
    prefix = str(path_prefix)
    Path(prefix + "x").parent.mkdir(parents=True, exist_ok=True)
    out = [prefix + "calibration.csv"]
    write_calibration_csv(report, out[0])
    if svg:
        out.append(prefix + "calibration.svg")
        with open(out[1], "w", encoding="utf-8") as f:
            f.write(calibration_svg(report))
    return out
