"""Domain types, JSONL event-stream I/O and piecewise-constant path arithmetic."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

SCHEMA_VERSION = 1
DEFAULT_HORIZON = 10.0
EVENT_LABEL = "y"
RATE_LABEL = "rate"
FRAILTY_LABEL = "frailty_log10"


class ValidationError(ValueError):
    """Input data violates a domain invariant."""


class ParseError(ValueError):
    """A line of an event stream could not be decoded."""

    def __init__(self, lineno: int, msg: str):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


@dataclass(frozen=True)
class EventRecord:
    id: str
    time: float
    event: str
    value: float | None = None


@dataclass(frozen=True)
class TimeGrid:
    boundaries: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.boundaries, dtype=float)
        if b.ndim != 1 or b.size < 2:
            raise ValueError("a grid needs at least one cell")
        if b[0] != 0.0:
            raise ValueError("grid must start at 0")
        if not np.all(np.diff(b) > 0):
            raise ValueError("grid boundaries must be strictly increasing")
        b.setflags(write=False)
        object.__setattr__(self, "boundaries", b)

    @classmethod
    def unit(cls, horizon: float) -> "TimeGrid":
        """Unit-length cells on [0, horizon]; the last cell is shorter when
        the horizon is not an integer."""
        if horizon <= 0:
            raise ValueError("horizon must be positive")
        inner = np.arange(1.0, math.ceil(horizon))
        return cls(np.concatenate([[0.0], inner[inner < horizon], [horizon]]))

    @property
    def K(self) -> int:
        return self.boundaries.size - 1

    @property
    def end(self) -> float:
        return float(self.boundaries[-1])

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.boundaries)

    def __eq__(self, other):
        return isinstance(other, TimeGrid) and np.array_equal(self.boundaries, other.boundaries)

    def __hash__(self):
        return hash(self.boundaries.tobytes())


@dataclass(frozen=True)
class PiecewiseConstantPath:
    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.grid.K,):
            raise ValueError(f"expected {self.grid.K} values, got shape {v.shape}")
        if not np.all(np.isfinite(v)) or not np.all(v > 0):
            raise ValueError("path values must be positive and finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def constant(cls, value: float, horizon: float) -> "PiecewiseConstantPath":
        grid = TimeGrid.unit(horizon)
        return cls(grid, np.full(grid.K, float(value)))

    def cumulative(self, t) -> np.ndarray:
        """Cumulative intensity Lambda(t) for scalar or array t in [0, end]."""
        t = np.asarray(t, dtype=float)
        b = self.grid.boundaries
        left = np.concatenate([[0.0], np.cumsum(self.values * self.grid.widths)])
        k = np.clip(np.searchsorted(b, t, side="right") - 1, 0, self.grid.K - 1)
        return left[k] + self.values[k] * (t - b[k])


@dataclass(frozen=True)
class EventSequence:
    id: str
    horizon: float
    event_times: np.ndarray
    covariates: dict = field(default_factory=dict)
    frailty_log10: float | None = None

    def __post_init__(self):
        t = np.asarray(self.event_times, dtype=float).reshape(-1)
        if not self.horizon > 0:
            raise ValidationError(f"{self.id}: horizon must be positive")
        if t.size:
            if t[0] <= 0 or t[-1] > self.horizon:
                raise ValidationError(f"{self.id}: event times must lie in (0, {self.horizon}]")
            if np.any(np.diff(t) <= 0):
                raise ValidationError(f"{self.id}: event times must be strictly increasing")
        t.setflags(write=False)
        object.__setattr__(self, "event_times", t)
        object.__setattr__(self, "covariates", dict(self.covariates))

    @property
    def T(self) -> int:
        return int(self.event_times.size)

    @property
    def true_rate(self) -> float:
        """Generating rate: the rate covariate times the frailty multiplier."""
        if RATE_LABEL not in self.covariates:
            raise ValidationError(f"{self.id}: no '{RATE_LABEL}' covariate")
        r = float(self.covariates[RATE_LABEL])
        if self.frailty_log10 is not None:
            r *= 10.0 ** self.frailty_log10
        return r

    def unit_grid(self) -> TimeGrid:
        return TimeGrid.unit(self.horizon)

    def cell_counts(self, grid: TimeGrid) -> np.ndarray:
        """Events per cell under the (left, right] convention."""
        if grid.end < self.horizon:
            raise ValueError(f"{self.id}: grid ends before the horizon")
        idx = np.searchsorted(self.event_times, grid.boundaries, side="right")
        return np.diff(idx)

    def __eq__(self, other):
        return (
            isinstance(other, EventSequence)
            and self.id == other.id
            and self.horizon == other.horizon
            and np.array_equal(self.event_times, other.event_times)
            and self.covariates == other.covariates
            and self.frailty_log10 == other.frailty_log10
        )


@dataclass(frozen=True)
class Dataset:
    sequences: tuple
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        seqs = tuple(self.sequences)
        if not seqs:
            raise ValidationError("no sequences")
        ids = [s.id for s in seqs]
        if len(set(ids)) != len(ids):
            raise ValidationError("sequence ids must be unique")
        object.__setattr__(self, "sequences", seqs)
        object.__setattr__(self, "provenance", dict(self.provenance))

    def __len__(self):
        return len(self.sequences)

    def __iter__(self):
        return iter(self.sequences)

    def __getitem__(self, i):
        return self.sequences[i]

    def subset(self, indices: Iterable[int]) -> "Dataset":
        return Dataset(tuple(self.sequences[i] for i in indices), self.provenance)

    @property
    def total_events(self) -> int:
        return sum(s.T for s in self.sequences)

    @property
    def total_exposure(self) -> float:
        return float(sum(s.horizon for s in self.sequences))


def parse_event_stream(lines: str | Iterable[str], horizon: float = DEFAULT_HORIZON,
                       provenance: dict | None = None) -> Dataset:
    """Parse JSONL tuples ``{"id", "time", "event", "value"}`` into a Dataset.

    ``y`` records become event times; any other label is a covariate, except
    ``frailty_log10`` which populates the sequence's frailty field. Sequences
    keep the order in which their ids first appear.
    """
    if isinstance(lines, str):
        lines = lines.splitlines()
    events: dict[str, list[float]] = {}
    covs: dict[str, dict] = {}
    frailty: dict[str, float] = {}
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            sid, t, label, value = rec["id"], rec["time"], rec["event"], rec.get("value")
        except (json.JSONDecodeError, KeyError, TypeError) as e:
            raise ParseError(lineno, f"malformed record ({e})") from None
        if not isinstance(sid, str) or not isinstance(label, str):
            raise ParseError(lineno, "id and event must be strings")
        try:
            t = float(t)
        except (TypeError, ValueError):
            raise ParseError(lineno, f"time is not a number: {t!r}") from None
        if not math.isfinite(t) or t < 0:
            raise ValidationError(f"line {lineno}: id {sid!r} has invalid time {t}")
        if t > horizon:
            raise ValidationError(f"line {lineno}: id {sid!r} has time {t} beyond horizon {horizon}")
        seq_events = events.setdefault(sid, [])
        seq_covs = covs.setdefault(sid, {})
        if label == EVENT_LABEL:
            seq_events.append(t)
            continue
        if value is None:
            raise ValidationError(f"line {lineno}: id {sid!r} covariate {label!r} has no value")
        if label == FRAILTY_LABEL:
            if sid in frailty:
                raise ValidationError(f"line {lineno}: duplicate {label!r} record for id {sid!r}")
            frailty[sid] = float(value)
            continue
        if label in seq_covs:
            raise ValidationError(f"line {lineno}: duplicate {label!r} record for id {sid!r}")
        if label == RATE_LABEL and (t != 0 or not float(value) > 0):
            raise ValidationError(f"line {lineno}: id {sid!r} rate record must be at time 0 with value > 0")
        seq_covs[label] = float(value)
    if not events:
        raise ValidationError("no sequences")
    seqs = []
    for sid, times in events.items():
        try:
            seq = EventSequence(sid, horizon, np.sort(np.array(times, dtype=float)),
                                covs[sid], frailty.get(sid))
        except ValidationError as e:
            raise ValidationError(f"id {sid!r}: {e}") from None
        seqs.append(seq)
    return Dataset(tuple(seqs), provenance or {})


def serialize_event_stream(d: Dataset) -> str:
    """Inverse of :func:`parse_event_stream`; covariates are emitted at time 0."""
    out = []
    for s in d.sequences:
        covs = dict(s.covariates)
        if RATE_LABEL in covs:
            out.append(_record(s.id, 0.0, RATE_LABEL, covs.pop(RATE_LABEL)))
        for label in sorted(covs):
            out.append(_record(s.id, 0.0, label, covs[label]))
        if s.frailty_log10 is not None:
            out.append(_record(s.id, 0.0, FRAILTY_LABEL, s.frailty_log10))
        for t in s.event_times:
            out.append(_record(s.id, float(t), EVENT_LABEL, None))
    return "".join(line + "\n" for line in out)


def _record(sid, t, label, value):
    return json.dumps({"id": sid, "time": t, "event": label, "value": value})


def metadata_sidecar(d: Dataset) -> dict:
    p = d.provenance
    horizons = {s.horizon for s in d.sequences}
    if len(horizons) != 1:
        raise ValidationError("the JSONL format stores a single horizon per dataset")
    return {
        "schema": SCHEMA_VERSION,
        "seed": p.get("seed"),
        "mode": p.get("mode", "external"),
        "horizon": horizons.pop(),
        **{k: v for k, v in p.items() if k not in ("seed", "mode", "horizon", "schema")},
    }


def sidecar_path(path) -> str:
    path = str(path)
    stem = path[:-len(".jsonl")] if path.endswith(".jsonl") else path
    return stem + ".meta.json"


def write_dataset(d: Dataset, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write(serialize_event_stream(d))
    with open(sidecar_path(path), "w", encoding="utf-8") as f:
        json.dump(metadata_sidecar(d), f, indent=2, sort_keys=True)
        f.write("\n")


def read_dataset(path, horizon: float | None = None) -> Dataset:
    """Read a JSONL dataset; the horizon comes from the sidecar when present."""
    meta = {}
    try:
        with open(sidecar_path(path), encoding="utf-8") as f:
            meta = json.load(f)
    except FileNotFoundError:
        pass
    if horizon is None:
        horizon = float(meta.get("horizon", DEFAULT_HORIZON))
    with open(path, encoding="utf-8") as f:
        return parse_event_stream(f, horizon=horizon, provenance=meta)


def path_integral(p: PiecewiseConstantPath, a: float, b: float) -> float:
    """Integral of the path over [a, b]."""
    if a > b:
        raise ValueError(f"lower limit {a} exceeds upper limit {b}")
    if a < 0 or b > p.grid.end:
        raise ValueError(f"[{a}, {b}] is outside [0, {p.grid.end}]")
    lo, hi = p.grid.boundaries[:-1], p.grid.boundaries[1:]
    overlap = np.clip(np.minimum(hi, b) - np.maximum(lo, a), 0.0, None)
    return float(np.dot(p.values, overlap))


def count_events_in(s: EventSequence, a: float, b: float) -> int:
    """Number of events in the half-open interval (a, b]."""
    if a > b:
        raise ValueError(f"lower limit {a} exceeds upper limit {b}")
    t = s.event_times
    return int(np.searchsorted(t, b, side="right") - np.searchsorted(t, a, side="right"))
