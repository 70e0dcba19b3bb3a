"""Condition series storage, sample windowing, and chronological splits.

Conditions are categorical codes on a 5-minute lattice:
0 not-released, 1 fluency, 2 slow, 3 congestion, 4 extreme congestion.
A sample pairs one target section's recent history with the path-aligned
observation matrices of its upstream and downstream slots, plus the
future codes at each prediction horizon.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from datetime import datetime, timedelta
from typing import Iterator, Sequence

import numpy as np

from .errors import DataError
from .graph import DOWNSTREAM, UPSTREAM, TrafficGraph, enumerate_slot_paths

STEP_MINUTES = 5
N_CODES = 5  # alphabet {0..4}


@dataclass(frozen=True)
class ConditionStore:
    """Dense (vertex x time) grid of condition codes at 5-minute spacing.

    ``start`` anchors index 0: an integer step for 'step' timestamps or a
    datetime for 'iso'. Immutable once built; share freely.
    """

    vertices: tuple[str, ...]
    grid: np.ndarray  # (n_vertices, n_steps) int8
    start: object = 0
    timestamp_kind: str = "step"

    def __post_init__(self):
        if self.grid.ndim != 2 or self.grid.shape[0] != len(self.vertices):
            raise DataError("grid shape does not match vertex list")
        if self.grid.size and (self.grid.min() < 0 or self.grid.max() >= N_CODES):
            raise DataError("grid contains codes outside 0..4")

    @property
    def n_steps(self) -> int:
        return self.grid.shape[1]

    @property
    def index(self) -> dict:
        return {v: i for i, v in enumerate(self.vertices)}

    def timestamp(self, t: int):
        if self.timestamp_kind == "step":
            return int(self.start) + t
        return self.start + timedelta(minutes=STEP_MINUTES * t)

    def format_timestamp(self, t: int) -> str:
        ts = self.timestamp(t)
        return str(ts) if self.timestamp_kind == "step" else ts.isoformat()

    def minute_of_day(self, t: int) -> int:
        """Minute within the day for time index t (step 0 = midnight)."""
        if self.timestamp_kind == "step":
            return (self.timestamp(t) * STEP_MINUTES) % 1440
        ts = self.timestamp(t)
        return ts.hour * 60 + ts.minute

    def slice_steps(self, lo: int, hi: int) -> "ConditionStore":
        """Store restricted to time indices [lo, hi)."""
        if self.timestamp_kind == "step":
            start = int(self.start) + lo
        else:
            start = self.start + timedelta(minutes=STEP_MINUTES * lo)
        return ConditionStore(self.vertices, self.grid[:, lo:hi].copy(), start, self.timestamp_kind)


def _parse_timestamps(raw: list[str], kind: str, strict: bool):
    """Map raw timestamp strings to integer step offsets; returns
    (offsets, start, kind)."""
    if kind == "auto":
        try:
            int(raw[0])
            kind = "step"
        except ValueError:
            kind = "iso"
    if kind == "step":
        try:
            steps = np.array([int(s) for s in raw], dtype=np.int64)
        except ValueError as exc:
            raise DataError(f"bad integer timestamp: {exc}") from None
        start = int(steps.min())
        return steps - start, start, kind
    if kind != "iso":
        raise DataError(f"unknown timestamp kind {kind!r}")
    try:
        stamps = [datetime.fromisoformat(s) for s in raw]
    except ValueError as exc:
        raise DataError(f"bad ISO-8601 timestamp: {exc}") from None
    t0 = min(stamps)
    offsets = np.empty(len(stamps), dtype=np.int64)
    for i, ts in enumerate(stamps):
        delta = (ts - t0).total_seconds()
        lattice = delta / (60 * STEP_MINUTES)
        if strict and lattice != int(lattice):
            raise DataError(f"timestamp {raw[i]} is off the 5-minute lattice")
        offsets[i] = int(lattice)
    return offsets, t0, kind


def load_conditions(path, graph: TrafficGraph, timestamp_kind="auto", strict=True) -> ConditionStore:
    """Read `vertex,timestamp,code` rows into a dense store.

    Missing (vertex, time) cells become 0 (not-released); graph vertices
    absent from the file are all-zero rows. Unknown vertices are an error
    in strict mode and ignored otherwise.
    """
    vertices, stamps, codes = [], [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        need = {"vertex", "timestamp", "code"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise DataError(f"{path}: conditions file needs header vertex,timestamp,code")
        for row in reader:
            vertices.append(row["vertex"])
            stamps.append(row["timestamp"])
            codes.append(row["code"])
    if not vertices:
        raise DataError(f"{path}: no condition records")

    code_arr = np.empty(len(codes), dtype=np.int64)
    for i, c in enumerate(codes):
        try:
            code_arr[i] = int(c)
        except ValueError:
            raise DataError(f"non-integer condition code {c!r}") from None
    if code_arr.min() < 0 or code_arr.max() >= N_CODES:
        bad = code_arr[(code_arr < 0) | (code_arr >= N_CODES)][0]
        raise DataError(f"condition code {bad} outside 0..4")

    offsets, start, kind = _parse_timestamps(stamps, timestamp_kind, strict)
    n_steps = int(offsets.max()) + 1
    index = graph.index
    grid = np.zeros((len(graph.vertices), n_steps), dtype=np.int8)
    written = np.zeros_like(grid, dtype=bool)
    for v, t, c in zip(vertices, offsets, code_arr):
        row = index.get(v)
        if row is None:
            if strict:
                raise DataError(f"condition record for unknown vertex {v!r}")
            continue
        if written[row, t] and grid[row, t] != c:
            raise DataError(f"conflicting duplicate record for ({v}, t={t})")
        grid[row, t] = c
        written[row, t] = True
    return ConditionStore(tuple(graph.vertices), grid, start, kind)


def save_conditions(store: ConditionStore, path):
    """Write every cell as `vertex,timestamp,code` (canonical order)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["vertex", "timestamp", "code"])
        for i, v in enumerate(store.vertices):
            row = store.grid[i]
            for t in range(store.n_steps):
                writer.writerow([v, store.format_timestamp(t), int(row[t])])


# ------------------------------------------------------------------- samples


@dataclass(frozen=True)
class Sample:
    """One training/inference record for a (vertex, time) pair.

    Code vectors are most-recent-first: position k holds c(v, t-k).
    Path matrices are (l rows, r orders); invalid rows are masked.
    """

    vertex: str
    t: int
    target_codes: np.ndarray
    target_limit: int
    up_codes: np.ndarray
    up_limits: np.ndarray
    up_mask: np.ndarray
    down_codes: np.ndarray
    down_limits: np.ndarray
    down_mask: np.ndarray
    labels: np.ndarray
    label_mask: np.ndarray


@dataclass(frozen=True)
class SampleBatch:
    """Stacked samples (leading batch axis on every array)."""

    vertices: list
    times: np.ndarray
    target_codes: np.ndarray
    target_limits: np.ndarray
    up_codes: np.ndarray
    up_limits: np.ndarray
    up_mask: np.ndarray
    down_codes: np.ndarray
    down_limits: np.ndarray
    down_mask: np.ndarray
    labels: np.ndarray
    label_mask: np.ndarray

    def __len__(self):
        return len(self.vertices)


class SampleSet:
    """Lazily assembled samples over a store, addressable by position.

    Builds per-vertex slot paths once, then gathers code windows on
    demand, so batches are cheap. Sample order is (vertex index, time).
    """

    def __init__(self, store: ConditionStore, graph: TrafficGraph, p: int, radius: int,
                 horizons: Sequence[int], max_paths: int = 8):
        if p < 1:
            raise ValueError("history length p must be >= 1")
        if any(h < 1 for h in horizons):
            raise ValueError("horizons must be >= 1")
        if list(horizons) != sorted(set(horizons)):
            raise ValueError("horizons must be strictly increasing")
        self.store = store
        self.graph = graph
        self.p = p
        self.radius = radius
        self.horizons = np.array(list(horizons), dtype=np.int64)
        self.max_paths = max_paths

        n = len(graph.vertices)
        self._pad_index = n
        # extra all-zero row serves the pad sentinel
        self._grid_ext = np.vstack([store.grid, np.zeros((1, store.n_steps), dtype=np.int8)])
        self._limit_idx = np.concatenate([graph.limit_levels() - 1, [0]])

        shape = (n, max_paths, radius)
        self._up_paths = np.empty(shape, dtype=np.int64)
        self._down_paths = np.empty(shape, dtype=np.int64)
        self._up_valid = np.empty((n, max_paths), dtype=bool)
        self._down_valid = np.empty((n, max_paths), dtype=bool)
        for v in graph.vertices:
            i = graph.index[v]
            up = enumerate_slot_paths(graph, v, radius, UPSTREAM, max_paths)
            down = enumerate_slot_paths(graph, v, radius, DOWNSTREAM, max_paths)
            self._up_paths[i] = up.index_matrix(graph, self._pad_index)
            self._down_paths[i] = down.index_matrix(graph, self._pad_index)
            self._up_valid[i] = up.row_mask
            self._down_valid[i] = down.row_mask

        max_h = int(self.horizons.max())
        t_lo, t_hi = p, store.n_steps - 1 - max_h
        v_idx, t_idx = [], []
        for i in range(n):
            if t_hi < t_lo:
                break
            ts = np.arange(t_lo, t_hi + 1)
            labels = store.grid[i, ts[:, None] + self.horizons[None, :]]
            keep = (labels != 0).any(axis=1)
            v_idx.append(np.full(keep.sum(), i, dtype=np.int64))
            t_idx.append(ts[keep])
        self.v_idx = np.concatenate(v_idx) if v_idx else np.empty(0, dtype=np.int64)
        self.t_idx = np.concatenate(t_idx) if t_idx else np.empty(0, dtype=np.int64)

    def __len__(self):
        return len(self.v_idx)

    @property
    def slot_width(self) -> int:
        return self.max_paths

    def both_sides_reachable(self) -> np.ndarray:
        """Per-sample flag: target has at least one path on each side."""
        return self._up_valid[self.v_idx].any(axis=1) & self._down_valid[self.v_idx].any(axis=1)

    def batch(self, rows) -> SampleBatch:
        rows = np.asarray(rows, dtype=np.int64)
        vs, ts = self.v_idx[rows], self.t_idx[rows]
        offs = np.arange(self.p + 1, dtype=np.int64)

        def side(paths, valid):
            pv = paths[vs]  # (B, l, r)
            codes = self._grid_ext[pv[:, :, :, None], ts[:, None, None, None] - offs]
            limits = self._limit_idx[pv]
            return codes.astype(np.int64), limits, valid[vs]

        up_codes, up_limits, up_mask = side(self._up_paths, self._up_valid)
        down_codes, down_limits, down_mask = side(self._down_paths, self._down_valid)
        labels = self.store.grid[vs[:, None], ts[:, None] + self.horizons[None, :]].astype(np.int64)
        return SampleBatch(
            vertices=[self.store.vertices[i] for i in vs],
            times=ts.copy(),
            target_codes=self.store.grid[vs[:, None], ts[:, None] - offs[None, :]].astype(np.int64),
            target_limits=self._limit_idx[vs],
            up_codes=up_codes, up_limits=up_limits, up_mask=up_mask,
            down_codes=down_codes, down_limits=down_limits, down_mask=down_mask,
            labels=labels, label_mask=labels != 0,
        )

    def sample(self, i: int) -> Sample:
        b = self.batch([i])
        return Sample(
            vertex=b.vertices[0], t=int(b.times[0]),
            target_codes=b.target_codes[0], target_limit=int(b.target_limits[0]) + 1,
            up_codes=b.up_codes[0], up_limits=b.up_limits[0], up_mask=b.up_mask[0],
            down_codes=b.down_codes[0], down_limits=b.down_limits[0], down_mask=b.down_mask[0],
            labels=b.labels[0], label_mask=b.label_mask[0],
        )

    def subset(self, rows) -> "SampleSet":
        """Shallow view with a restricted sample index."""
        out = object.__new__(SampleSet)
        out.__dict__.update(self.__dict__)
        rows = np.asarray(rows, dtype=np.int64)
        out.v_idx = self.v_idx[rows]
        out.t_idx = self.t_idx[rows]
        return out


def make_samples(store: ConditionStore, graph: TrafficGraph, p: int, radius: int,
                 horizons: Sequence[int], max_paths: int = 8) -> Iterator[Sample]:
    """Stream one Sample per (vertex, t) with a full window and at least
    one released label."""
    sset = SampleSet(store, graph, p, radius, horizons, max_paths)
    for i in range(len(sset)):
        yield sset.sample(i)


# -------------------------------------------------------------------- splits


def chrono_split(obj, train_fraction: float):
    """Split by time index, never by shuffling.

    Stores split into [0, cut) and [cut, n_steps). Sample sets keep a
    train sample only if its labels end before the cut and a test sample
    only if its history starts at or after the cut, so no test input
    overlaps a training label window.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must be in (0, 1)")
    if isinstance(obj, ConditionStore):
        cut = int(np.floor(obj.n_steps * train_fraction))
        cut = max(1, min(obj.n_steps - 1, cut))
        return obj.slice_steps(0, cut), obj.slice_steps(cut, obj.n_steps)
    if isinstance(obj, SampleSet):
        cut = int(np.floor(obj.store.n_steps * train_fraction))
        max_h = int(obj.horizons.max())
        train_rows = np.nonzero(obj.t_idx + max_h < cut)[0]
        test_rows = np.nonzero(obj.t_idx - obj.p >= cut)[0]
        return obj.subset(train_rows), obj.subset(test_rows)
    raise TypeError(f"cannot chrono_split {type(obj).__name__}")


def class_distribution(obj) -> tuple:
    """Cumulative proportions of released codes (1..4) -> (q1, q2, q3, 1.0)."""
    if isinstance(obj, ConditionStore):
        values = obj.grid.reshape(-1)
    else:
        values = np.asarray(obj).reshape(-1)
    values = values[values != 0]
    if values.size == 0:
        raise DataError("no released records: class distribution undefined")
    counts = np.bincount(values, minlength=N_CODES)[1:N_CODES]
    cum = np.cumsum(counts) / values.size
    cum[-1] = 1.0
    return tuple(float(x) for x in cum)
