"""Directed road-section graph and path-aligned order-slot extraction.

Road sections are vertices; a directed edge (u, v) means traffic flows
out of section u into section v. For a target section, the vertices
exactly j directed hops away (following flow for downstream, against it
for upstream) form its order-j slot. Slots are materialized path-wise: a
vertex reachable along two distinct paths appears once per path, so slot
columns line up with the directed paths that produced them.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import DataError

PAD_ID = "__pad__"

UPSTREAM = "upstream"
DOWNSTREAM = "downstream"


class TrafficGraph:
    """Immutable directed graph with per-vertex static attributes.

    Vertex order is lexicographic by id and defines the integer index
    used by array-based consumers. Safe to share across threads.
    """

    def __init__(self, vertices, edges, static_attrs=None):
        self.vertices: tuple[str, ...] = tuple(sorted(set(map(str, vertices))))
        self.index: dict[str, int] = {v: i for i, v in enumerate(self.vertices)}
        seen = set()
        for u, v in edges:
            u, v = str(u), str(v)
            if u == v:
                raise DataError(f"self-loop edge ({u}, {v}) is not allowed")
            if u not in self.index or v not in self.index:
                raise DataError(f"edge ({u}, {v}) references unknown vertex")
            seen.add((u, v))
        self.edges: frozenset[tuple[str, str]] = frozenset(seen)
        self.static_attrs: dict[str, dict] = {
            str(v): dict(a) for v, a in (static_attrs or {}).items()
        }
        for v in self.static_attrs:
            if v not in self.index:
                raise DataError(f"attributes reference unknown vertex {v!r}")
        self._out: dict[str, tuple[str, ...]] = {v: () for v in self.vertices}
        self._in: dict[str, tuple[str, ...]] = {v: () for v in self.vertices}
        out_tmp: dict[str, list[str]] = {v: [] for v in self.vertices}
        in_tmp: dict[str, list[str]] = {v: [] for v in self.vertices}
        for u, v in self.edges:
            out_tmp[u].append(v)
            in_tmp[v].append(u)
        for v in self.vertices:
            self._out[v] = tuple(sorted(out_tmp[v]))
            self._in[v] = tuple(sorted(in_tmp[v]))

    def __len__(self):
        return len(self.vertices)

    def __contains__(self, vertex):
        return vertex in self.index

    def out_neighbors(self, vertex: str) -> tuple[str, ...]:
        return self._out[vertex]

    def in_neighbors(self, vertex: str) -> tuple[str, ...]:
        return self._in[vertex]

    def limit_level(self, vertex: str) -> int:
        """Speed-limit class in 1..4; vertices without attributes get 1."""
        return int(self.static_attrs.get(vertex, {}).get("limit_level", 1))

    def limit_levels(self) -> np.ndarray:
        """Limit level per vertex in index order."""
        return np.array([self.limit_level(v) for v in self.vertices], dtype=np.int64)

    def adjacency(self) -> np.ndarray:
        """Dense boolean matrix A[i, j] = True iff edge (v_i, v_j)."""
        n = len(self.vertices)
        a = np.zeros((n, n), dtype=bool)
        for u, v in self.edges:
            a[self.index[u], self.index[v]] = True
        return a


def load_graph(edge_records, attr_records=None, strict=False) -> TrafficGraph:
    """Build a validated graph from edge pairs and attribute rows.

    attr_records rows are mappings with a 'vertex' key; remaining keys
    are kept as opaque static features ('limit_level' is validated).
    Rows may declare vertices that carry no edges. With strict=True,
    every edge endpoint must be declared by an attribute row.
    """
    attrs: dict[str, dict] = {}
    for row in attr_records or []:
        row = {k: v for k, v in dict(row).items() if v is not None and v != ""}
        try:
            vertex = str(row.pop("vertex"))
        except KeyError:
            raise DataError("attribute row without a 'vertex' field") from None
        if "limit_level" in row:
            try:
                row["limit_level"] = int(row["limit_level"])
            except (TypeError, ValueError):
                raise DataError(f"non-integer limit_level for vertex {vertex!r}") from None
            if not 1 <= row["limit_level"] <= 4:
                raise DataError(f"limit_level {row['limit_level']} for {vertex!r} not in 1..4")
        if vertex in attrs and attrs[vertex] != row:
            raise DataError(f"conflicting duplicate attribute rows for vertex {vertex!r}")
        attrs[vertex] = row

    vertices = set(attrs)
    edges = []
    for u, v in edge_records:
        u, v = str(u), str(v)
        if strict and (u not in attrs or v not in attrs):
            raise DataError(f"edge ({u}, {v}) references undeclared vertex (strict mode)")
        vertices.add(u)
        vertices.add(v)
        edges.append((u, v))
    return TrafficGraph(vertices, edges, attrs)


def load_graph_csv(edge_path, attr_path=None, strict=False) -> TrafficGraph:
    """Load the canonical CSV pair: edges `from,to`, attributes `vertex,...`."""
    with open(edge_path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"from", "to"} <= set(reader.fieldnames):
            raise DataError(f"{edge_path}: edge file needs a 'from,to' header")
        edges = [(row["from"], row["to"]) for row in reader]
    attr_rows = None
    if attr_path is not None:
        with open(attr_path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or "vertex" not in reader.fieldnames:
                raise DataError(f"{attr_path}: attribute file needs a 'vertex' column")
            attr_rows = list(reader)
    return load_graph(edges, attr_rows, strict=strict)


def save_graph_csv(graph: TrafficGraph, edge_path, attr_path=None):
    """Write the canonical CSV pair; deterministic row order."""
    with open(edge_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["from", "to"])
        for u, v in sorted(graph.edges):
            writer.writerow([u, v])
    if attr_path is not None:
        keys = sorted({k for a in graph.static_attrs.values() for k in a})
        if "limit_level" in keys:
            keys = ["limit_level"] + [k for k in keys if k != "limit_level"]
        with open(attr_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["vertex"] + keys)
            for v in graph.vertices:
                row = graph.static_attrs.get(v, {})
                writer.writerow([v] + [row.get(k, "") for k in keys])


@dataclass(frozen=True)
class SlotPaths:
    """Path-aligned slot matrix for one target and direction.

    paths[i, j-1] is the order-j vertex of the i-th directed path (rows
    lexicographic by id sequence). Invalid (padded) rows are masked and
    must never contribute to pooling.
    """

    target: str
    direction: str
    radius: int
    paths: np.ndarray
    row_mask: np.ndarray
    pad_id: str = PAD_ID

    @property
    def n_valid(self) -> int:
        return int(self.row_mask.sum())

    def slot(self, order: int) -> list[str]:
        """Order-j slot as the multiset of column entries over valid rows."""
        if not 1 <= order <= self.radius:
            raise ValueError(f"order {order} outside 1..{self.radius}")
        return [str(v) for v in self.paths[self.row_mask, order - 1]]

    def index_matrix(self, graph: TrafficGraph, pad_index: int) -> np.ndarray:
        """Vertex indices with pad rows mapped to ``pad_index``."""
        out = np.full(self.paths.shape, pad_index, dtype=np.int64)
        for i in np.nonzero(self.row_mask)[0]:
            for j in range(self.radius):
                out[i, j] = graph.index[str(self.paths[i, j])]
        return out


def _collect_paths(neighbors_of, target, radius, max_paths):
    """Directed walks of length ``radius`` from the target, lexicographic.

    Dead-end walks shorter than the radius are extended by repeating
    their terminal vertex, so every emitted row has full length.
    Enumeration stops once max_paths rows exist; because children are
    visited in sorted order this equals lexicographic truncation of the
    full enumeration.
    """
    found: list[tuple[str, ...]] = []

    def dfs(vertex, acc):
        if len(found) >= max_paths:
            return
        if len(acc) == radius:
            found.append(tuple(acc))
            return
        nbrs = neighbors_of(vertex)
        if not nbrs:
            if acc:
                found.append(tuple(acc) + (acc[-1],) * (radius - len(acc)))
            return
        for nb in nbrs:
            if len(found) >= max_paths:
                return
            acc.append(nb)
            dfs(nb, acc)
            acc.pop()

    dfs(target, [])
    return found


def enumerate_slot_paths(
    graph: TrafficGraph,
    target: str,
    radius: int,
    direction: str,
    max_paths: int = 8,
    pad_id: str = PAD_ID,
) -> SlotPaths:
    """Enumerate directed paths of length ``radius`` touching ``target``.

    direction 'downstream' follows outgoing edges from the target;
    'upstream' walks incoming edges backwards, so column j holds the
    order-j neighbors against the flow. Rows beyond the number of
    available paths are padded with ``pad_id`` and masked invalid.
    """
    if target not in graph:
        raise DataError(f"target vertex {target!r} not in graph")
    if radius < 1:
        raise ValueError("radius must be >= 1")
    if max_paths < 1:
        raise ValueError("max_paths must be >= 1")
    if direction == DOWNSTREAM:
        neighbors_of = graph.out_neighbors
    elif direction == UPSTREAM:
        neighbors_of = graph.in_neighbors
    else:
        raise ValueError(f"direction must be 'upstream' or 'downstream', got {direction!r}")

    rows = _collect_paths(neighbors_of, target, radius, max_paths)
    width = max((len(s) for row in rows for s in row), default=1)
    width = max(width, len(pad_id))
    paths = np.full((max_paths, radius), pad_id, dtype=f"<U{width}")
    for i, row in enumerate(rows):
        paths[i] = row
    row_mask = np.zeros(max_paths, dtype=bool)
    row_mask[: len(rows)] = True
    return SlotPaths(
        target=target, direction=direction, radius=radius,
        paths=paths, row_mask=row_mask, pad_id=pad_id,
    )


def perceptive_neighborhood(graph: TrafficGraph, target: str, radius: int) -> set[str]:
    """Vertices reachable within ``radius`` hops with or against the flow."""
    if target not in graph:
        raise DataError(f"target vertex {target!r} not in graph")
    if radius < 0:
        raise ValueError("radius must be >= 0")
    result = {target}
    for neighbors_of in (graph.out_neighbors, graph.in_neighbors):
        frontier = {target}
        for _ in range(radius):
            frontier = {nb for v in frontier for nb in neighbors_of(v)}
            if not frontier:
                break
            result |= frontier
    return result
