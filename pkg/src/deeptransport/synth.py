"""Desk-scale synthetic congestion data.

A random strongly-linked road graph plus a discrete-time propagation
process: jams spawn with a two-peak daily intensity, travel against the
flow (a queue grows backwards from its bottleneck), and drain
stochastically. The generator is bit-reproducible for a fixed seed and
emits the same file schemas as real ingested data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import ConditionStore
from .errors import ConfigError
from .graph import TrafficGraph

STEPS_PER_DAY = 288


@dataclass(frozen=True)
class SynthConfig:
    """Generator knobs.

    A spawned jam carries a propagation budget (its queue depth), drawn
    uniformly in 1..max_jam_depth; every upstream hop consumes one unit.
    Without the budget, re-propagation is supercritical on graphs with
    mean in-degree >= 2 and the network locks up permanently.
    """

    seed: int
    n_vertices: int = 200
    mean_out_degree: float = 2.0
    days: int = 14
    propagation_prob: float = 0.9
    decay_prob: float = 0.15
    seed_base_rate: float = 1.5e-5
    # (minute of day, sigma minutes, added per-step probability at the peak)
    rush_peaks: tuple = ((8 * 60, 85.0, 3.5e-4), (18 * 60, 85.0, 3.5e-4))
    jam_level: int = 4
    max_jam_depth: int = 5
    missing_prob: float = 0.0
    initial_jams: tuple = ()
    steps_per_day: int = STEPS_PER_DAY

    def validate(self):
        if self.n_vertices < 2:
            raise ConfigError("synthetic graph needs at least 2 vertices")
        for name in ("propagation_prob", "decay_prob", "seed_base_rate", "missing_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name}={v} is not a probability")
        if self.mean_out_degree < 1.0:
            raise ConfigError("mean_out_degree must be >= 1 (ring backbone)")
        if not 1 <= self.jam_level <= 4:
            raise ConfigError("jam_level must be in 1..4")
        if self.max_jam_depth < 1:
            raise ConfigError("max_jam_depth must be >= 1")
        if self.days < 1:
            raise ConfigError("days must be >= 1")


def synth_graph(cfg: SynthConfig, rng: np.random.Generator) -> TrafficGraph:
    """Ring backbone plus random extra edges.

    The ring guarantees every section has upstream and downstream
    neighbors; extra edges avoid duplicates, self-loops, and 2-cycles.
    """
    n = cfg.n_vertices
    width = len(str(n - 1))
    names = [f"v{i:0{width}d}" for i in range(n)]
    edges = {(names[i], names[(i + 1) % n]) for i in range(n)}
    n_extra = int(round(n * (cfg.mean_out_degree - 1.0)))
    attempts = 0
    while n_extra > 0 and attempts < 50 * n:
        attempts += 1
        u, v = rng.integers(n), rng.integers(n)
        if u == v:
            continue
        e, rev = (names[u], names[v]), (names[v], names[u])
        if e in edges or rev in edges:
            continue
        edges.add(e)
        n_extra -= 1
    limits = rng.integers(1, 5, size=n)
    attrs = {names[i]: {"limit_level": int(limits[i])} for i in range(n)}
    return TrafficGraph(names, sorted(edges), attrs)


def _intensity(cfg: SynthConfig, minute_of_day: float) -> float:
    lam = cfg.seed_base_rate
    for center, sigma, amp in cfg.rush_peaks:
        lam += amp * math.exp(-0.5 * ((minute_of_day - center) / sigma) ** 2)
    return min(lam, 1.0)


def simulate_conditions(graph: TrafficGraph, cfg: SynthConfig,
                        rng: np.random.Generator) -> ConditionStore:
    """Run the queue propagation process on an existing graph.

    Per step, synchronously: codes >= 2 drain one level with probability
    decay_prob; every congested (>= 3) vertex with remaining budget
    raises each upstream neighbor to at least 3 with probability
    propagation_prob, handing over budget - 1; fresh jams spawn at
    jam_level with the time-of-day intensity. Draw order is fixed, so a
    seed pins the whole trajectory.
    """
    n = len(graph.vertices)
    n_steps = cfg.days * cfg.steps_per_day
    edges = sorted(graph.edges)
    src = np.array([graph.index[u] for u, _ in edges], dtype=np.int64)
    dst = np.array([graph.index[v] for _, v in edges], dtype=np.int64)

    state = np.ones(n, dtype=np.int64)
    budget = np.zeros(n, dtype=np.int64)
    for v in cfg.initial_jams:
        state[graph.index[v]] = cfg.jam_level
        budget[graph.index[v]] = cfg.max_jam_depth
    lam = np.array([
        _intensity(cfg, (t % cfg.steps_per_day) * 5.0) for t in range(cfg.steps_per_day)
    ])

    grid = np.empty((n, n_steps), dtype=np.int8)
    for t in range(n_steps):
        grid[:, t] = state
        nxt = state.copy()
        nxt_budget = budget.copy()
        drain = (state >= 2) & (rng.random(n) < cfg.decay_prob)
        nxt[drain] -= 1
        if len(src):
            spreader = (state >= 3) & (budget > 0)
            fires = spreader[dst] & (rng.random(len(src)) < cfg.propagation_prob)
            np.maximum.at(nxt, src[fires], 3)
            np.maximum.at(nxt_budget, src[fires], budget[dst[fires]] - 1)
        seeds = rng.random(n) < lam[t % cfg.steps_per_day]
        depths = rng.integers(1, cfg.max_jam_depth + 1, size=n)
        nxt[seeds] = cfg.jam_level
        nxt_budget[seeds] = np.maximum(nxt_budget[seeds], depths[seeds])
        nxt_budget[nxt < 3] = 0
        state, budget = nxt, nxt_budget

    if cfg.missing_prob > 0.0:
        grid[rng.random(grid.shape) < cfg.missing_prob] = 0
    return ConditionStore(tuple(graph.vertices), grid, start=0, timestamp_kind="step")


def synth_generate(cfg: SynthConfig):
    """Generate (graph, conditions); deterministic for a fixed seed."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    graph = synth_graph(cfg, rng)
    store = simulate_conditions(graph, cfg, rng)
    return graph, store
