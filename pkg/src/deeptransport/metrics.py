"""Evaluation metrics: quadratic weighted kappa, time-of-day RMSE, and
normalized mutual information over graph neighborhoods."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import N_CODES, ConditionStore
from .errors import DataError, NumericalError
from .graph import TrafficGraph

N_CLASSES = 4  # released codes 1..4


@dataclass(frozen=True)
class KappaReport:
    """Quadratic weighted Cohen's kappa with its backing matrices.

    observed[i-1, j-1] counts records rated i by the truth and j by the
    prediction; expected is the chance-agreement outer product scaled so
    both matrices share the same total; weights penalize disagreement by
    squared class distance, normalized to a unit maximum.
    """

    observed: np.ndarray
    expected: np.ndarray
    weights: np.ndarray
    kappa: float

    @property
    def n_records(self) -> int:
        return int(round(self.observed.sum()))


def kappa_weights(n_classes: int = N_CLASSES) -> np.ndarray:
    """w[i, j] = (i - j)^2 / (n - 1)^2 on 1-based classes."""
    idx = np.arange(n_classes, dtype=np.float64)
    return (idx[:, None] - idx[None, :]) ** 2 / (n_classes - 1) ** 2


def qw_kappa(truth, pred) -> KappaReport:
    """Quadratic weighted kappa between two class-code sequences (1..4)."""
    truth = np.asarray(truth, dtype=np.int64)
    pred = np.asarray(pred, dtype=np.int64)
    if truth.shape != pred.shape or truth.ndim != 1:
        raise ValueError("qw_kappa expects two equal-length 1-d code arrays")
    if truth.size == 0:
        raise DataError("qw_kappa on empty input")
    for name, arr in (("truth", truth), ("pred", pred)):
        if arr.min() < 1 or arr.max() > N_CLASSES:
            raise DataError(f"{name} codes outside 1..{N_CLASSES}")

    n = truth.size
    observed = np.zeros((N_CLASSES, N_CLASSES))
    np.add.at(observed, (truth - 1, pred - 1), 1.0)
    row = observed.sum(axis=1)
    col = observed.sum(axis=0)
    expected = np.outer(row, col) / n
    w = kappa_weights()
    denom = float((w * expected).sum())
    if denom == 0.0:
        raise NumericalError(
            "kappa undefined: single-class marginals give zero expected disagreement"
        )
    kappa = 1.0 - float((w * observed).sum()) / denom
    return KappaReport(observed=observed, expected=expected, weights=w, kappa=kappa)


def rmse_by_time_of_day(truth, pred, minutes, bin_minutes: int = 30) -> dict[int, float]:
    """RMSE between codes and continuous predictions, grouped by
    time-of-day bin. Keys are bin start minutes; empty bins are absent."""
    truth = np.asarray(truth, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    minutes = np.asarray(minutes, dtype=np.int64)
    if not (truth.shape == pred.shape == minutes.shape) or truth.ndim != 1:
        raise ValueError("rmse_by_time_of_day expects three equal-length vectors")
    if bin_minutes < 1 or 1440 % bin_minutes != 0:
        raise ValueError("bin_minutes must divide 1440")
    out: dict[int, float] = {}
    bins = (minutes % 1440) // bin_minutes
    err = (truth - pred) ** 2
    for b in np.unique(bins):
        out[int(b) * bin_minutes] = float(np.sqrt(err[bins == b].mean()))
    return out


def _entropy_from_counts(counts: np.ndarray, n: float) -> float:
    h = 0.0
    for c in counts:
        if c > 0:
            p = c / n
            h += -p * math.log(p)
    return h


def _joint_entropy_sym(joint: np.ndarray, n: float) -> float:
    """Plug-in joint entropy accumulated in a transpose-invariant order,
    so nmi(x, y) == nmi(y, x) holds bit for bit."""
    k = joint.shape[0]
    h = 0.0
    for i in range(k):
        c = joint[i, i]
        if c > 0:
            p = c / n
            h += -p * math.log(p)
        for j in range(i + 1, k):
            term = 0.0
            if joint[i, j] > 0:
                p = joint[i, j] / n
                term += -p * math.log(p)
            if joint[j, i] > 0:
                p = joint[j, i] / n
                term += -p * math.log(p)
            h += term
    return h


def nmi_from_joint(joint: np.ndarray) -> float:
    """NMI = 2*MI / (H(X) + H(Y)) from a joint count matrix; 0 when both
    entropies vanish. Clipped to [0, 1] against round-off."""
    joint = np.asarray(joint, dtype=np.float64)
    n = joint.sum()
    if n == 0:
        raise DataError("nmi on empty joint histogram")
    hx = _entropy_from_counts(joint.sum(axis=1), n)
    hy = _entropy_from_counts(joint.sum(axis=0), n)
    if hx + hy == 0.0:
        return 0.0
    hxy = _joint_entropy_sym(joint, n)
    mi = hx + hy - hxy
    nmi = 2.0 * mi / (hx + hy)
    return min(1.0, max(0.0, nmi))


def nmi(x, y) -> float:
    """Normalized mutual information of two categorical code series."""
    x = np.asarray(x, dtype=np.int64)
    y = np.asarray(y, dtype=np.int64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("nmi expects two equal-length 1-d code arrays")
    if x.size == 0:
        raise DataError("nmi on empty input")
    if x.min() < 0 or y.min() < 0 or x.max() >= N_CODES or y.max() >= N_CODES:
        raise DataError(f"nmi codes outside 0..{N_CODES - 1}")
    joint = np.zeros((N_CODES, N_CODES))
    np.add.at(joint, (x, y), 1.0)
    return nmi_from_joint(joint)


def _exact_order_pairs(adj: np.ndarray, order: int) -> np.ndarray:
    """Boolean matrix of ordered pairs (v, u) joined by a directed walk of
    exactly ``order`` edges."""
    reach = adj.copy()
    for _ in range(order - 1):
        reach = (reach.astype(np.int64) @ adj.astype(np.int64)) > 0
    return reach


def nmi_by_radius(store: ConditionStore, graph: TrafficGraph, max_radius: int,
                  directions: str = "both", include_self: bool = False) -> dict[int, float]:
    """NMI between each vertex and its exactly-r-order neighbors, pooled.

    For every ordered pair joined by a length-r directed walk, the code
    pairs over all time points enter one joint histogram per radius;
    both flow directions are pooled unless ``directions`` narrows it to
    'downstream' or 'upstream'. Radii with no pairs are absent from the
    result.
    """
    if max_radius < 1:
        raise ValueError("max_radius must be >= 1")
    if directions not in ("both", "downstream", "upstream"):
        raise ValueError(f"bad directions {directions!r}")
    adj = graph.adjacency()
    n = len(graph.vertices)
    grid = store.grid
    out: dict[int, float] = {}
    for r in range(1, max_radius + 1):
        reach = _exact_order_pairs(adj, r)
        if not include_self:
            np.fill_diagonal(reach, False)
        joint = np.zeros((N_CODES, N_CODES))
        vs, us = np.nonzero(reach)
        for v, u in zip(vs, us):
            pair_hist = np.bincount(
                grid[v].astype(np.int64) * N_CODES + grid[u].astype(np.int64),
                minlength=N_CODES * N_CODES,
            ).reshape(N_CODES, N_CODES)
            if directions in ("both", "downstream"):
                joint += pair_hist  # v looking downstream at u
            if directions in ("both", "upstream"):
                joint += pair_hist.T  # u looking upstream at v
        if joint.sum() > 0:
            out[r] = nmi_from_joint(joint)
    return out
