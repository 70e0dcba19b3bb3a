"""End-to-end evaluation pipeline shared by the CLI and the test suites.

One protocol serves every forecaster: chronological split, continuous
per-horizon predictions on the test samples, rank projection with
thresholds fitted on training labels, and quadratic weighted kappa per
horizon plus the average.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .autodiff import ParamSet, Tape
from .baselines import (
    FnnConfig,
    SaesConfig,
    arima_fit,
    arima_rolling_forecast,
    fnn_predict,
    fnn_train,
    rw_predict_batch,
    saes_predict,
    saes_train,
)
from .data import ConditionStore, SampleSet, chrono_split
from .errors import ConfigError, DataError
from .graph import TrafficGraph
from .metrics import qw_kappa, rmse_by_time_of_day
from .model import ModelConfig, forward_batch
from .training import ProjectionThresholds, TrainConfig, fit_projection, project_labels, train

HORIZON_MINUTES = 5


@dataclass
class EvalData:
    """Everything the evaluation protocol needs, split once."""

    graph: TrafficGraph
    store: ConditionStore
    samples: SampleSet
    train_samples: SampleSet
    test_samples: SampleSet
    cut: int


def prepare_eval_data(graph: TrafficGraph, store: ConditionStore, *,
                      history_len: int, radius: int, horizons, slot_width: int = 8,
                      train_fraction: float = 0.8) -> EvalData:
    """Window the store into samples and split them chronologically.

    Test samples additionally require a valid path on both sides, since
    every compared model must predict the same records.
    """
    samples = SampleSet(store, graph, p=history_len, radius=radius,
                        horizons=list(horizons), max_paths=slot_width)
    train_s, test_s = chrono_split(samples, train_fraction)
    reachable = test_s.both_sides_reachable()
    test_s = test_s.subset(np.nonzero(reachable)[0])
    if len(train_s) == 0 or len(test_s) == 0:
        raise DataError("chronological split left an empty train or test set")
    cut = int(np.floor(store.n_steps * train_fraction))
    return EvalData(graph=graph, store=store, samples=samples,
                    train_samples=train_s, test_samples=test_s, cut=cut)


def training_labels(data: EvalData) -> np.ndarray:
    """Released label codes of the training samples (projection source)."""
    batch = data.train_samples.batch(np.arange(len(data.train_samples)))
    labels = batch.labels[batch.label_mask]
    return labels


def network_predictions(params: ParamSet, cfg: ModelConfig, sset: SampleSet,
                        batch_size: int = 2048) -> np.ndarray:
    """Continuous predictions (n_samples, n_horizons) for the network."""
    out = np.empty((len(sset), cfg.n_horizons))
    for lo in range(0, len(sset), batch_size):
        rows = np.arange(lo, min(lo + batch_size, len(sset)))
        batch = sset.batch(rows)
        fwd = forward_batch(Tape(record=False), batch, params, cfg)
        out[rows] = fwd.predictions.data
    return out


def attention_rows(params: ParamSet, cfg: ModelConfig, sset: SampleSet,
                   batch_size: int = 2048):
    """Yield (vertex, time, side, horizon, order, weight) per test sample."""
    for lo in range(0, len(sset), batch_size):
        rows = np.arange(lo, min(lo + batch_size, len(sset)))
        batch = sset.batch(rows)
        fwd = forward_batch(Tape(record=False), batch, params, cfg)
        for side in ("up", "down"):
            for k, h in enumerate(cfg.horizons):
                alpha = fwd.attention[side][k].data
                for i in range(len(rows)):
                    for j in range(cfg.radius):
                        yield (batch.vertices[i], int(batch.times[i]), side,
                               h, j + 1, float(alpha[i, j]))


def rw_predictions(data: EvalData, horizons, seed: int) -> np.ndarray:
    batch = data.test_samples.batch(np.arange(len(data.test_samples)))
    return rw_predict_batch(batch.target_codes[:, 0], horizons, seed)


def _fit_vertex_series(args):
    series, max_p, max_d, max_q = args
    try:
        return arima_fit(series, max_p=max_p, max_d=max_d, max_q=max_q)
    except Exception:
        return None


def arima_predictions(data: EvalData, horizons, *, max_p=5, max_d=2, max_q=5,
                      workers: int = 1) -> np.ndarray:
    """Per-vertex fits on the training range, rolling forecasts at test
    origins (conditioning on all observations before each origin)."""
    sset = data.test_samples
    grid = data.store.grid.astype(np.float64)
    needed = sorted(set(sset.v_idx.tolist()))
    jobs = [(grid[v, : data.cut], max_p, max_d, max_q) for v in needed]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            fits = list(pool.map(_fit_vertex_series, jobs, chunksize=4))
    else:
        fits = [_fit_vertex_series(j) for j in jobs]
    fit_of = dict(zip(needed, fits))

    horizons = list(horizons)
    preds = np.zeros((len(sset), len(horizons)))
    for v in needed:
        fit = fit_of[v]
        mask = sset.v_idx == v
        origins = sset.t_idx[mask]
        if fit is None:
            # degenerate series: persist the last observation
            preds[mask] = grid[v][origins][:, None]
            continue
        preds[mask] = arima_rolling_forecast(fit, grid[v], origins, horizons)
    return preds


def fnn_fit_and_predict(data: EvalData, horizons, fnn_cfg: FnnConfig,
                        tcfg: TrainConfig, *, record_wall_time=True):
    train_b = data.train_samples.batch(np.arange(len(data.train_samples)))
    result = fnn_train(train_b.target_codes.astype(float), train_b.labels.astype(float),
                       train_b.label_mask, fnn_cfg, tcfg,
                       record_wall_time=record_wall_time)
    test_b = data.test_samples.batch(np.arange(len(data.test_samples)))
    preds = fnn_predict(result.params, test_b.target_codes.astype(float))
    return preds, result


def _saes_matrix(store: ConditionStore, origins: np.ndarray, p: int):
    offs = np.arange(p + 1)
    cube = store.grid[:, origins[:, None] - offs[None, :]]  # (V, n, p+1)
    return cube.transpose(1, 0, 2).reshape(origins.size, -1).astype(np.float64)


def saes_fit_and_predict(data: EvalData, horizons, layers, pretrain_cfg: TrainConfig,
                         finetune_cfg: TrainConfig, *, record_wall_time=True):
    """Train on all-location vectors per time origin; predictions for a
    test sample are read from its (vertex, horizon) output slot."""
    horizons = list(horizons)
    p = data.samples.p
    max_h = max(horizons)
    n_v = len(data.graph.vertices)
    train_origins = np.arange(p, data.cut - max_h)
    if train_origins.size == 0:
        raise DataError("training range too short for the SAEs window")
    X = _saes_matrix(data.store, train_origins, p)
    labels = data.store.grid[:, train_origins[:, None] + np.array(horizons)[None, :]]
    Y = labels.transpose(1, 0, 2).reshape(train_origins.size, -1).astype(np.float64)
    mask = (Y != 0).astype(np.float64)
    cfg = SaesConfig(input_dim=n_v * (p + 1), output_dim=n_v * len(horizons),
                     layers=tuple(layers))
    params, log = saes_train(X, Y, mask, cfg, pretrain_cfg, finetune_cfg,
                             record_wall_time=record_wall_time)

    sset = data.test_samples
    test_origins = np.unique(sset.t_idx)
    Xt = _saes_matrix(data.store, test_origins, p)
    flat = saes_predict(params, Xt, n_layers=len(layers))
    cube = flat.reshape(test_origins.size, n_v, len(horizons))
    origin_pos = {int(t): i for i, t in enumerate(test_origins)}
    preds = np.empty((len(sset), len(horizons)))
    for i in range(len(sset)):
        preds[i] = cube[origin_pos[int(sset.t_idx[i])], sset.v_idx[i]]
    return preds, (params, log)


def kappa_by_horizon(test_samples: SampleSet, preds: np.ndarray,
                     thresholds: ProjectionThresholds) -> dict:
    """Project per horizon and score; returns {"per_horizon": {minutes:
    kappa}, "avg": mean, "n": {minutes: count}}."""
    batch = test_samples.batch(np.arange(len(test_samples)))
    horizons = test_samples.horizons
    per, counts = {}, {}
    for k, h in enumerate(horizons):
        released = batch.label_mask[:, k]
        if not released.any():
            continue
        classes = project_labels(preds[released, k], thresholds)
        rep = qw_kappa(batch.labels[released, k], classes)
        per[int(h) * HORIZON_MINUTES] = rep.kappa
        counts[int(h) * HORIZON_MINUTES] = rep.n_records
    if not per:
        raise DataError("no released test labels at any horizon")
    return {"per_horizon": per, "avg": float(np.mean(list(per.values()))), "n": counts}


def rmse_curve(test_samples: SampleSet, preds: np.ndarray, horizon_steps: int,
               bin_minutes: int = 30) -> dict[int, float]:
    """Time-of-day RMSE of the continuous predictions at one horizon."""
    batch = test_samples.batch(np.arange(len(test_samples)))
    k = list(test_samples.horizons).index(horizon_steps)
    released = batch.label_mask[:, k]
    minutes = np.array([
        test_samples.store.minute_of_day(int(t) + horizon_steps) for t in batch.times
    ])
    return rmse_by_time_of_day(batch.labels[released, k].astype(float),
                               preds[released, k], minutes[released],
                               bin_minutes=bin_minutes)


def fit_thresholds(data: EvalData) -> ProjectionThresholds:
    return fit_projection(training_labels(data))


def train_network(data: EvalData, model_cfg: ModelConfig, tcfg: TrainConfig, **kw):
    """Train the main model on the training split."""
    return train(data.train_samples, model_cfg, tcfg, **kw)
