"""Mini-batch training with synchronous sharded gradients, plus the
rank-projection that turns continuous predictions back into classes.

Reproducibility contract: the batch order is a pure function of (seed,
step), gradients are accumulated shard by shard in a fixed order, and
one Adam update applies per step. The worker count only sets how many
shards run concurrently; it never changes the summation order, so any
worker count yields bit-identical parameter trajectories.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .autodiff import AdamState, ParamSet, Tape, adam_step
from .data import SampleSet, class_distribution
from .errors import ConfigError, NumericalError
from .model import ModelConfig, batch_loss, forward_batch, init_model_params


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings.

    The batch is cut into fixed shards of ``shard_size`` records (the
    last shard takes the remainder); ``workers`` threads consume them in
    parallel. 1100/100/11 mirrors one batch per step spread over eleven
    hundred-record shards.
    """

    seed: int
    batch_size: int = 1100
    workers: int = 11
    shard_size: int = 100
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_epochs: int = 20
    max_steps: int | None = None
    patience: int = 5
    eval_every: int = 50
    val_fraction: float = 0.1

    def validate(self):
        if self.batch_size < 1 or self.shard_size < 1 or self.workers < 1:
            raise ConfigError("batch_size, shard_size, workers must be >= 1")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError("val_fraction must be in [0, 1)")
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be >= 1")


@dataclass
class TrainResult:
    params: ParamSet          # parameters at the best validation point
    final_params: ParamSet    # parameters after the last step
    adam: AdamState
    log: list = field(default_factory=list)
    best_val: float | None = None
    steps: int = 0


def _epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(n)


def sgd_fit(
    n_train: int,
    shard_grad: Callable,
    params: ParamSet,
    cfg: TrainConfig,
    *,
    adam: AdamState | None = None,
    val_fn: Callable | None = None,
    on_improve: Callable | None = None,
    log_sink: Callable | None = None,
    record_wall_time: bool = True,
) -> TrainResult:
    """Generic loop: shard_grad(rows) -> (loss_sum, n_terms, grad dict).

    Resumes transparently when ``adam.step`` is nonzero: the batch
    schedule is derived from the global step, so a resumed run walks the
    identical trajectory. Early stopping triggers after ``patience``
    evaluations without improvement (requires val_fn).
    """
    cfg.validate()
    if n_train < 1:
        raise ConfigError("training set is empty")
    adam = adam or AdamState(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
    adam.ensure(params)
    result = TrainResult(params=params, final_params=params, adam=adam)

    steps_per_epoch = (n_train + cfg.batch_size - 1) // cfg.batch_size
    total_steps = cfg.max_epochs * steps_per_epoch
    if cfg.max_steps is not None:
        total_steps = min(total_steps, cfg.max_steps)

    pool = ThreadPoolExecutor(max_workers=cfg.workers) if cfg.workers > 1 else None
    best_val = None
    stale = 0
    t0 = time.monotonic()
    try:
        step = adam.step
        while step < total_steps:
            epoch, slot = divmod(step, steps_per_epoch)
            order = _epoch_order(cfg.seed, epoch, n_train)
            rows = order[slot * cfg.batch_size : (slot + 1) * cfg.batch_size]
            shards = [rows[i : i + cfg.shard_size] for i in range(0, len(rows), cfg.shard_size)]

            if pool is not None:
                parts = list(pool.map(shard_grad, shards))
            else:
                parts = [shard_grad(s) for s in shards]
            loss_sum = 0.0
            n_terms = 0
            total: dict[str, np.ndarray] = {}
            for part_loss, part_terms, grads in parts:  # fixed shard order
                loss_sum += part_loss
                n_terms += part_terms
                for name, g in grads.items():
                    if name in total:
                        total[name] += g
                    else:
                        total[name] = g.copy()
            if not np.isfinite(loss_sum):
                raise NumericalError(
                    f"non-finite training loss at step {step + 1} "
                    f"(lr={adam.lr}, batch={len(rows)})"
                )
            adam_step(params, total, adam)
            step = adam.step

            record = {
                "step": step,
                "epoch": epoch,
                "train_loss": loss_sum / max(n_terms, 1),
            }
            if val_fn is not None and (step % cfg.eval_every == 0 or step == total_steps):
                val = float(val_fn())
                record["val_loss"] = val
                if best_val is None or val < best_val:
                    best_val = val
                    stale = 0
                    result.params = params.copy()
                    if on_improve is not None:
                        on_improve(params, adam, step, val)
                else:
                    stale += 1
            if record_wall_time:
                record["wall_time"] = time.monotonic() - t0
            result.log.append(record)
            if log_sink is not None:
                log_sink(record)
            if val_fn is not None and stale >= cfg.patience:
                break
    finally:
        if pool is not None:
            pool.shutdown()

    result.final_params = params
    if best_val is None:
        result.params = params
    result.best_val = best_val
    result.steps = adam.step
    return result


def split_train_validation(samples: SampleSet, val_fraction: float):
    """Chronological tail of the training range held out for early stop.

    Boundary-straddling samples are dropped from both sides so the
    validation inputs never overlap training label windows.
    """
    if val_fraction <= 0.0:
        return samples, None
    t_lo = int(samples.t_idx.min())
    t_hi = int(samples.t_idx.max())
    tau = t_lo + int(np.floor((t_hi - t_lo + 1) * (1.0 - val_fraction)))
    max_h = int(samples.horizons.max())
    train = samples.subset(np.nonzero(samples.t_idx + max_h < tau)[0])
    val = samples.subset(np.nonzero(samples.t_idx - samples.p >= tau)[0])
    if len(val) == 0 or len(train) == 0:
        return samples, None
    return train, val


def train(
    samples: SampleSet,
    model_cfg: ModelConfig,
    cfg: TrainConfig,
    *,
    params: ParamSet | None = None,
    adam: AdamState | None = None,
    init_seed: int | None = None,
    log_sink: Callable | None = None,
    on_improve: Callable | None = None,
    record_wall_time: bool = True,
    val_batch: int = 4096,
) -> TrainResult:
    """Train the forecasting network on a sample set.

    Samples whose target lacks paths on either side cannot be encoded
    and are filtered out up front (the count is logged on the first
    record). Validation uses the chronological tail, with early stopping
    disabled when the tail is empty.
    """
    reachable = samples.both_sides_reachable()
    n_dropped = int((~reachable).sum())
    if n_dropped:
        samples = samples.subset(np.nonzero(reachable)[0])
    if params is None:
        params = init_model_params(model_cfg, cfg.seed if init_seed is None else init_seed)

    train_set, val_set = split_train_validation(samples, cfg.val_fraction)

    def shard_grad(rows):
        batch = train_set.batch(rows)
        tape = Tape()
        out = forward_batch(tape, batch, params, model_cfg)
        loss = batch_loss(tape, out, batch)
        grads = tape.backward(loss).named(params)
        return float(loss.data), int(batch.label_mask.sum()), grads

    val_fn = None
    if val_set is not None:
        def val_fn():
            total, terms = 0.0, 0
            for lo in range(0, len(val_set), val_batch):
                batch = val_set.batch(np.arange(lo, min(lo + val_batch, len(val_set))))
                tape = Tape()
                out = forward_batch(tape, batch, params, model_cfg)
                total += float(batch_loss(tape, out, batch).data)
                terms += int(batch.label_mask.sum())
            return total / max(terms, 1)

    if log_sink is not None and n_dropped:
        log_sink({"event": "filtered_unreachable_samples", "count": n_dropped})
    return sgd_fit(
        len(train_set), shard_grad, params, cfg,
        adam=adam, val_fn=val_fn, on_improve=on_improve,
        log_sink=log_sink, record_wall_time=record_wall_time,
    )


# ---------------------------------------------------------------- projection


@dataclass(frozen=True)
class ProjectionThresholds:
    """Cumulative class proportions (q1, q2, q3) fitted on training labels."""

    q1: float
    q2: float
    q3: float

    def __post_init__(self):
        if not 0.0 < self.q1 <= self.q2 <= self.q3 <= 1.0:
            raise ValueError(f"thresholds must satisfy 0 < q1 <= q2 <= q3 <= 1: {self}")

    def as_tuple(self):
        return (self.q1, self.q2, self.q3)


def fit_projection(labels) -> ProjectionThresholds:
    """Thresholds from the cumulative class proportions of the labels."""
    q1, q2, q3, _ = class_distribution(labels)
    return ProjectionThresholds(q1, q2, q3)


def project_labels(predictions, thresholds: ProjectionThresholds) -> np.ndarray:
    """Rank predictions ascending and cut at the fitted proportions.

    The lowest floor(q1*n) become class 1, up to floor(q2*n) class 2, up
    to floor(q3*n) class 3, the rest class 4. Ties keep their original
    order (stable sort), and results return in input order.
    """
    preds = np.asarray(predictions, dtype=np.float64)
    if preds.ndim != 1 or preds.size == 0:
        raise ValueError("project_labels expects a non-empty 1-d array")
    n = preds.size
    order = np.argsort(preds, kind="stable")
    cuts = [int(np.floor(q * n)) for q in thresholds.as_tuple()]
    ranked = np.empty(n, dtype=np.int64)
    ranked[: cuts[0]] = 1
    ranked[cuts[0] : cuts[1]] = 2
    ranked[cuts[1] : cuts[2]] = 3
    ranked[cuts[2] :] = 4
    out = np.empty(n, dtype=np.int64)
    out[order] = ranked
    return out
