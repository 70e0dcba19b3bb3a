"""The forecasting network.

Per prediction, the target section's embedded history is encoded with a
fully-connected layer; each side's path-aligned slot matrices go through
a shared-weight convolution (one linear functional per vertex cell),
then an LSTM chained along path order: downstream runs order 1 -> r,
upstream runs r -> 1, every path row an independent sequence. Masked
max-pooling turns each order's rows into a slot embedding, a per-horizon
feedforward scorer aligns slots with the target encoding via softmax
weights, and each horizon's head regresses a scalar from
[z_up ; target ; z_down].

Parameters are shared across horizons except the attention scorers and
the output heads.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels
from .autodiff import ParamSet, Tape, Tensor, glorot_bound
from .data import N_CODES, Sample, SampleBatch
from .errors import DataError

N_LIMIT_LEVELS = 4
SIDES = ("up", "down")


@dataclass(frozen=True)
class ModelConfig:
    """Network hyperparameters; shapes of every parameter follow from it."""

    history_len: int
    radius: int
    slot_width: int = 8
    embed_dim: int = 32
    feature_maps: int = 4
    hidden: int = 32
    attn_hidden: int = 32
    horizons: tuple = (3, 6, 9, 12)

    def __post_init__(self):
        for name in ("history_len", "radius", "slot_width", "embed_dim",
                     "feature_maps", "hidden", "attn_hidden"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        hs = list(self.horizons)
        if not hs or hs != sorted(set(hs)) or hs[0] < 1:
            raise ValueError("horizons must be non-empty, positive, strictly increasing")
        object.__setattr__(self, "horizons", tuple(int(h) for h in hs))

    @property
    def cell_len(self) -> int:
        """Length of one embedded vertex cell: p+1 codes plus the limit level."""
        return (self.history_len + 2) * self.embed_dim

    @property
    def n_horizons(self) -> int:
        return len(self.horizons)


def init_model_params(config: ModelConfig, seed: int) -> ParamSet:
    """Fresh parameters: uniform +-glorot weights, zero biases.

    Creation order is fixed, so a seed pins every tensor.
    """
    rng = np.random.default_rng(seed)
    params = ParamSet()

    def uniform(name, shape):
        b = glorot_bound(shape)
        params.add(name, rng.uniform(-b, b, size=shape))

    def zeros(name, shape):
        params.add(name, np.zeros(shape))

    e, m, d, a = config.embed_dim, config.feature_maps, config.hidden, config.attn_hidden
    uniform("embed.cond", (N_CODES, e))
    uniform("embed.limit", (N_LIMIT_LEVELS, e))
    for side in SIDES:
        uniform(f"{side}.conv.W", (config.cell_len, m))
        zeros(f"{side}.conv.b", (m,))
        uniform(f"{side}.lstm.W", (4 * d, m + d))
        zeros(f"{side}.lstm.b", (4 * d,))
    uniform("target.W", (config.cell_len, d))
    zeros("target.b", (d,))
    for h in config.horizons:
        for side in SIDES:
            uniform(f"attn.{side}.h{h}.W1", (2 * d, a))
            zeros(f"attn.{side}.h{h}.b1", (a,))
            uniform(f"attn.{side}.h{h}.W2", (a, 1))
            zeros(f"attn.{side}.h{h}.b2", (1,))
        uniform(f"head.h{h}.W", (3 * d, 1))
        zeros(f"head.h{h}.b", (1,))
    return params


@dataclass(frozen=True)
class ForwardOutput:
    """Per-sample outputs plus attention/slot diagnostics.

    attention_* rows are per horizon (each non-negative, summing to 1
    over the r orders). slots_* are the pooled order embeddings.
    """

    predictions: np.ndarray   # (n_horizons,)
    attention_up: np.ndarray  # (n_horizons, r)
    attention_down: np.ndarray
    slots_up: np.ndarray      # (r, d)
    slots_down: np.ndarray


# ------------------------------------------------------- per-sample operators


def embed_cell(params: ParamSet, codes, limit_level: int) -> np.ndarray:
    """Embedded vertex cell: p+1 condition embeddings then the limit-level
    embedding, concatenated most-recent first."""
    codes = np.asarray(codes, dtype=np.int64)
    if codes.min() < 0 or codes.max() >= N_CODES:
        raise DataError(f"condition code outside 0..{N_CODES - 1}")
    if not 1 <= limit_level <= N_LIMIT_LEVELS:
        raise DataError(f"limit level {limit_level} outside 1..{N_LIMIT_LEVELS}")
    cond = params["embed.cond"].data
    lim = params["embed.limit"].data
    return np.concatenate([cond[codes].reshape(-1), lim[limit_level - 1]])


def _side_cells(params, config, codes, limits) -> list[np.ndarray]:
    """Slot matrices X^1..X^r, each (l, cell_len), from a sample's arrays."""
    l, r = codes.shape[0], codes.shape[1]
    out = []
    for j in range(r):
        rows = [embed_cell(params, codes[i, j], int(limits[i, j]) + 1) for i in range(l)]
        out.append(np.stack(rows))
    return out


def conv_side(params: ParamSet, side: str, slot_matrices: Sequence[np.ndarray]):
    """Shared-weight convolution per vertex cell: e^j = tanh(X^j W + b)."""
    W = params[f"{side}.conv.W"].data
    b = params[f"{side}.conv.b"].data
    out = []
    for X in slot_matrices:
        if X.shape[1] != W.shape[0]:
            raise ValueError(f"cell length {X.shape[1]} != conv window {W.shape[0]}")
        out.append(np.tanh(X @ W + b))
    return out


def lstm_side(params: ParamSet, side: str, conv_outputs: Sequence[np.ndarray]):
    """Order-chained LSTM over each path row; returns h^1..h^r.

    Downstream feeds order 1 -> r, upstream r -> 1; both start from zero
    states and share one parameter block per side.
    """
    W = params[f"{side}.lstm.W"].data
    b = params[f"{side}.lstm.b"].data
    r = len(conv_outputs)
    l = conv_outputs[0].shape[0]
    m = conv_outputs[0].shape[1]
    d = W.shape[0] // 4
    order = range(r) if side == "down" else range(r - 1, -1, -1)
    h = np.zeros((l, d))
    c = np.zeros((l, d))
    result: list = [None] * r
    for j in order:
        z = conv_outputs[j] @ W[:, :m].T + h @ W[:, m:].T + b
        h, c, _, _ = kernels.lstm_gates(z, c)
        result[j] = h
    return result


def target_encode(params: ParamSet, codes, limit_level: int) -> np.ndarray:
    """Target hidden representation g = tanh(affine(embed_cell(target)))."""
    cell = embed_cell(params, codes, limit_level)
    return np.tanh(cell @ params["target.W"].data + params["target.b"].data)


def _score(params, side, horizon, g, s) -> float:
    W1 = params[f"attn.{side}.h{horizon}.W1"].data
    b1 = params[f"attn.{side}.h{horizon}.b1"].data
    W2 = params[f"attn.{side}.h{horizon}.W2"].data
    b2 = params[f"attn.{side}.h{horizon}.b2"].data
    hid = np.tanh(np.concatenate([g, s]) @ W1 + b1)
    return float((hid @ W2)[0] + b2[0])


def pool_and_attend(params: ParamSet, side: str, horizon: int,
                    hidden_states: Sequence[np.ndarray], row_mask, g):
    """Masked max-pool each order, then softmax-align slots with the target.

    Returns (z, alpha, slots). Raises when every path row is masked: there
    is nothing to pool on this side.
    """
    row_mask = np.asarray(row_mask, dtype=bool)
    if not row_mask.any():
        raise ValueError(f"all {side}stream path rows are masked; nothing to attend")
    slots = []
    for h in hidden_states:
        pooled, _ = kernels.masked_max_pool(h[None, :, :], row_mask[None, :])
        slots.append(pooled[0])
    scores = np.array([_score(params, side, horizon, g, s) for s in slots])
    shifted = np.exp(scores - scores.max())
    alpha = shifted / shifted.sum()
    z = sum(a * s for a, s in zip(alpha, slots))
    return z, alpha, np.stack(slots)


def forward(sample: Sample, params: ParamSet, config: ModelConfig) -> ForwardOutput:
    """Full per-sample forward pass (inference path)."""
    g = target_encode(params, sample.target_codes, sample.target_limit)
    side_data = {
        "up": (sample.up_codes, sample.up_limits, sample.up_mask),
        "down": (sample.down_codes, sample.down_limits, sample.down_mask),
    }
    hidden = {}
    for side, (codes, limits, mask) in side_data.items():
        cells = _side_cells(params, config, codes, limits)
        hidden[side] = lstm_side(params, side, conv_side(params, side, cells))

    n_h, r = config.n_horizons, config.radius
    preds = np.zeros(n_h)
    att = {side: np.zeros((n_h, r)) for side in SIDES}
    slots = {}
    for k, h in enumerate(config.horizons):
        z = {}
        for side in SIDES:
            mask = side_data[side][2]
            z[side], alpha, slots[side] = pool_and_attend(
                params, side, h, hidden[side], mask, g
            )
            att[side][k] = alpha
        feat = np.concatenate([z["up"], g, z["down"]])
        preds[k] = float((feat @ params[f"head.h{h}.W"].data)[0] + params[f"head.h{h}.b"].data[0])
    return ForwardOutput(
        predictions=preds,
        attention_up=att["up"], attention_down=att["down"],
        slots_up=slots["up"], slots_down=slots["down"],
    )


def loss_value(output: ForwardOutput, labels, label_mask) -> float:
    """Masked squared error summed over horizons."""
    labels = np.asarray(labels, dtype=np.float64)
    mask = np.asarray(label_mask, dtype=np.float64)
    diff = output.predictions - labels
    return float((mask * diff * diff).sum())


# ------------------------------------------------------------- batched tape


@dataclass
class BatchForward:
    """Tape-recorded batch outputs (tensors stay attached to the tape)."""

    predictions: Tensor            # (B, n_horizons)
    attention: dict                # side -> list over horizons of (B, r) tensors
    slots: dict                    # side -> list over orders of (B, d) tensors
    target_hidden: Tensor          # (B, d)


def _embed_table_of(config):
    return (0,) * (config.history_len + 1) + (1,)


def _side_forward(tape, params, config, side, codes, limits, mask):
    """Conv + LSTM + pooling for one side of a batch; returns slot tensors."""
    B, l, r, _ = codes.shape
    idx = np.concatenate(
        [codes.reshape(B * l * r, -1), limits.reshape(B * l * r, 1)], axis=1
    )
    conv = tape.tanh(tape.embed_affine(
        [params["embed.cond"], params["embed.limit"]], _embed_table_of(config),
        params[f"{side}.conv.W"], params[f"{side}.conv.b"], idx,
    ))
    by_order = tape.reshape(conv, (B * l, r, config.feature_maps))
    xs = [tape.take_index(by_order, j, axis=1) for j in range(r)]

    W, b = params[f"{side}.lstm.W"], params[f"{side}.lstm.b"]
    h = Tensor(np.zeros((B * l, config.hidden)))
    c = Tensor(np.zeros((B * l, config.hidden)))
    hs: list = [None] * r
    order = range(r) if side == "down" else range(r - 1, -1, -1)
    for j in order:
        h, c = tape.lstm_cell(xs[j], h, c, W, b)
        hs[j] = h

    slots = []
    for j in range(r):
        cube = tape.reshape(hs[j], (B, l, config.hidden))
        slots.append(tape.masked_max_pool(cube, mask))
    return slots


def _attend(tape, params, config, side, horizon, g, slots):
    B = g.data.shape[0]
    pairs = tape.tile_pairs(g, slots)  # (r*B, 2d), slot-major
    hid = tape.tanh(tape.affine(
        pairs, params[f"attn.{side}.h{horizon}.W1"], params[f"attn.{side}.h{horizon}.b1"]
    ))
    raw = tape.affine(
        hid, params[f"attn.{side}.h{horizon}.W2"], params[f"attn.{side}.h{horizon}.b2"]
    )
    scores = tape.transpose2d(tape.reshape(raw, (len(slots), B)))
    alpha = tape.softmax(scores)
    z = tape.attend_combine(alpha, slots)
    return z, alpha


def forward_batch(tape: Tape, batch: SampleBatch, params: ParamSet,
                  config: ModelConfig) -> BatchForward:
    """Batched forward pass on a tape (training and bulk-eval path).

    Every sample in the batch must have at least one valid path row per
    side; filter with SampleSet.both_sides_reachable first.
    """
    if not (batch.up_mask.any(axis=1).all() and batch.down_mask.any(axis=1).all()):
        raise ValueError("batch contains samples with an empty path side")
    B = len(batch)
    target_idx = np.concatenate(
        [batch.target_codes, batch.target_limits.reshape(B, 1)], axis=1
    )
    g = tape.tanh(tape.embed_affine(
        [params["embed.cond"], params["embed.limit"]], _embed_table_of(config),
        params["target.W"], params["target.b"], target_idx,
    ))
    slots = {
        "up": _side_forward(tape, params, config, "up",
                            batch.up_codes, batch.up_limits, batch.up_mask),
        "down": _side_forward(tape, params, config, "down",
                              batch.down_codes, batch.down_limits, batch.down_mask),
    }
    preds = []
    attention = {side: [] for side in SIDES}
    for h in config.horizons:
        z = {}
        for side in SIDES:
            z[side], alpha = _attend(tape, params, config, side, h, g, slots[side])
            attention[side].append(alpha)
        feat = tape.concat([z["up"], g, z["down"]], axis=1)
        preds.append(tape.affine(feat, params[f"head.h{h}.W"], params[f"head.h{h}.b"]))
    predictions = tape.concat(preds, axis=1)
    return BatchForward(predictions=predictions, attention=attention,
                        slots=slots, target_hidden=g)


def batch_loss(tape: Tape, out: BatchForward, batch: SampleBatch) -> Tensor:
    """Masked squared-error training objective, summed over the batch."""
    return tape.squared_error(
        out.predictions,
        Tensor(batch.labels.astype(np.float64)),
        batch.label_mask.astype(np.float64),
    )
