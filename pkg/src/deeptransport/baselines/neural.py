"""Neural baselines sharing the package's autodiff and training loop.

FNN: one tanh hidden layer over the target's own history, a linear
multi-horizon head. SAEs: all locations' histories concatenated into one
vector, encoded by a greedily pretrained tanh autoencoder stack, topped
with a multi-task linear regression head, then fine-tuned end to end.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..autodiff import ParamSet, Tape, Tensor
from ..errors import DataError
from ..training import TrainConfig, TrainResult, sgd_fit


@dataclass(frozen=True)
class FnnConfig:
    history_len: int = 12
    hidden: int = 32
    horizons: tuple = (3, 6, 9, 12)


def fnn_init(cfg: FnnConfig, seed: int) -> ParamSet:
    from ..autodiff import glorot_bound

    rng = np.random.default_rng(seed)
    params = ParamSet()
    shapes = {
        "fnn.W1": (cfg.history_len + 1, cfg.hidden),
        "fnn.W2": (cfg.hidden, len(cfg.horizons)),
    }
    for name, shape in shapes.items():
        b = glorot_bound(shape)
        params.add(name, rng.uniform(-b, b, size=shape))
    params.add("fnn.b1", np.zeros(cfg.hidden))
    params.add("fnn.b2", np.zeros(len(cfg.horizons)))
    return params


def _fnn_forward(tape: Tape, params: ParamSet, x: np.ndarray):
    hidden = tape.tanh(tape.affine(Tensor(x), params["fnn.W1"], params["fnn.b1"]))
    return tape.affine(hidden, params["fnn.W2"], params["fnn.b2"])


def fnn_train(inputs, labels, label_mask, cfg: FnnConfig, tcfg: TrainConfig,
              *, params: ParamSet | None = None, log_sink=None,
              record_wall_time: bool = True) -> TrainResult:
    """Fit on (n, p+1) histories against (n, n_horizons) masked labels."""
    X = np.asarray(inputs, dtype=np.float64)
    Y = np.asarray(labels, dtype=np.float64)
    M = np.asarray(label_mask, dtype=np.float64)
    if X.shape[1] != cfg.history_len + 1:
        raise DataError(f"fnn inputs have width {X.shape[1]}, config wants {cfg.history_len + 1}")
    if params is None:
        params = fnn_init(cfg, tcfg.seed)

    def shard_grad(rows):
        tape = Tape()
        pred = _fnn_forward(tape, params, X[rows])
        loss = tape.squared_error(pred, Tensor(Y[rows]), M[rows])
        return float(loss.data), int(M[rows].sum()), tape.backward(loss).named(params)

    return sgd_fit(X.shape[0], shard_grad, params, tcfg,
                   log_sink=log_sink, record_wall_time=record_wall_time)


def fnn_predict(params: ParamSet, inputs) -> np.ndarray:
    X = np.asarray(inputs, dtype=np.float64)
    hidden = np.tanh(X @ params["fnn.W1"].data + params["fnn.b1"].data)
    return hidden @ params["fnn.W2"].data + params["fnn.b2"].data


# ---------------------------------------------------------------------- SAEs


@dataclass(frozen=True)
class SaesConfig:
    input_dim: int
    output_dim: int
    layers: tuple = (256, 256, 256, 256)

    def __post_init__(self):
        if self.input_dim < 1 or self.output_dim < 1 or not self.layers:
            raise ValueError("SAEs needs positive dims and at least one layer")


def _encode_stack(params: ParamSet, X: np.ndarray, n_layers: int) -> np.ndarray:
    a = X
    for k in range(n_layers):
        a = np.tanh(a @ params[f"saes.enc{k}.W"].data + params[f"saes.enc{k}.b"].data)
    return a


def saes_train(inputs, labels, label_mask, cfg: SaesConfig,
               pretrain_cfg: TrainConfig, finetune_cfg: TrainConfig,
               *, log_sink=None, record_wall_time: bool = True):
    """Greedy layer-wise pretraining, head fit, then end-to-end tuning.

    inputs: (n, input_dim) concatenated observations of all locations;
    labels: (n, output_dim) with a matching mask. Returns (params, log).
    """
    from ..autodiff import glorot_bound

    X = np.asarray(inputs, dtype=np.float64)
    Y = np.asarray(labels, dtype=np.float64)
    M = np.asarray(label_mask, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != cfg.input_dim:
        raise DataError(
            f"SAEs inputs have width {X.shape[1] if X.ndim == 2 else '?'}, "
            f"config wants {cfg.input_dim} (vertex count mismatch?)"
        )
    rng = np.random.default_rng(pretrain_cfg.seed)
    params = ParamSet()
    dims = [cfg.input_dim, *cfg.layers]
    for k in range(len(cfg.layers)):
        b = glorot_bound((dims[k], dims[k + 1]))
        params.add(f"saes.enc{k}.W", rng.uniform(-b, b, size=(dims[k], dims[k + 1])))
        params.add(f"saes.enc{k}.b", np.zeros(dims[k + 1]))
    bh = glorot_bound((dims[-1], cfg.output_dim))
    params.add("saes.head.W", rng.uniform(-bh, bh, size=(dims[-1], cfg.output_dim)))
    params.add("saes.head.b", np.zeros(cfg.output_dim))

    log = []

    def sink(record):
        log.append(record)
        if log_sink is not None:
            log_sink(record)

    # greedy pretraining: each layer reconstructs its own input
    activations = X
    for k in range(len(cfg.layers)):
        enc_W, enc_b = params[f"saes.enc{k}.W"], params[f"saes.enc{k}.b"]
        stage = ParamSet()
        stage.adopt(enc_W)
        stage.adopt(enc_b)
        bd = glorot_bound((dims[k + 1], dims[k]))
        dec_W = stage.add("dec.W", rng.uniform(-bd, bd, size=(dims[k + 1], dims[k])))
        dec_b = stage.add("dec.b", np.zeros(dims[k]))
        a_in = activations

        def shard_grad(rows, a_in=a_in, enc_W=enc_W, enc_b=enc_b,
                       dec_W=dec_W, dec_b=dec_b, stage=stage):
            tape = Tape()
            code = tape.tanh(tape.affine(Tensor(a_in[rows]), enc_W, enc_b))
            recon = tape.affine(code, dec_W, dec_b)
            loss = tape.squared_error(recon, Tensor(a_in[rows]))
            return float(loss.data), a_in[rows].size, tape.backward(loss).named(stage)

        sgd_fit(X.shape[0], shard_grad, stage, pretrain_cfg,
                log_sink=lambda r, k=k: sink({"phase": f"pretrain{k}", **r}),
                record_wall_time=record_wall_time)
        activations = np.tanh(a_in @ enc_W.data + enc_b.data)

    # head on frozen features, then end-to-end fine-tune
    feats = activations
    head = ParamSet()
    head.adopt(params["saes.head.W"])
    head.adopt(params["saes.head.b"])

    def head_grad(rows):
        tape = Tape()
        pred = tape.affine(Tensor(feats[rows]), params["saes.head.W"], params["saes.head.b"])
        loss = tape.squared_error(pred, Tensor(Y[rows]), M[rows])
        return float(loss.data), int(M[rows].sum()), tape.backward(loss).named(head)

    sgd_fit(X.shape[0], head_grad, head, pretrain_cfg,
            log_sink=lambda r: sink({"phase": "head", **r}),
            record_wall_time=record_wall_time)

    def full_grad(rows):
        tape = Tape()
        a = Tensor(X[rows])
        for k in range(len(cfg.layers)):
            a = tape.tanh(tape.affine(a, params[f"saes.enc{k}.W"], params[f"saes.enc{k}.b"]))
        pred = tape.affine(a, params["saes.head.W"], params["saes.head.b"])
        loss = tape.squared_error(pred, Tensor(Y[rows]), M[rows])
        return float(loss.data), int(M[rows].sum()), tape.backward(loss).named(params)

    sgd_fit(X.shape[0], full_grad, params, finetune_cfg,
            log_sink=lambda r: sink({"phase": "finetune", **r}),
            record_wall_time=record_wall_time)
    return params, log


def saes_predict(params: ParamSet, inputs, n_layers: int) -> np.ndarray:
    X = np.asarray(inputs, dtype=np.float64)
    feats = _encode_stack(params, X, n_layers)
    return feats @ params["saes.head.W"].data + params["saes.head.b"].data
