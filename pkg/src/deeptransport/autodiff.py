"""Dense float64 tensors with reverse-mode differentiation.

Small by design: exactly the primitive set the forecasting network
needs, recorded on an explicit tape. Every primitive validates shapes,
rejects non-finite outputs, and registers an exact adjoint. The heavy
inner loops live in :mod:`deeptransport.kernels` so they can be served
by either the numpy or the compiled backend.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import kernels
from .errors import NumericalError


class Tensor:
    """A dense float64 value. ``name`` is set for learnable parameters."""

    __slots__ = ("data", "name")

    def __init__(self, data, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{tag})"


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_finite(arr, op):
    if not np.isfinite(arr).all():
        raise NumericalError(f"non-finite values produced by primitive '{op}'")


class _Node:
    __slots__ = ("op", "inputs", "outputs", "backward")

    def __init__(self, op, inputs, outputs, backward):
        self.op = op
        self.inputs = inputs
        self.outputs = outputs
        self.backward = backward


class Gradients:
    """Result of a backward pass; maps tensors to gradient arrays."""

    def __init__(self, by_id):
        self._by_id = by_id

    def get(self, tensor: Tensor):
        """Gradient for ``tensor``, or None if the loss never reached it."""
        return self._by_id.get(id(tensor))

    def __getitem__(self, tensor: Tensor):
        g = self.get(tensor)
        if g is None:
            raise KeyError(f"no gradient recorded for {tensor!r}")
        return g

    def named(self, params: Iterable[Tensor]) -> dict[str, np.ndarray]:
        """Gradients keyed by parameter name; unreached parameters get zeros."""
        out = {}
        for p in params:
            if p.name is None:
                raise ValueError("named() requires named parameter tensors")
            g = self.get(p)
            out[p.name] = np.zeros_like(p.data) if g is None else g
        return out


class Tape:
    """Ordered record of executed primitives supporting exact replay.

    Single-threaded: share parameters across tapes, not tapes across
    threads.
    """

    def __init__(self, record: bool = True):
        self._nodes: list[_Node] = []
        self.record = record

    def __len__(self):
        return len(self._nodes)

    # -- recording machinery -------------------------------------------------

    def _record(self, op, inputs, out_data, backward):
        if isinstance(out_data, tuple):
            outputs = tuple(Tensor(d) for d in out_data)
        else:
            outputs = (Tensor(out_data),)
        for o in outputs:
            _check_finite(o.data, op)
        if self.record:
            self._nodes.append(_Node(op, tuple(inputs), outputs, backward))
        return outputs if len(outputs) > 1 else outputs[0]

    # -- primitives -----------------------------------------------------------

    def affine(self, x, W, b) -> Tensor:
        """x @ W + b with x: (n, f), W: (f, m), b: (m,)."""
        x, W, b = _as_tensor(x), _as_tensor(W), _as_tensor(b)
        if x.data.ndim != 2 or W.data.ndim != 2 or x.data.shape[1] != W.data.shape[0]:
            raise ValueError(f"affine shape mismatch: {x.shape} @ {W.shape}")
        if b.data.shape != (W.data.shape[1],):
            raise ValueError(f"affine bias shape {b.shape} != ({W.shape[1]},)")
        out = x.data @ W.data + b.data

        def backward(dout):
            return dout @ W.data.T, x.data.T @ dout, dout.sum(axis=0)

        return self._record("affine", (x, W, b), out, backward)

    def conv1d_nonoverlap(self, x, W, b) -> Tensor:
        """Non-overlapping 1-d convolution: stride equals the kernel window.

        x: (n, k*w) split into k windows of width w = W.shape[0];
        W: (w, m); b: (m,). Returns (n, k, m). Because stride == window,
        each feature map is one shared linear functional per window.
        """
        x, W, b = _as_tensor(x), _as_tensor(W), _as_tensor(b)
        w, m = W.data.shape
        n, width = x.data.shape
        if width % w != 0:
            raise ValueError(f"input width {width} not a multiple of window {w}")
        if b.data.shape != (m,):
            raise ValueError(f"conv bias shape {b.shape} != ({m},)")
        k = width // w
        xr = x.data.reshape(n, k, w)
        out = xr @ W.data + b.data

        def backward(dout):
            dx = (dout @ W.data.T).reshape(n, width)
            dW = np.einsum("nkw,nkm->wm", xr, dout)
            return dx, dW, dout.sum(axis=(0, 1))

        return self._record("conv1d_nonoverlap", (x, W, b), out, backward)

    def tanh(self, x) -> Tensor:
        x = _as_tensor(x)
        out = np.tanh(x.data)

        def backward(dout):
            return (dout * (1.0 - out * out),)

        return self._record("tanh", (x,), out, backward)

    def sigmoid(self, x) -> Tensor:
        x = _as_tensor(x)
        out = 1.0 / (1.0 + np.exp(-x.data))

        def backward(dout):
            return (dout * out * (1.0 - out),)

        return self._record("sigmoid", (x,), out, backward)

    def softmax(self, x) -> Tensor:
        """Softmax along the last axis, computed with max subtraction."""
        x = _as_tensor(x)
        shifted = x.data - x.data.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        out = e / e.sum(axis=-1, keepdims=True)

        def backward(dout):
            inner = (dout * out).sum(axis=-1, keepdims=True)
            return (out * (dout - inner),)

        return self._record("softmax", (x,), out, backward)

    def add(self, a, b) -> Tensor:
        a, b = _as_tensor(a), _as_tensor(b)
        if a.data.shape != b.data.shape:
            raise ValueError(f"add shape mismatch: {a.shape} vs {b.shape}")
        out = a.data + b.data

        def backward(dout):
            return dout, dout

        return self._record("add", (a, b), out, backward)

    def mul(self, a, b) -> Tensor:
        a, b = _as_tensor(a), _as_tensor(b)
        if a.data.shape != b.data.shape:
            raise ValueError(f"mul shape mismatch: {a.shape} vs {b.shape}")
        out = a.data * b.data

        def backward(dout):
            return dout * b.data, dout * a.data

        return self._record("mul", (a, b), out, backward)

    def scale_rows(self, x, s) -> Tensor:
        """Row-wise scaling: x: (n, d) scaled by s: (n,)."""
        x, s = _as_tensor(x), _as_tensor(s)
        if x.data.ndim != 2 or s.data.shape != (x.data.shape[0],):
            raise ValueError(f"scale_rows shapes: {x.shape}, {s.shape}")
        out = x.data * s.data[:, None]

        def backward(dout):
            return dout * s.data[:, None], (dout * x.data).sum(axis=1)

        return self._record("scale_rows", (x, s), out, backward)

    def concat(self, tensors: Sequence, axis: int) -> Tensor:
        ts = [_as_tensor(t) for t in tensors]
        out = np.concatenate([t.data for t in ts], axis=axis)
        sizes = [t.data.shape[axis] for t in ts]
        splits = np.cumsum(sizes)[:-1]

        def backward(dout):
            return tuple(np.split(dout, splits, axis=axis))

        return self._record("concat", tuple(ts), out, backward)

    def reshape(self, x, shape) -> Tensor:
        x = _as_tensor(x)
        old = x.data.shape
        out = x.data.reshape(shape)

        def backward(dout):
            return (dout.reshape(old),)

        return self._record("reshape", (x,), out, backward)

    def take_index(self, x, j: int, axis: int) -> Tensor:
        """Select index ``j`` along ``axis``, dropping that axis."""
        x = _as_tensor(x)
        out = np.take(x.data, j, axis=axis)

        def backward(dout):
            dx = np.zeros_like(x.data)
            sl = [slice(None)] * x.data.ndim
            sl[axis] = j
            dx[tuple(sl)] = dout
            return (dx,)

        return self._record("take_index", (x,), out, backward)

    def gather_rows(self, table, idx) -> Tensor:
        """Embedding lookup: table: (V, e), idx: (n,) ints -> (n, e)."""
        table = _as_tensor(table)
        idx = np.asarray(idx)
        if idx.ndim != 1:
            raise ValueError("gather_rows expects a flat index vector")
        if idx.min(initial=0) < 0 or (idx.size and idx.max() >= table.data.shape[0]):
            raise ValueError("gather_rows index out of range")
        out = table.data[idx]

        def backward(dout):
            dt = np.zeros_like(table.data)
            np.add.at(dt, idx, dout)
            return (dt,)

        return self._record("gather_rows", (table,), out, backward)

    def transpose2d(self, x) -> Tensor:
        x = _as_tensor(x)
        if x.data.ndim != 2:
            raise ValueError("transpose2d expects a matrix")
        out = np.ascontiguousarray(x.data.T)

        def backward(dout):
            return (np.ascontiguousarray(dout.T),)

        return self._record("transpose2d", (x,), out, backward)

    def tile_pairs(self, g, slots) -> Tensor:
        """Stack [g ; s_j] pairs for every slot: g: (n, d), slots: list of
        (n, d) -> (len(slots)*n, 2d), slot-major blocks."""
        g = _as_tensor(g)
        ts = [_as_tensor(s) for s in slots]
        n, d = g.data.shape
        r = len(ts)
        out = np.empty((r * n, 2 * d))
        for j, s in enumerate(ts):
            if s.data.shape != (n, d):
                raise ValueError("tile_pairs slots must match g's shape")
            out[j * n : (j + 1) * n, :d] = g.data
            out[j * n : (j + 1) * n, d:] = s.data

        def backward(dout):
            dg = np.zeros_like(g.data)
            ds = []
            for j in range(r):
                block = dout[j * n : (j + 1) * n]
                dg += block[:, :d]
                ds.append(block[:, d:])
            return (dg, *ds)

        return self._record("tile_pairs", (g, *ts), out, backward)

    def attend_combine(self, alpha, slots) -> Tensor:
        """Weighted sum of slot embeddings: alpha: (n, r), slots: r of
        (n, d) -> (n, d)."""
        alpha = _as_tensor(alpha)
        ts = [_as_tensor(s) for s in slots]
        n, r = alpha.data.shape
        if r != len(ts):
            raise ValueError("attend_combine needs one weight column per slot")
        out = np.zeros_like(ts[0].data)
        for j, s in enumerate(ts):
            out += alpha.data[:, j, None] * s.data

        def backward(dout):
            dalpha = np.empty((n, r))
            ds = []
            for j, s in enumerate(ts):
                dalpha[:, j] = (dout * s.data).sum(axis=1)
                ds.append(alpha.data[:, j, None] * dout)
            return (dalpha, *ds)

        return self._record("attend_combine", (alpha, *ts), out, backward)

    def masked_max_pool(self, x, mask) -> Tensor:
        """Column-wise max over valid rows; x: (n, l, d), mask: (n, l) bool.

        Ties break to the lowest row index. Rows with an all-invalid mask
        pool to 0.0 and propagate zero gradient.
        """
        x = _as_tensor(x)
        mask = np.asarray(mask, dtype=bool)
        if x.data.ndim != 3 or mask.shape != x.data.shape[:2]:
            raise ValueError(f"masked_max_pool shapes: {x.shape}, {mask.shape}")
        out, arg = kernels.masked_max_pool(x.data, mask)
        n_rows = x.data.shape[1]

        def backward(dout):
            return (kernels.masked_max_pool_backward(dout, arg, n_rows),)

        return self._record("masked_max_pool", (x,), out, backward)

    def squared_error(self, pred, target, mask=None) -> Tensor:
        """Masked sum of squared differences, reduced to a scalar."""
        pred, target = _as_tensor(pred), _as_tensor(target)
        if pred.data.shape != target.data.shape:
            raise ValueError(f"squared_error shapes: {pred.shape} vs {target.shape}")
        if mask is None:
            m = np.ones_like(pred.data)
        else:
            m = np.asarray(mask, dtype=np.float64)
            if m.shape != pred.data.shape:
                raise ValueError(f"squared_error mask shape {m.shape}")
        diff = pred.data - target.data
        out = np.float64((m * diff * diff).sum())

        def backward(dout):
            g = 2.0 * dout * m * diff
            return g, -g

        return self._record("squared_error", (pred, target), out, backward)

    def embed_affine(self, embeds, table_of, W, b, idx) -> Tensor:
        """Fused embedding lookup + shared affine over concatenated cells.

        Computes affine(concat_k embeds[table_of[k]][idx[:, k]], W, b)
        without materializing the (n, K*e) embedded matrix: since the map
        is linear, position k contributes through the folded table
        embeds[table_of[k]] @ W[k*e:(k+1)*e].

        embeds: embedding tables (V_j, e); table_of[k]: which table feeds
        idx column k; W: (K*e, m); b: (m,); idx: (n, K) ints.
        """
        embeds = [_as_tensor(t) for t in embeds]
        W, b = _as_tensor(W), _as_tensor(b)
        idx = np.ascontiguousarray(idx, dtype=np.intp)
        n, K = idx.shape
        e = embeds[0].data.shape[1]
        m = W.data.shape[1]
        if len(table_of) != K:
            raise ValueError("table_of length must match idx columns")
        if W.data.shape[0] != K * e:
            raise ValueError(f"embed_affine W rows {W.data.shape[0]} != {K}*{e}")
        vmax = max(t.data.shape[0] for t in embeds)
        folded = np.zeros((K, vmax, m))
        for k in range(K):
            tab = embeds[table_of[k]].data
            folded[k, : tab.shape[0]] = tab @ W.data[k * e : (k + 1) * e]
        out = kernels.gather_sum(folded, idx) + b.data

        def backward(dout):
            dfold = kernels.gather_sum_backward(dout, idx, K, vmax)
            dW = np.empty_like(W.data)
            dembeds = [np.zeros_like(t.data) for t in embeds]
            for k in range(K):
                j = table_of[k]
                tab = embeds[j].data
                v = tab.shape[0]
                dW[k * e : (k + 1) * e] = tab.T @ dfold[k, :v]
                dembeds[j] += dfold[k, :v] @ W.data[k * e : (k + 1) * e].T
            return (*dembeds, dW, dout.sum(axis=0))

        return self._record("embed_affine", (*embeds, W, b), out, backward)

    def lstm_cell(self, x, h_prev, c_prev, W, b):
        """One recurrence step; returns (h, c).

        Gate pre-activations are W @ [x; h_prev] + b with W: (4d, m+d)
        laid out as [candidate | output | input | forget] row blocks.
        The cell update is c = candidate*input + c_prev*forget and
        h = output * tanh(c).
        """
        x, h_prev, c_prev = _as_tensor(x), _as_tensor(h_prev), _as_tensor(c_prev)
        W, b = _as_tensor(W), _as_tensor(b)
        n, m = x.data.shape
        d = c_prev.data.shape[1]
        if W.data.shape != (4 * d, m + d):
            raise ValueError(f"lstm W shape {W.shape} != ({4 * d}, {m + d})")
        if h_prev.data.shape != (n, d) or b.data.shape != (4 * d,):
            raise ValueError("lstm state/bias shape mismatch")
        Wx = np.ascontiguousarray(W.data[:, :m].T)
        Wh = np.ascontiguousarray(W.data[:, m:].T)
        z = x.data @ Wx + h_prev.data @ Wh + b.data
        h, c, gates, tc = kernels.lstm_gates(z, c_prev.data)

        def backward(dh, dc):
            dz, dc_prev = kernels.lstm_gates_backward(dh, dc, gates, tc, c_prev.data)
            dx = dz @ Wx.T
            dh_prev = dz @ Wh.T
            dW = np.empty_like(W.data)
            dW[:, :m] = dz.T @ x.data
            dW[:, m:] = dz.T @ h_prev.data
            return dx, dh_prev, dc_prev, dW, dz.sum(axis=0)

        return self._record("lstm_cell", (x, h_prev, c_prev, W, b), (h, c), backward)

    # -- reverse pass ----------------------------------------------------------

    def backward(self, loss: Tensor) -> Gradients:
        """Accumulate d(loss)/d(input) for every tensor on the tape.

        The loss must be scalar. Each node is visited exactly once, in
        reverse execution order.
        """
        if loss.data.shape != ():
            raise ValueError(f"loss must be scalar, got shape {loss.data.shape}")
        if not self.record:
            raise ValueError("backward on a non-recording tape (built with record=False)")
        grads: dict[int, np.ndarray] = {id(loss): np.float64(1.0)}
        for node in reversed(self._nodes):
            outs = [grads.get(id(o)) for o in node.outputs]
            if all(g is None for g in outs):
                continue
            outs = [
                np.zeros_like(o.data) if g is None else g
                for o, g in zip(node.outputs, outs)
            ]
            in_grads = node.backward(*outs)
            if not isinstance(in_grads, tuple):
                in_grads = (in_grads,)
            for t, g in zip(node.inputs, in_grads):
                if g is None:
                    continue
                prev = grads.get(id(t))
                grads[id(t)] = g if prev is None else prev + g
        return Gradients(grads)


def backward(tape: Tape, loss: Tensor) -> Gradients:
    """Module-level alias for :meth:`Tape.backward`."""
    return tape.backward(loss)


# -- parameters and their updates ---------------------------------------------


class ParamSet:
    """Ordered collection of named parameter tensors."""

    def __init__(self):
        self._tensors: dict[str, Tensor] = {}

    def add(self, name: str, data) -> Tensor:
        if name in self._tensors:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(data, dtype=np.float64), name=name)
        self._tensors[name] = t
        return t

    def adopt(self, tensor: Tensor) -> Tensor:
        """Register an existing named tensor, sharing its storage."""
        if tensor.name is None:
            raise ValueError("can only adopt named tensors")
        if tensor.name in self._tensors:
            raise ValueError(f"duplicate parameter name {tensor.name!r}")
        self._tensors[tensor.name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __iter__(self):
        return iter(self._tensors.values())

    def __len__(self):
        return len(self._tensors)

    def names(self):
        return list(self._tensors)

    def items(self):
        return self._tensors.items()

    def copy(self) -> "ParamSet":
        out = ParamSet()
        for name, t in self._tensors.items():
            out.add(name, t.data.copy())
        return out

    def size(self) -> int:
        return sum(t.data.size for t in self)


def glorot_bound(shape) -> float:
    """Symmetric uniform bound sqrt(6 / (fan_in + fan_out))."""
    if len(shape) == 0:
        return math.sqrt(3.0)
    fan = shape[0] + shape[-1]
    return math.sqrt(6.0 / fan) if fan else 1.0


def init_params(shape, scheme="glorot", seed=0) -> Tensor:
    """Draw an initial parameter tensor.

    scheme: "glorot" for uniform(+-glorot_bound), or ("uniform", lo, hi).
    ``seed`` may be an int or an existing numpy Generator (consumed in
    order, which keeps whole-model initialization reproducible).
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    shape = tuple(shape)
    if scheme == "glorot":
        b = glorot_bound(shape)
        lo, hi = -b, b
    elif isinstance(scheme, tuple) and scheme[0] == "uniform":
        lo, hi = float(scheme[1]), float(scheme[2])
    else:
        raise ValueError(f"unknown init scheme {scheme!r}")
    return Tensor(rng.uniform(lo, hi, size=shape))


@dataclass
class AdamState:
    """First/second moment accumulators plus hyperparameters."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def ensure(self, params: ParamSet):
        for name, t in params.items():
            if name not in self.m:
                self.m[name] = np.zeros_like(t.data)
                self.v[name] = np.zeros_like(t.data)


def adam_step(params: ParamSet, grads: dict, state: AdamState):
    """Apply one bias-corrected Adam update in place.

    grads maps parameter name -> gradient array (missing names are
    treated as zero gradient, matching unreached parameters).
    """
    state.ensure(params)
    state.step += 1
    for name, t in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(t.data)
        g = np.asarray(g, dtype=np.float64)
        if g.shape != t.data.shape:
            raise ValueError(f"gradient shape {g.shape} != param {t.data.shape} for {name!r}")
        if not np.isfinite(g).all():
            raise NumericalError(f"non-finite gradient for parameter {name!r}")
        kernels.adam_update(
            t.data, g, state.m[name], state.v[name],
            state.step, state.lr, state.beta1, state.beta2, state.eps,
        )
    return params, state
