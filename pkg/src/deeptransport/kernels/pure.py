"""Pure numpy implementations of the hot numerical kernels.

These are the reference semantics; the compiled backend in
``_speedups.pyx`` implements the same contracts element for element.
Accumulation orders are fixed (sequential in sample index) so results
are reproducible bit for bit on a given backend.

Shapes use the conventions:
    n  flattened batch rows (samples, or samples x path rows)
    K  positions per cell (history length + 2)
    V  embedding vocabulary (padded to the largest table)
    m  output features
    d  recurrent state size
    l  path rows per sample side
"""

import numpy as np

NAME = "pure"


def gather_sum(tables, idx):
    """Sum per-position table rows: out[i] = sum_k tables[k, idx[i, k]].

    tables: (K, V, m) float64, idx: (n, K) intp -> (n, m).
    """
    n, K = idx.shape
    out = np.zeros((n, tables.shape[2]))
    for k in range(K):
        out += tables[k, idx[:, k], :]
    return out


def gather_sum_backward(dout, idx, n_tables, vocab):
    """Scatter-add adjoint of :func:`gather_sum` -> (K, V, m)."""
    dtables = np.zeros((n_tables, vocab, dout.shape[1]))
    for k in range(n_tables):
        np.add.at(dtables[k], idx[:, k], dout)
    return dtables


def _sigmoid(x):
    out = np.empty_like(x)
    np.negative(x, out=out)
    np.exp(out, out=out)
    out += 1.0
    np.reciprocal(out, out=out)
    return out


def lstm_gates(z, c_prev):
    """Apply gate nonlinearities to pre-activations and advance the cell.

    z: (n, 4d) pre-activations laid out as [candidate | output | input |
    forget] blocks, c_prev: (n, d).

    Returns (h, c, gates, tc): hidden state, cell state, post-activation
    gates in the same block layout, and tanh(c) saved for the backward
    pass.
    """
    d = c_prev.shape[1]
    cbar = np.tanh(z[:, :d])
    o = _sigmoid(z[:, d : 2 * d])
    i = _sigmoid(z[:, 2 * d : 3 * d])
    f = _sigmoid(z[:, 3 * d :])
    c = cbar * i + c_prev * f
    tc = np.tanh(c)
    h = o * tc
    gates = np.concatenate([cbar, o, i, f], axis=1)
    return h, c, gates, tc


def lstm_gates_backward(dh, dc_in, gates, tc, c_prev):
    """Adjoint of :func:`lstm_gates`.

    dh, dc_in: gradients w.r.t. h and c flowing in from later steps.
    Returns (dz, dc_prev).
    """
    d = c_prev.shape[1]
    cbar = gates[:, :d]
    o = gates[:, d : 2 * d]
    i = gates[:, 2 * d : 3 * d]
    f = gates[:, 3 * d :]
    dc = dc_in + dh * o * (1.0 - tc * tc)
    dz = np.empty_like(gates)
    dz[:, :d] = dc * i * (1.0 - cbar * cbar)
    dz[:, d : 2 * d] = dh * tc * o * (1.0 - o)
    dz[:, 2 * d : 3 * d] = dc * cbar * i * (1.0 - i)
    dz[:, 3 * d :] = dc * c_prev * f * (1.0 - f)
    dc_prev = dc * f
    return dz, dc_prev


def masked_max_pool(x, mask):
    """Column-wise max over valid rows; ties go to the lowest row index.

    x: (n, l, d), mask: (n, l) bool. Rows with no valid entry pool to the
    neutral value 0.0 and record argmax -1 (no gradient flows back).

    Returns (out, arg) with out: (n, d), arg: (n, d) intp.
    """
    neg = np.where(mask[:, :, None], x, -np.inf)
    arg = np.argmax(neg, axis=1)
    out = np.take_along_axis(neg, arg[:, None, :], axis=1)[:, 0, :]
    dead = ~mask.any(axis=1)
    if dead.any():
        out[dead] = 0.0
        arg[dead] = -1
    return out, arg


def masked_max_pool_backward(dout, arg, n_rows):
    """Scatter pooled gradients back to the winning rows -> (n, l, d)."""
    n, d = dout.shape
    dx = np.zeros((n, n_rows, d))
    rows, cols = np.nonzero(arg >= 0)
    dx[rows, arg[rows, cols], cols] = dout[rows, cols]
    return dx


def adam_update(param, grad, m, v, t, lr, beta1, beta2, eps):
    """Bias-corrected Adam step, in place on param/m/v. t is 1-based."""
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    mhat = m / (1.0 - beta1**t)
    vhat = v / (1.0 - beta2**t)
    param -= lr * mhat / (np.sqrt(vhat) + eps)
