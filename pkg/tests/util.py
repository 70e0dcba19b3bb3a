"""Shared test helpers: finite-difference gradient oracle."""

import numpy as np


def numeric_grad(f, x, eps=1e-5):
    """Central finite differences of scalar f at array x."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(x)
        flat[i] = orig - eps
        fm = f(x)
        flat[i] = orig
        gf[i] = (fp - fm) / (2.0 * eps)
    return g


def rel_err(analytic, numeric):
    """Max absolute deviation scaled by the numeric gradient magnitude."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(np.abs(numeric).max(initial=0.0), 1e-8)
    return np.abs(analytic - numeric).max(initial=0.0) / scale


def check_gradients(build, tensors, tol=1e-6, eps=1e-5):
    """Compare tape gradients of build() against finite differences.

    build() must construct a fresh tape and return (tape, loss); it is
    re-run for every probe, reading the current contents of ``tensors``.
    """
    tape, loss = build()
    grads = tape.backward(loss)
    for t in tensors:
        analytic = grads.get(t)
        if analytic is None:
            analytic = np.zeros_like(t.data)

        def f(x, t=t):
            old = t.data.copy()
            t.data[...] = x
            try:
                _, l = build()
            finally:
                t.data[...] = old
            return float(l.data)

        numeric = numeric_grad(f, t.data.copy(), eps=eps)
        err = rel_err(analytic, numeric)
        assert err < tol, f"gradient mismatch for {t!r}: rel err {err:.3e}"
