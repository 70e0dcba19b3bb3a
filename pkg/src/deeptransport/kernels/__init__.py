"""Numerical kernel backend selection.

The compiled Cython extension is preferred when it imported cleanly;
the pure numpy module is the fallback. ``DEEPTRANSPORT_KERNELS`` forces
a choice: ``pure`` or ``compiled``.
"""

import os

from . import pure

_FORCED = os.environ.get("DEEPTRANSPORT_KERNELS", "").strip().lower()

compiled = None
try:
    from . import _speedups as compiled  # type: ignore[no-redef]
except ImportError:
    compiled = None

if _FORCED == "pure":
    active = pure
elif _FORCED == "compiled":
    if compiled is None:
        raise ImportError(
            "DEEPTRANSPORT_KERNELS=compiled but the extension is not built; "
            "reinstall the package with a C compiler available"
        )
    active = compiled
else:
    active = compiled if compiled is not None else pure


def backend_name():
    """Name of the backend in use: 'pure' or 'compiled'."""
    return active.NAME


def available_backends():
    """All importable backends, reference backend first."""
    out = [pure]
    if compiled is not None:
        out.append(compiled)
    return out


gather_sum = active.gather_sum
gather_sum_backward = active.gather_sum_backward
lstm_gates = active.lstm_gates
lstm_gates_backward = active.lstm_gates_backward
masked_max_pool = active.masked_max_pool
masked_max_pool_backward = active.masked_max_pool_backward
adam_update = active.adam_update
