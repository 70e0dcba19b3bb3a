"""Traffic condition forecasting over road-section graphs.

Road sections are graph vertices, crossings are directed edges; the
forecaster combines path-aligned neighborhood convolution, order-wise
LSTMs, slot attention, and multi-horizon regression heads, trained with
an in-package reverse-mode autodiff core.
"""

__version__ = "0.1.0"

from .kernels import backend_name

__all__ = ["backend_name", "__version__"]
