"""Comparison forecasters behind one predict-then-project contract.

Every baseline emits continuous per-horizon predictions for the same
test samples as the main network, so one projection + kappa pipeline
serves all of them.
"""

from .arima import ArimaFit, ArimaOrder, arima_fit, arima_forecast, arima_rolling_forecast
from .neural import (
    FnnConfig,
    SaesConfig,
    fnn_init,
    fnn_predict,
    fnn_train,
    saes_predict,
    saes_train,
)
from .rw import rw_predict, rw_predict_batch

BASELINE_NAMES = ("rw", "arima", "fnn", "saes")

__all__ = [
    "ArimaFit", "ArimaOrder", "arima_fit", "arima_forecast", "arima_rolling_forecast",
    "FnnConfig", "SaesConfig", "fnn_init", "fnn_predict", "fnn_train",
    "saes_predict", "saes_train", "rw_predict", "rw_predict_batch",
    "BASELINE_NAMES",
]
