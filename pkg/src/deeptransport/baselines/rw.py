"""Random-walk forecaster: current condition plus unit white noise."""

import numpy as np


def rw_predict(current_code, horizons, seed) -> np.ndarray:
    """One standard-normal perturbation of the current code per horizon."""
    rng = np.random.default_rng(seed)
    return float(current_code) + rng.standard_normal(len(list(horizons)))


def rw_predict_batch(current_codes, horizons, seed) -> np.ndarray:
    """Vectorized variant: one seeded stream, draws in sample order."""
    rng = np.random.default_rng(seed)
    codes = np.asarray(current_codes, dtype=np.float64)
    return codes[:, None] + rng.standard_normal((codes.size, len(list(horizons))))
