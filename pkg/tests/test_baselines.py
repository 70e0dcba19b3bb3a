"""Baseline forecasters: random walk, ARIMA (CSS + AIC grid), FNN, SAEs."""

import numpy as np
import pytest

from deeptransport.baselines import (
    ArimaFit,
    ArimaOrder,
    FnnConfig,
    SaesConfig,
    arima_fit,
    arima_forecast,
    arima_rolling_forecast,
    fnn_init,
    fnn_predict,
    fnn_train,
    rw_predict,
    rw_predict_batch,
    saes_predict,
    saes_train,
)
from deeptransport.errors import DataError
from deeptransport.metrics import rmse_by_time_of_day
from deeptransport.training import TrainConfig

from util import numeric_grad, rel_err


# ----------------------------------------------------------------------- RW


def test_rw_seeded_reproducibility():
    a = rw_predict(3, [3, 6, 9, 12], seed=42)
    b = rw_predict(3, [3, 6, 9, 12], seed=42)
    np.testing.assert_array_equal(a, b)
    assert a.shape == (4,)
    c = rw_predict(3, [3, 6, 9, 12], seed=43)
    assert not np.array_equal(a, c)


def test_rw_mean_and_variance():
    draws = rw_predict_batch(np.full(100_000, 2.0), [1], seed=0)[:, 0]
    assert abs(draws.mean() - 2.0) < 0.01
    assert abs(draws.var() - 1.0) < 0.02


def test_rw_batch_matches_sample_order():
    batch = rw_predict_batch([1, 4], [1, 2], seed=7)
    rng = np.random.default_rng(7)
    manual = np.array([1, 4], dtype=float)[:, None] + rng.standard_normal((2, 2))
    np.testing.assert_array_equal(batch, manual)


# -------------------------------------------------------------------- ARIMA


def test_arima_white_noise_selects_low_orders():
    rng = np.random.default_rng(1)
    series = rng.normal(loc=2.0, scale=1.0, size=800)
    fit = arima_fit(series, max_p=2, max_d=1, max_q=2)
    assert fit.order.p + fit.order.q <= 1
    fc = arima_forecast(fit, series, [1, 5, 10])
    np.testing.assert_allclose(fc, np.full(3, series.mean()), atol=0.25)


def test_arima_recovers_ar1_coefficient():
    rng = np.random.default_rng(2)
    n, phi = 2000, 0.8
    y = np.zeros(n)
    for t in range(1, n):
        y[t] = phi * y[t - 1] + rng.normal()
    fit = arima_fit(y, max_p=2, max_d=1, max_q=2)
    assert fit.order.p >= 1
    assert abs(fit.phi[0] - phi) < 0.1


def test_arima_constant_series():
    series = np.full(100, 3.0)
    fit = arima_fit(series, max_p=1, max_d=1, max_q=1)
    assert fit.order.d == 0
    fc = arima_forecast(fit, series, [1, 2, 3])
    np.testing.assert_allclose(fc, np.full(3, 3.0), atol=1e-8)


def test_arima_ar1_one_step_closed_form():
    rng = np.random.default_rng(3)
    y = np.zeros(500)
    for t in range(1, 500):
        y[t] = 1.0 + 0.6 * (y[t - 1] - 1.0) + 0.3 * rng.normal()
    fit = arima_fit(y, grid=[ArimaOrder(1, 0, 0)])
    mu = fit.mean
    phi = fit.phi[0]
    expect = mu + phi * (y[-1] - mu)
    got = arima_forecast(fit, y, [1])[0]
    np.testing.assert_allclose(got, expect, rtol=1e-10)


def test_arima_long_horizon_approaches_mean():
    rng = np.random.default_rng(4)
    y = np.zeros(800)
    for t in range(1, 800):
        y[t] = 2.0 + 0.5 * (y[t - 1] - 2.0) + rng.normal()
    fit = arima_fit(y, grid=[ArimaOrder(1, 0, 0)])
    far = arima_forecast(fit, y, [200])[0]
    np.testing.assert_allclose(far, fit.mean, atol=1e-3)


def test_arima_matches_manual_recursion_on_fixture():
    """Hand recursion of an ARMA(1,1) forecast from a 3-point tail."""
    phi, theta, mean = 0.5, 0.25, 1.0
    fit = ArimaFit(order=ArimaOrder(1, 0, 1), phi=np.array([phi]),
                   theta=np.array([theta]), mean=mean, sse=1.0, aic=0.0, n_obs=3)
    y = np.array([1.0, 2.0, 0.5])
    w = y - mean  # [0, 1, -0.5]
    e0 = w[0]
    e1 = w[1] - phi * w[0] - theta * e0
    e2 = w[2] - phi * w[1] - theta * e1
    w3 = phi * w[2] + theta * e2
    w4 = phi * w3
    got = arima_forecast(fit, y, [1, 2])
    np.testing.assert_allclose(got, [w3 + mean, w4 + mean], rtol=1e-12)


def test_arima_rolling_matches_single_origin():
    rng = np.random.default_rng(5)
    y = rng.normal(size=300).cumsum()  # d=1-ish series
    fit = arima_fit(y, max_p=2, max_d=2, max_q=1)
    origins = np.array([250, 260, 280])
    rolled = arima_rolling_forecast(fit, y, origins, [1, 3])
    for i, o in enumerate(origins):
        single = arima_rolling_forecast(fit, y, np.array([o]), [1, 3])[0]
        np.testing.assert_allclose(rolled[i], single, rtol=1e-12)


def test_arima_grid_enumeration_order_invariant():
    rng = np.random.default_rng(6)
    y = rng.normal(size=400)
    for t in range(1, 400):
        y[t] += 0.4 * y[t - 1]
    grid = [ArimaOrder(p, d, q) for p in range(3) for d in range(2) for q in range(3)]
    a = arima_fit(y, grid=list(grid))
    b = arima_fit(y, grid=list(reversed(grid)))
    assert a.order == b.order
    np.testing.assert_array_equal(a.phi, b.phi)
    np.testing.assert_array_equal(a.theta, b.theta)


def test_arima_series_too_short():
    with pytest.raises(DataError):
        arima_fit(np.ones(10))


def test_arima_order_bounds():
    with pytest.raises(ValueError):
        ArimaOrder(6, 0, 0)
    with pytest.raises(ValueError):
        ArimaOrder(0, 3, 0)


# ---------------------------------------------------------------------- FNN


def test_fnn_output_count_is_four_horizons():
    cfg = FnnConfig(history_len=12, hidden=32, horizons=(3, 6, 9, 12))
    params = fnn_init(cfg, seed=0)
    X = np.random.default_rng(0).integers(1, 5, size=(7, 13)).astype(float)
    out = fnn_predict(params, X)
    assert out.shape == (7, 4)
    assert params["fnn.W2"].data.shape == (32, 4)


def test_fnn_zero_input_zero_bias_predicts_zero():
    cfg = FnnConfig(history_len=3, hidden=8, horizons=(1, 2))
    params = fnn_init(cfg, seed=1)
    out = fnn_predict(params, np.zeros((5, 4)))
    np.testing.assert_array_equal(out, np.zeros((5, 2)))


def test_fnn_gradient_check():
    cfg = FnnConfig(history_len=2, hidden=3, horizons=(1, 2))
    params = fnn_init(cfg, seed=2)
    rng = np.random.default_rng(3)
    X = rng.normal(size=(4, 3))
    Y = rng.normal(size=(4, 2))
    M = np.ones((4, 2))

    from deeptransport.autodiff import Tape, Tensor
    from deeptransport.baselines.neural import _fnn_forward

    def build():
        t = Tape()
        pred = _fnn_forward(t, params, X)
        return t, t.squared_error(pred, Tensor(Y), M)

    tape, loss = build()
    grads = tape.backward(loss).named(params)
    for name, tensor in params.items():
        def f(x, tensor=tensor):
            old = tensor.data.copy()
            tensor.data[...] = x
            try:
                _, l2 = build()
            finally:
                tensor.data[...] = old
            return float(l2.data)

        err = rel_err(grads[name], numeric_grad(f, tensor.data.copy()))
        assert err < 1e-6, name


def test_fnn_training_reduces_loss():
    rng = np.random.default_rng(4)
    X = rng.integers(1, 5, size=(200, 4)).astype(float)
    Y = np.stack([X[:, 0] * 0.5 + 1.0, X[:, 1] - X[:, 2]], axis=1)
    M = np.ones_like(Y)
    cfg = FnnConfig(history_len=3, hidden=16, horizons=(1, 2))
    tcfg = TrainConfig(seed=5, batch_size=50, shard_size=50, workers=1,
                       max_epochs=100, max_steps=300, val_fraction=0.0)
    result = fnn_train(X, Y, M, cfg, tcfg, record_wall_time=False)
    assert result.log[-1]["train_loss"] < 0.25 * result.log[0]["train_loss"]


def test_fnn_rejects_wrong_width():
    cfg = FnnConfig(history_len=5, hidden=4, horizons=(1,))
    with pytest.raises(DataError):
        fnn_train(np.zeros((3, 4)), np.zeros((3, 1)), np.ones((3, 1)), cfg,
                  TrainConfig(seed=0, batch_size=3, max_epochs=1))


# --------------------------------------------------------------------- SAEs


def _saes_tiny_data(seed=0, n=120, dim=6):
    rng = np.random.default_rng(seed)
    c = rng.normal(size=(n, 1))
    v = rng.normal(size=(1, dim))
    X = 0.5 * c @ v  # rank-1 inputs
    Y = np.stack([X[:, 0] + X[:, 1], X[:, 2]], axis=1)
    return X, Y, np.ones_like(Y)


def test_saes_one_layer_rank1_reconstruction():
    X, Y, M = _saes_tiny_data()
    cfg = SaesConfig(input_dim=6, output_dim=2, layers=(8,))
    tcfg = TrainConfig(seed=1, batch_size=40, shard_size=40, workers=1,
                       max_epochs=200, max_steps=400, val_fraction=0.0)
    _, log = saes_train(X, Y, M, cfg, tcfg, tcfg, record_wall_time=False)
    recon = [r for r in log if r.get("phase") == "pretrain0"]
    assert recon[-1]["train_loss"] < 0.05 * recon[0]["train_loss"]
    assert recon[-1]["train_loss"] < 0.01


def test_saes_deterministic_and_shapes():
    X, Y, M = _saes_tiny_data(seed=2)
    cfg = SaesConfig(input_dim=6, output_dim=2, layers=(5, 4))
    tcfg = TrainConfig(seed=3, batch_size=60, shard_size=30, workers=1,
                       max_epochs=3, max_steps=6, val_fraction=0.0)
    p1, _ = saes_train(X, Y, M, cfg, tcfg, tcfg, record_wall_time=False)
    p2, _ = saes_train(X, Y, M, cfg, tcfg, tcfg, record_wall_time=False)
    for name, t in p1.items():
        np.testing.assert_array_equal(t.data, p2[name].data)
    out = saes_predict(p1, X, n_layers=2)
    assert out.shape == (X.shape[0], 2)


def test_saes_input_dim_mismatch():
    cfg = SaesConfig(input_dim=10, output_dim=2, layers=(4,))
    with pytest.raises(DataError):
        saes_train(np.zeros((5, 6)), np.zeros((5, 2)), np.ones((5, 2)), cfg,
                   TrainConfig(seed=0, batch_size=5, max_epochs=1),
                   TrainConfig(seed=0, batch_size=5, max_epochs=1))


# ------------------------------------------------- RW error profile fixture


def test_rw_rmse_curve_has_two_rush_peaks():
    """On two-peak synthetic data the random walk's errors spike at both
    rush periods (conditions change fastest there)."""
    from deeptransport.synth import SynthConfig, synth_generate

    _, store = synth_generate(SynthConfig(seed=11, n_vertices=60, days=7))
    h = 3
    grid = store.grid
    T = store.n_steps
    truth = grid[:, h:].reshape(-1).astype(float)
    current = grid[:, :-h].reshape(-1).astype(float)
    rng = np.random.default_rng(0)
    pred = current + rng.standard_normal(current.size)
    minutes = np.tile([(t * 5) % 1440 for t in range(T - h)], grid.shape[0])
    curve = rmse_by_time_of_day(truth, pred, minutes, bin_minutes=60)
    hours = {k // 60: v for k, v in curve.items()}
    morning = max(hours[t] for t in range(6, 13))
    evening = max(hours[t] for t in range(16, 23))
    night = min(hours[t] for t in range(0, 6))
    midday = min(hours[t] for t in range(12, 16))
    assert morning > night * 1.02 and morning > midday
    assert evening > night * 1.02 and evening > midday
