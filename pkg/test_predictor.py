import math

import numpy as np
import pytest

from app.core.errors import ForecastUsageError
from app.models.forecast_schema import FORECAST_METHODS, Forecast, ForecastConfig
from app.services.predictor_service import (
    eval_l1,
    postprocess,
    predict,
    preemption_hazard,
    preprocess,
    sliding_window_eval,
)
from app.services.trace_service import gen_synthetic


def _config(**kwargs) -> ForecastConfig:
    kwargs.setdefault("capacity", 32)
    return ForecastConfig(**kwargs)


# ============================================================
# PREPROCESS
# ============================================================

def test_single_interval_spike_is_flattened():
    assert preprocess([8, 8, 20, 8, 8]) == [8, 8, 8, 8, 8]


def test_two_interval_spike_is_flattened():
    assert preprocess([8, 8, 3, 3, 8, 8]) == [8] * 6


def test_flat_history_is_unchanged():
    assert preprocess([8, 8, 8, 8, 8]) == [8, 8, 8, 8, 8]


def test_only_suffix_after_last_hop_is_kept():
    # the 25 spike goes first, then everything before the jump to 16 is dropped
    assert preprocess([4, 4, 4, 16, 16, 16, 16, 25, 16, 16]) == [16] * 10


def test_unstable_tail_keeps_whole_window():
    assert preprocess([4, 4, 4, 16, 16, 16, 9, 10]) == [4, 4, 4, 16, 16, 16, 9, 10]


def test_preprocess_rejects_empty_history():
    with pytest.raises(ForecastUsageError):
        preprocess([])


# ============================================================
# POSTPROCESS
# ============================================================

def test_clamp_to_capacity():
    config = _config(lookahead_len=2)
    assert postprocess([40.2, 41.7], config, last_observed=32).values == [32, 32]


def test_last_observed_repeated_is_unchanged():
    config = _config(lookahead_len=3)
    assert postprocess([16.0, 16.0, 16.0], config, last_observed=16).values == [16, 16, 16]


def test_wild_first_step_resets_to_last_value():
    config = _config(lookahead_len=3, reset_threshold=10)
    assert postprocess([5, 5, 5], config, last_observed=20).values == [20, 20, 20]


def test_steep_steps_are_damped():
    config = _config(lookahead_len=1)
    # 10 over the steep threshold of 4 only counts half: 4 + 6 * 0.5 = 7
    assert postprocess([20.0], config, last_observed=10).values == [17]


def test_steps_are_capped_at_max_step():
    config = _config(lookahead_len=3, max_step=2, reset_threshold=32)
    values = postprocess([30.0, 30.0, 30.0], config, last_observed=20).values
    assert values == [22, 24, 26]


def test_floor_bounds_forecast():
    config = _config(lookahead_len=2, floor=4)
    assert postprocess([3.0, 2.0], config, last_observed=5).values == [4, 4]


def test_raw_length_must_match_lookahead():
    with pytest.raises(ForecastUsageError):
        postprocess([1.0], _config(lookahead_len=2), last_observed=1)


# ============================================================
# PREDICT
# ============================================================

@pytest.mark.parametrize("method", FORECAST_METHODS)
def test_constant_history_is_a_fixed_point(method):
    config = _config(history_len=12, lookahead_len=12)
    assert predict([16] * 12, config, method).values == [16] * 12


def test_arima_ramp_stays_within_capacity():
    config = _config(history_len=12, lookahead_len=12)
    forecast = predict(list(range(10, 33, 2)), config, "arima")
    assert len(forecast.values) == 12
    assert all(0 <= v <= 32 for v in forecast.values)


@pytest.mark.parametrize("seed", range(5))
def test_forecasts_respect_bounds_and_step_limit(seed):
    series = gen_synthetic(seed, 24, 80, 15, 12, magnitude_range=(1, 8))
    config = _config(capacity=24, history_len=12, lookahead_len=8, max_step=3)
    for start in range(0, 60, 7):
        history = series.counts[start: start + 12]
        for method in FORECAST_METHODS:
            values = [history[-1]] + predict(history, config, method).values
            assert all(0 <= v <= 24 for v in values)
            assert all(abs(b - a) <= 3 for a, b in zip(values, values[1:]))


def test_arima_follows_sustained_ramp():
    config = _config(history_len=12, lookahead_len=4)
    values = predict(list(range(2, 25, 2)), config, "arima").values
    assert values[0] > 24
    assert values == sorted(values)


def test_arima_holds_level_after_isolated_jumps():
    config = _config(history_len=12, lookahead_len=6)
    history = [20, 20, 18, 18, 18, 15, 15, 16, 17, 17, 12, 12]
    assert predict(history, config, "arima").values == [12] * 6
    # a short run of drops is not a trend
    assert predict([20] * 8 + [19, 18, 17, 16], config, "arima").values == [16] * 6


def test_short_trend_window_falls_back_with_warning(log_messages):
    config = _config(history_len=3, lookahead_len=2, trend_min_run=1)
    assert predict([1, 2, 3], config, "arima").values == [3, 3]
    assert any(m.startswith("WARNING predictor_service: ARIMA window") for m in log_messages)


def test_predict_is_deterministic():
    history = [20, 20, 18, 18, 18, 15, 15, 16, 17, 17, 12, 12]
    config = _config(history_len=12, lookahead_len=4)
    assert predict(history, config) == predict(history, config)


def test_baselines():
    history = [10, 10, 12, 14]
    config = _config(history_len=4, lookahead_len=2, ma_window=2, max_step=32, smoothing_alpha=0.5)
    assert predict(history, config, "last_value").values == [14, 14]
    assert predict(history, config, "moving_avg").values == [13, 13]
    # 10 -> 10 -> 11 -> 12.5, rounded half to even
    assert predict(history, config, "exp_smooth").values == [12, 12]


def test_predict_rejects_short_or_out_of_range_history():
    config = _config(history_len=12, lookahead_len=2)
    with pytest.raises(ForecastUsageError):
        predict([5] * 11, config)
    with pytest.raises(ForecastUsageError):
        predict([5] * 11 + [40], config)
    with pytest.raises(ForecastUsageError):
        predict([5] * 12, config, "neural")


def test_preemption_hazard_from_drops():
    hazard = preemption_hazard([32, 30, 30, 31, 27, 27, 27, 28, 28])
    assert hazard.probability == pytest.approx(2 / 8)
    assert hazard.size == 3
    assert preemption_hazard([28, 29, 30, 30]) is None
    assert preemption_hazard([5, 4]).size == 1
    with pytest.raises(ForecastUsageError):
        preemption_hazard([5])


# ============================================================
# EVALUATION
# ============================================================

def test_eval_l1():
    assert eval_l1(Forecast(values=[10, 10]), [10, 10]) == 0.0
    assert eval_l1(Forecast(values=[0, 0]), [10, 10]) == 1.0
    assert eval_l1(Forecast(values=[9, 11]), [10, 10]) == pytest.approx(0.1)
    assert eval_l1(Forecast(values=[0, 0]), [0, 0]) == 0.0
    assert eval_l1(Forecast(values=[1, 0]), [0, 0]) == math.inf


def test_eval_l1_length_mismatch():
    with pytest.raises(ForecastUsageError):
        eval_l1(Forecast(values=[1]), [1, 2])


def test_sliding_window_eval_covers_every_window():
    series = gen_synthetic(4, 16, 30, 4, 4)
    config = _config(capacity=16, history_len=12, lookahead_len=4)
    rows = sliding_window_eval(series, config, ["arima", "last_value"])
    assert len(rows) == 2 * (30 - 12 - 4 + 1)
    assert {r["method"] for r in rows} == {"arima", "last_value"}


@pytest.mark.parametrize("lookahead", [4, 12])
def test_arima_no_worse_than_last_value_on_bursty_suite(lookahead):
    config = _config(capacity=32, history_len=12, lookahead_len=lookahead)
    scores = {"arima": [], "last_value": []}
    for seed in range(6):
        series = gen_synthetic(seed, 32, 120, 12, 10)
        for row in sliding_window_eval(series, config, ["arima", "last_value"]):
            scores[row["method"]].append(row["l1"])
    assert np.mean(scores["arima"]) <= np.mean(scores["last_value"])
