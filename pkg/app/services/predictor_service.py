# app/services/predictor_service.py

import math
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy import linalg

from app.core.errors import ForecastUsageError
from app.core.logger import get_logger
from app.models.forecast_schema import FORECAST_METHODS, Forecast, ForecastConfig, PreemptionHazard
from app.models.trace_schema import IntervalSeries

logger = get_logger("predictor_service")

# ARIMA(p, d, q) order used for every window
AR_ORDER = 2
DIFF_ORDER = 1
MA_ORDER = 2
# long AR used to estimate innovations in the first least-squares pass
LONG_AR_ORDER = 4


# ============================================================
# PRE / POST PROCESSING
# ============================================================

def _flatten_spikes(values: List[int]) -> List[int]:
    """Replace runs of 1-2 intervals bounded by the same level on both sides."""
    out = list(values)
    i = 1
    while i < len(out) - 1:
        for width in (1, 2):
            j = i + width
            if j >= len(out):
                continue
            left, right = out[i - 1], out[j]
            run = out[i:j]
            if left == right and all(v != left for v in run):
                out[i:j] = [left] * width
                break
        i += 1
    return out


def _last_hop(values: List[int], min_plateau: int) -> int:
    """Index where the last stable plateau begins, if it follows another stable plateau."""
    runs = []
    start = 0
    for k in range(1, len(values) + 1):
        if k == len(values) or values[k] != values[start]:
            runs.append((start, k - start))
            start = k
    stable = [r for r in runs if r[1] >= min_plateau]
    if len(stable) >= 2 and stable[-1] == runs[-1]:
        return stable[-1][0]
    return 0


def preprocess(history: Sequence[int], min_plateau: int = 3) -> List[int]:
    """
    Flatten short spikes, then keep only the part of the window after the
    last level shift ("hop") between stable plateaus, padded back to the
    window length by repeating its first value.
    """
    if len(history) == 0:
        raise ForecastUsageError("cannot preprocess an empty history")
    flat = _flatten_spikes([int(v) for v in history])
    cut = _last_hop(flat, min_plateau)
    suffix = flat[cut:]
    return [suffix[0]] * (len(flat) - len(suffix)) + suffix


def postprocess(raw: Sequence[float], config: ForecastConfig, last_observed: int) -> Forecast:
    """
    Turn a raw model trajectory into a bounded integer forecast: reset to
    the last observation on a wild first step, clamp to [floor, capacity],
    damp steep steps and cap each step at max_step.
    """
    if len(raw) != config.lookahead_len:
        raise ForecastUsageError(f"raw forecast has {len(raw)} values, expected {config.lookahead_len}")
    anchor = min(max(int(last_observed), config.floor), config.capacity)
    if raw and abs(round(raw[0]) - last_observed) > config.reset_threshold:
        logger.debug(f"Forecast reset: first value {raw[0]:.1f} vs last observed {last_observed}")
        return Forecast(values=[anchor] * len(raw))

    values = []
    prev = anchor
    for value in raw:
        target = min(max(round(value), config.floor), config.capacity)
        delta = target - prev
        size = abs(delta)
        if size > config.steep_threshold:
            size = config.steep_threshold + (size - config.steep_threshold) * config.steep_penalty
        size = min(int(size), config.max_step)
        prev = prev + (size if delta > 0 else -size)
        values.append(prev)
    return Forecast(values=values)


# ============================================================
# MODELS
# ============================================================

def _lagged(series: np.ndarray, lags: int, start: int) -> np.ndarray:
    return np.column_stack([series[start - k: len(series) - k] for k in range(1, lags + 1)])


def _fit_arima(window: List[int], steps: int, damping: float = 1.0) -> List[float]:
    """
    ARIMA(2,1,2) by two least-squares passes (Hannan-Rissanen): a long AR
    fit estimates innovations, then the differenced series is regressed on
    its own lags and lagged innovations. The h-th forecast difference is
    scaled by damping**h before it is added to the level.
    """
    y = np.diff(np.asarray(window, dtype=float), n=DIFF_ORDER)
    n = len(y)
    m = min(LONG_AR_ORDER, max(1, n // 2 - 1))
    if n <= m + 1:
        logger.warning(f"ARIMA window of {len(window)} values too short to fit, falling back to last value")
        return [float(window[-1])] * steps

    # pass 1: long AR for residuals
    X_long = _lagged(y, m, m)
    coef_long, *_ = linalg.lstsq(X_long, y[m:])
    resid = np.zeros(n)
    resid[m:] = y[m:] - X_long @ coef_long

    # pass 2: AR + MA regression on lagged values and lagged residuals
    start = m + MA_ORDER
    if n - start >= 1:
        X = np.hstack([_lagged(y, AR_ORDER, start), _lagged(resid, MA_ORDER, start)])
        coef, *_ = linalg.lstsq(X, y[start:])
        phi, theta = coef[:AR_ORDER], coef[AR_ORDER:]
    else:
        phi, theta = coef_long[:AR_ORDER], np.zeros(MA_ORDER)

    hist_y = list(y)
    hist_e = list(resid)
    level = float(window[-1])
    out = []
    for h in range(1, steps + 1):
        ar = sum(phi[k] * hist_y[-1 - k] for k in range(min(AR_ORDER, len(hist_y))))
        ma = sum(theta[k] * hist_e[-1 - k] for k in range(min(MA_ORDER, len(hist_e))))
        step = ar + ma
        hist_y.append(step)
        hist_e.append(0.0)
        level += step * damping**h
        out.append(level)
    if not np.all(np.isfinite(out)):
        logger.warning("ARIMA fit diverged, falling back to last value")
        return [float(window[-1])] * steps
    return out


def _sustained_trend(window: Sequence[int], run: int) -> bool:
    """True when the last `run` changes all move in the same direction."""
    if len(window) <= run:
        return False
    steps = np.diff(np.asarray(window[-(run + 1):]))
    return bool((steps > 0).all() or (steps < 0).all())


def _raw_forecast(history: List[int], config: ForecastConfig, method: str) -> List[float]:
    steps = config.lookahead_len
    last = float(history[-1])
    if method == "last_value":
        return [last] * steps
    if method == "moving_avg":
        return [float(np.mean(history[-config.ma_window:]))] * steps
    if method == "exp_smooth":
        level = float(history[0])
        for v in history[1:]:
            level = config.smoothing_alpha * v + (1 - config.smoothing_alpha) * level
        return [level] * steps
    # arima
    window = preprocess(history, config.min_plateau)
    if not _sustained_trend(window, config.trend_min_run):
        # plateaus and isolated jumps carry no drift
        return [last] * steps
    return _fit_arima(window, steps, config.trend_damping)


def predict(history: Sequence[int], config: ForecastConfig, method: str = "arima") -> Forecast:
    """Forecast the next lookahead_len availability counts from the last history_len ones."""
    if method not in FORECAST_METHODS:
        raise ForecastUsageError(f"unknown forecast method '{method}'")
    if len(history) < config.history_len:
        raise ForecastUsageError(f"history has {len(history)} values, need at least {config.history_len}")
    window = [int(v) for v in history[-config.history_len:]]
    for v in window:
        if v < 0 or v > config.capacity:
            raise ForecastUsageError(f"history value {v} outside [0, {config.capacity}]")
    raw = _raw_forecast(window, config, method)
    forecast = postprocess(raw, config, window[-1])
    return Forecast(values=forecast.values, method=method)


def preemption_hazard(history: Sequence[int]) -> Optional[PreemptionHazard]:
    """
    Share of transitions in the window that lost instances, with the mean
    loss rounded to whole instances. None when the window saw no drop.
    """
    steps = np.diff(np.asarray(history, dtype=int))
    if len(steps) == 0:
        raise ForecastUsageError("need at least two values to estimate a preemption hazard")
    drops = -steps[steps < 0]
    if len(drops) == 0:
        return None
    return PreemptionHazard(probability=len(drops) / len(steps), size=max(1, int(round(float(drops.mean())))))


# ============================================================
# EVALUATION
# ============================================================

def eval_l1(predicted: Forecast, actual: Sequence[int]) -> float:
    """Normalized L1 distance: sum |pred - actual| / sum actual."""
    values = predicted.values
    if len(values) != len(actual):
        raise ForecastUsageError(f"length mismatch: {len(values)} predicted vs {len(actual)} actual")
    error = sum(abs(p - a) for p, a in zip(values, actual))
    total = sum(actual)
    if total == 0:
        return 0.0 if all(p == 0 for p in values) else math.inf
    return error / total


def sliding_window_eval(series: IntervalSeries, config: ForecastConfig, methods: Sequence[str] = FORECAST_METHODS) -> List[Dict]:
    """Score every full (history, lookahead) window of a series for each method."""
    H, I = config.history_len, config.lookahead_len
    rows = []
    for start in range(0, len(series.counts) - H - I + 1):
        history = series.counts[start: start + H]
        actual = series.counts[start + H: start + H + I]
        for method in methods:
            forecast = predict(history, config, method)
            rows.append({
                "window_start": start,
                "method": method,
                "forecast": forecast.values,
                "actual": list(actual),
                "l1": eval_l1(forecast, actual),
            })
    return rows
