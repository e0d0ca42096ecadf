# app/models/forecast_schema.py

from typing import List, Literal

from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.core.config import settings

ForecastMethod = Literal["arima", "moving_avg", "exp_smooth", "last_value"]
FORECAST_METHODS = ("arima", "moving_avg", "exp_smooth", "last_value")


class ForecastConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    history_len: int = Field(default=settings.HISTORY_LEN, ge=3)
    lookahead_len: int = Field(default=settings.LOOKAHEAD_LEN, ge=1)
    capacity: int = Field(ge=0)
    floor: int = Field(default=0, ge=0)
    max_step: int = Field(default=settings.MAX_STEP, ge=1)
    reset_threshold: int = Field(default=settings.RESET_THRESHOLD, ge=0)
    # steps beyond steep_threshold only count steep_penalty of their excess
    steep_threshold: float = Field(default=4.0, ge=0)
    steep_penalty: float = Field(default=0.5, ge=0, le=1)
    ma_window: int = Field(default=settings.MA_WINDOW, ge=1)
    smoothing_alpha: float = Field(default=settings.SMOOTHING_ALPHA, gt=0, le=1)
    min_plateau: int = Field(default=3, ge=2)
    # arima extrapolates only after this many same-direction changes in a row
    trend_min_run: int = Field(default=5, ge=1)
    trend_damping: float = Field(default=0.8, gt=0, le=1)

    @model_validator(mode="after")
    def _floor_below_capacity(self):
        if self.floor > self.capacity:
            raise ValueError(f"floor {self.floor} exceeds capacity {self.capacity}")
        return self


class Forecast(BaseModel):
    model_config = ConfigDict(frozen=True)

    values: List[int]
    method: ForecastMethod = "arima"


class PreemptionHazard(BaseModel):
    """Chance that an interval loses `size` instances even when the forecast is flat."""

    model_config = ConfigDict(frozen=True)

    probability: float = Field(ge=0, le=1)
    size: int = Field(ge=1)
