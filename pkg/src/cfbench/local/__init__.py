"""Univariate per-series forecasters."""

from .arima import ARIMAModel, ARMAModel, AutoARIMAModel, auto_arima, fit_arma, forecast_arma
from .base import LocalForecast, LocalModel
from .baselines import ARMeanModel, MeanModel, fit_armean, fit_mean
from .theta import AutoThetaModel, ThetaModel, fit_theta
from .trend import TrendModel, fit_trend

LOCAL_MODELS = {
    cls.name: cls
    for cls in (MeanModel, ARMeanModel, ARMAModel, ARIMAModel, AutoARIMAModel,
                ThetaModel, AutoThetaModel, TrendModel)
}

__all__ = [
    "LOCAL_MODELS",
    "LocalForecast",
    "LocalModel",
    "MeanModel",
    "ARMeanModel",
    "ARMAModel",
    "ARIMAModel",
    "AutoARIMAModel",
    "ThetaModel",
    "AutoThetaModel",
    "TrendModel",
    "fit_mean",
    "fit_armean",
    "fit_arma",
    "forecast_arma",
    "auto_arima",
    "fit_theta",
    "fit_trend",
]
