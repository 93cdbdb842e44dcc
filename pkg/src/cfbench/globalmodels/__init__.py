"""Cross-company forecasters: lagged linear regression, DLinear and NLinear."""

from .lag import LagMatrix, build_lag_matrix
from .linear_nets import LinearNet, moving_average_matrix, revin_denormalize, revin_normalize
from .linreg import LinearHead, fit_linreg, fit_quantile_linreg
from .models import (GLOBAL_MODELS, DLinearModel, GlobalModel, LinearRegressionModel,
                     NLinearModel, RevinForecaster, revin_wrap)
from .serialize import load_weights, save_weights
from .train import AdamW, TrainConfig, company_split, pinball_loss

__all__ = [
    "GLOBAL_MODELS",
    "GlobalModel",
    "LinearRegressionModel",
    "DLinearModel",
    "NLinearModel",
    "LagMatrix",
    "build_lag_matrix",
    "LinearHead",
    "fit_linreg",
    "fit_quantile_linreg",
    "LinearNet",
    "moving_average_matrix",
    "revin_normalize",
    "revin_denormalize",
    "RevinForecaster",
    "revin_wrap",
    "TrainConfig",
    "AdamW",
    "company_split",
    "pinball_loss",
    "save_weights",
    "load_weights",
]
