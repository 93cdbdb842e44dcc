"""Benchmark toolkit for forecasting quarterly company fundamentals.

Subpackages and modules:

``panel``         quarterly panel data model and CSV IO
``preprocess``    domain normalization, outlier purge, z-scoring and inversion
``local``         per-series forecasters (Mean, ARMean, ARIMA family, Theta, trend)
``globalmodels``  cross-company forecasters (lagged regression, DLinear, NLinear)
``prob``          quantile distributions, sampling and CRPS
``metrics``       point-forecast error metrics
``harness``       expanding-origin evaluation and aggregation
``backtest``      factor portfolio simulation
``synth``         synthetic panels, synthetic markets and dataset profiling
``cli``           command-line entry point
"""

__version__ = "0.1.0"

from .harness import ModelSpec, ResultStore, make_folds, run_experiment  # noqa: E402
from .panel import Dataset, FeatureSpec, QuarterId, load_csv  # noqa: E402

__all__ = ["__version__", "Dataset", "FeatureSpec", "QuarterId", "load_csv", "ModelSpec",
           "ResultStore", "make_folds", "run_experiment"]
