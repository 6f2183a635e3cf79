"""State-space forecasting with mean reversion towards an attractor distribution."""

from .core import (
    GaussianBelief,
    Prediction,
    StateSpaceModel,
    discretize,
    filter_sequence,
    forecast,
    predict,
    rts_smooth,
    update,
)
from .data import SplitSpec, SyntheticSpec, TimeSeries, generate_synthetic, load_csv, resample_handheld, split, write_csv
from .evaluation import AttractorSettings, ModelVariant, choose_starts, nrmse, nrmse_per_sample, run_protocol
from .meanrev import AttractorDistribution, build_attractor, forecast_with_reversion, reversion_settling_report
from .models import StructuralSpec, attractor_emission, build_model, initial_belief

__version__ = "0.1.0"
