"""Cross-asset EMA sign-signal backtester for a single traded future."""

from .errors import ConfigError, ConvbtError, DataError, InvariantViolation
from .market_data import AlignedPanel, CsvSchema, RawPriceSeries, RebasedPanel, align_panel, parse_price_csv, rebase
from .runner import BacktestConfig, StrategyResult, max_drawdown, run_grid, run_scenario
from .selection import combine_equal_weight, select_forecasters, sharpe_ratio, vol_target
from .signals import discrete_convolution, ema, forecaster_track, sign_signal
from .synth import SynthSpec, generate_panel, reference_pipeline

__version__ = "0.1.0"

__all__ = [
    "AlignedPanel",
    "BacktestConfig",
    "ConfigError",
    "ConvbtError",
    "CsvSchema",
    "DataError",
    "InvariantViolation",
    "RawPriceSeries",
    "RebasedPanel",
    "StrategyResult",
    "SynthSpec",
    "align_panel",
    "combine_equal_weight",
    "discrete_convolution",
    "ema",
    "forecaster_track",
    "generate_panel",
    "max_drawdown",
    "parse_price_csv",
    "rebase",
    "reference_pipeline",
    "run_grid",
    "run_scenario",
    "select_forecasters",
    "sharpe_ratio",
    "sign_signal",
    "vol_target",
]
