"""Mode-pairing measurement-device-independent QKD: simulation and analysis."""

from .core import (
    ClickBatch,
    CombinedClass,
    DomainError,
    IntensityClass,
    InvalidParams,
    PMPError,
    ProtocolParams,
    binary_entropy,
    validate_params,
)
from .pairing import PairingConfig, filter_clicks, pair_neighbors
from .pipeline import Analyzer, analyze_stream, key_analysis, qber_sweep
from .presets import PRESET_NAMES, get_preset, load_presets
from .security import decoy_estimate, secure_key_rate, skc0
from .sifting import TallyReport, tally
from .simulator import ChannelModel, PhaseNoiseModel, iter_simulate, simulate

__version__ = "0.1.0"

__all__ = [
    "ClickBatch",
    "CombinedClass",
    "DomainError",
    "IntensityClass",
    "InvalidParams",
    "PMPError",
    "ProtocolParams",
    "binary_entropy",
    "validate_params",
    "PairingConfig",
    "filter_clicks",
    "pair_neighbors",
    "Analyzer",
    "analyze_stream",
    "key_analysis",
    "qber_sweep",
    "PRESET_NAMES",
    "get_preset",
    "load_presets",
    "decoy_estimate",
    "secure_key_rate",
    "skc0",
    "TallyReport",
    "tally",
    "ChannelModel",
    "PhaseNoiseModel",
    "iter_simulate",
    "simulate",
]
