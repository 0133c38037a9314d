"""Confidence-guided layer skipping for lossless self-speculative decoding."""

from .confidence import ConfidenceProfile, build_profile, confidence_from_logits, layer_confidence
from .errors import (
    CapacityError,
    ConfigError,
    ConfLayersError,
    InvalidInputError,
    StateError,
    TraceParseError,
    UndefinedMetricError,
)
from .layer_filter import FilterConfig, FilterResult, SkipSet, run_filter, select_skip_layers
from .metrics import (
    RunStats,
    acceptance_rate,
    mean_accepted,
    metrics_report,
    rouge2,
    skip_rate,
    speedup_estimate,
)
from .search import Decision, FixedController, SearchConfig, SearchController, SearchState
from .spec_decode import (
    DraftConfig,
    draft_step,
    generate,
    greedy_decode,
    uniform_initial_skip_set,
    verify_step,
)

__version__ = "0.1.0"

__all__ = [
    "CapacityError",
    "ConfLayersError",
    "ConfidenceProfile",
    "ConfigError",
    "Decision",
    "DraftConfig",
    "FilterConfig",
    "FilterResult",
    "FixedController",
    "InvalidInputError",
    "RunStats",
    "SearchConfig",
    "SearchController",
    "SearchState",
    "SkipSet",
    "StateError",
    "TraceParseError",
    "UndefinedMetricError",
    "acceptance_rate",
    "build_profile",
    "confidence_from_logits",
    "draft_step",
    "generate",
    "greedy_decode",
    "layer_confidence",
    "mean_accepted",
    "metrics_report",
    "rouge2",
    "run_filter",
    "select_skip_layers",
    "skip_rate",
    "speedup_estimate",
    "uniform_initial_skip_set",
    "verify_step",
]
