"""Maximum-likelihood (MLPP) and harmonic-mean (HMPP) point-process training."""
from .core import (Dataset, EventRecord, EventSequence, PiecewiseConstantPath, TimeGrid, count_events_in,
                   parse_event_stream, path_integral, serialize_event_stream)
from .models import ModelParams, OracleModel, init_params, predict_rate_path
from .objectives import (IntervalWeights, WeightingConfig, adjusted_log_likelihood, compute_weights,
                         effective_sample_size, interval_weight, log_likelihood)
from .simulator import SimConfig, simulate_dataset
from .trainer import TrainConfig, TrainReport, train

__all__ = [
    "Dataset", "EventRecord", "EventSequence", "PiecewiseConstantPath", "TimeGrid", "count_events_in",
    "parse_event_stream", "path_integral", "serialize_event_stream", "ModelParams", "OracleModel",
    "init_params", "predict_rate_path", "IntervalWeights", "WeightingConfig", "adjusted_log_likelihood",
    "compute_weights", "effective_sample_size", "interval_weight", "log_likelihood", "SimConfig",
    "simulate_dataset", "TrainConfig", "TrainReport", "train",
]
