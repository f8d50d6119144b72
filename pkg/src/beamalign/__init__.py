"""Adaptive mmWave beam alignment as noisy twenty-questions estimation."""

from .geometry import AngleGrid, Query, steering_vector
from .channel import ChannelParams, QueryDependentChannel
from .questioner import AlignmentConfig, TrialResult, run_alignment
from .experiment import ExperimentConfig, run_experiment

__all__ = [
    "AngleGrid", "Query", "steering_vector",
    "ChannelParams", "QueryDependentChannel",
    "AlignmentConfig", "TrialResult", "run_alignment",
    "ExperimentConfig", "run_experiment",
]

__version__ = "0.1.0"
