"""Temporal video grounding with static fusion and a Gaussian-filtered clip graph."""

from .data import GroundingSample, SynthConfig, generate, load_corpus, write_corpus
from .errors import GroundingError
from .estimator import GroundingEstimator
from .metrics import MetricReport, evaluate, nms, temporal_iou
from .model import ModelConfig, build_model

__version__ = "0.1.0"

__all__ = [
    "GroundingError", "GroundingEstimator", "GroundingSample", "MetricReport", "ModelConfig",
    "SynthConfig", "build_model", "evaluate", "generate", "load_corpus", "nms", "temporal_iou",
    "write_corpus",
]
