"""Streaming per-feature anomaly detection.

Pipeline: scalar values are encoded as sparse distributed
representations, pooled into a fixed-sparsity set of active columns,
predicted by a sequence memory, and the resulting prediction errors are
turned into a deviation likelihood via a Gaussian tail test.
"""

from .encoder import EncodingError, ScalarEncoderConfig, encode
from .spatial_pooler import SpatialPooler, SpatialPoolerConfig
from .temporal_memory import TemporalMemory, TemporalMemoryConfig
from .likelihood import AnomalyLikelihood, LikelihoodConfig, q_function
from .detector import (
    Detector,
    DetectorConfig,
    bootstrap,
    is_anomalous,
    load_detector,
    save_detector,
)

__all__ = [
    "AnomalyLikelihood",
    "Detector",
    "DetectorConfig",
    "EncodingError",
    "LikelihoodConfig",
    "ScalarEncoderConfig",
    "SpatialPooler",
    "SpatialPoolerConfig",
    "TemporalMemory",
    "TemporalMemoryConfig",
    "bootstrap",
    "encode",
    "is_anomalous",
    "load_detector",
    "q_function",
    "save_detector",
]
