"""
CTAL-VAE
Few-shot cross-domain anomaly detection for network flows with a shared
LSTM VAE core and per-domain adaptors
"""

__version__ = "1.0.0"

from .checkpoint import ModelBundle, ModelKind, load_bundle, save_bundle
from .errors import CtalVaeError, DataValidationError
from .pipeline import (
    Metrics,
    TrainConfig,
    adapt_target,
    classify,
    evaluate,
    fit_threshold,
    score,
    train_source,
)

__all__ = [
    'ModelBundle',
    'ModelKind',
    'load_bundle',
    'save_bundle',
    'CtalVaeError',
    'DataValidationError',
    'Metrics',
    'TrainConfig',
    'adapt_target',
    'classify',
    'evaluate',
    'fit_threshold',
    'score',
    'train_source',
]
