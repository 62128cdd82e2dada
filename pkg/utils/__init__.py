"""
CTAL-VAE Utilities Package
Logging, configuration loading and file output helpers
"""

__version__ = "1.0.0"

from .file_manager import FileManager
from .logger import setup_logger, get_logger, LoggerContext, log_performance
from .config_loader import ConfigLoader

__all__ = [
    'FileManager',
    'setup_logger',
    'get_logger',
    'LoggerContext',
    'log_performance',
    'ConfigLoader',
]
