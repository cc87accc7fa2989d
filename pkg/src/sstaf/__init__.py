"""Spatial-spectral-temporal attention fusion for motor-imagery EEG decoding."""

from .config import PipelineConfig, load_config
from .model import ModelConfig, SstafModel
from .stft import StftConfig
from .train import TrainConfig

__all__ = ["PipelineConfig", "load_config", "ModelConfig", "SstafModel", "StftConfig", "TrainConfig"]
__version__ = "0.1.0"
