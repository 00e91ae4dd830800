"""Video shadow detection: promptable first-frame segmentation, then
memory-based propagation across the video."""

from .data_io import RunConfig, ShadowMask, VideoSequence, load_config
from .prompt_gen import BoxPrompt

__all__ = [
    "BoxPrompt",
    "RunConfig",
    "ShadowMask",
    "VideoSequence",
    "load_config",
]

__version__ = "0.1.0"
