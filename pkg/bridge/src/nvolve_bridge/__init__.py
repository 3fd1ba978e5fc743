"""Adapter from exported embedding trajectories to image files."""

__version__ = "0.1.0"

from .bridge import BridgeJob, RenderedImage, render_trajectory
from .generators import GeneratorSetupError, ProceduralGenerator, load_generator
from .manifest import HandoffError, SampledEmbedding, load_handoff
from .nvtf import TensorFormatError, read_array

__all__ = [
    "BridgeJob",
    "RenderedImage",
    "render_trajectory",
    "GeneratorSetupError",
    "ProceduralGenerator",
    "load_generator",
    "HandoffError",
    "SampledEmbedding",
    "load_handoff",
    "TensorFormatError",
    "read_array",
]
