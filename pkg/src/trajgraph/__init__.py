"""Temporal scene-graph trajectory prediction on numpy."""

from .encoder import ModelConfig
from .model import TrajectoryModel
from .scene import Scene, SynthConfig, load_scene, save_scene, synth_scene

__version__ = "0.1.0"

__all__ = ["ModelConfig", "Scene", "SynthConfig", "TrajectoryModel", "load_scene", "save_scene",
           "synth_scene"]
