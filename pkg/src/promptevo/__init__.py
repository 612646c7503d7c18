"""Prompt evolution for promptable segmentation models.

Moves a click prompt by gradient ascent on a learned segmentation-quality
regressor, with a differentiable reference segmenter and synthetic phantoms
for desk-scale experiments.
"""
from .field import Prompt, bilinear_sample, centroid, dice, pearson, signed_distance_transform
from .segmenter import SegmenterConfig, SurrogateSegmenter, segment, sharpen
from .evolve import EvolveConfig, Trajectory, evolve, initial_prompt, score_and_grad

__version__ = "0.1.0"

__all__ = [
    "EvolveConfig",
    "Prompt",
    "SegmenterConfig",
    "SurrogateSegmenter",
    "Trajectory",
    "bilinear_sample",
    "centroid",
    "dice",
    "evolve",
    "initial_prompt",
    "pearson",
    "score_and_grad",
    "segment",
    "sharpen",
    "signed_distance_transform",
]
