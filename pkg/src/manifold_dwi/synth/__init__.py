"""Synthetic phantoms and the toy T1 to diffusion synthesis model."""

from .model import ManifoldCycleGAN, TrainConfig, TrainingDivergedError, train_toy
from .phantom import Phantom, PhantomSpec, phantom_gen

__all__ = [
    "ManifoldCycleGAN",
    "Phantom",
    "PhantomSpec",
    "TrainConfig",
    "TrainingDivergedError",
    "phantom_gen",
    "train_toy",
]
