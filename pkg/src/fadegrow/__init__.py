"""Discrete diffusion over item preferences: fading, growing and score-entropy training."""

from . import errors, evaldata, fading, losses, process, sampler, schedule, scorenet, train
from .errors import FadeGrowError

__all__ = ["errors", "evaldata", "fading", "losses", "process", "sampler", "schedule", "scorenet",
           "train", "FadeGrowError"]
__version__ = "0.1.0"
