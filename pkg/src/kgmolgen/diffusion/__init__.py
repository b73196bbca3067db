"""Score-based diffusion over molecular graphs."""
from .estimator import GraphScoreDiffusion, NonFiniteLossError, SampleResult
from .network import ScoreNetwork, symmetric_noise, timestep_embedding
from .schedule import DiffusionSchedule
from .sde import (
    analytic_gaussian_score,
    dsm_loss,
    forward_noise,
    reverse_sample,
    reverse_step,
    score_forward,
)

__all__ = [
    "DiffusionSchedule",
    "GraphScoreDiffusion",
    "NonFiniteLossError",
    "SampleResult",
    "ScoreNetwork",
    "analytic_gaussian_score",
    "dsm_loss",
    "forward_noise",
    "reverse_sample",
    "reverse_step",
    "score_forward",
    "symmetric_noise",
    "timestep_embedding",
]
