"""Reward-driven fine-tuning of the diffusion sampler."""
from .policy import (FinetuneResult, NonFiniteGradientError, RewardNormalizer, Trajectory,
                     collect_trajectories, ddpo_finetune, log_prob_oneshot, log_prob_step,
                     policy_gradient, policy_gradient_modified)
from .rewards import (PROFILES, RewardWeights, novelty_term, profile, q_proxy, reward,
                      ring_count, s_proxy, training_fingerprints)

__all__ = [
    "FinetuneResult", "NonFiniteGradientError", "RewardNormalizer", "Trajectory",
    "collect_trajectories", "ddpo_finetune", "log_prob_oneshot", "log_prob_step",
    "policy_gradient", "policy_gradient_modified", "PROFILES", "RewardWeights",
    "novelty_term", "profile", "q_proxy", "reward", "ring_count", "s_proxy",
    "training_fingerprints",
]
