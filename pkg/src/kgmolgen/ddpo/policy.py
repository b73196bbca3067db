"""Policy-gradient fine-tuning of the reverse diffusion sampler.

Sampling is treated as an MDP whose only reward arrives at the terminal
molecule. Two gradient estimators are available:

``modified``
    ``E[r * sum_t grad log p(G_0 | G_t)]`` with ``p(G_0 | G_t)`` the
    one-shot denoising Gaussian around
    ``(G_t + (1 - abar_t) s(G_t, t)) / sqrt(abar_t)`` with per-entry
    variance ``(1 - abar_t) / abar_t``.
``stepwise``
    the image-style ``E[r * sum_t grad log p(G_{t-1} | G_t)]`` using the
    Euler-Maruyama transition ``N(mu_t, beta_t)``. The last step of the
    sampler is noise-free, so ``t = 1`` falls back to the one-shot density.

Both use a strided subset of timesteps (every ``stride``-th, starting at
``t = 1``) as a cost-saving estimator choice.
"""
from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np
import torch

from ..chem.graph import MolecularGraph, validity_check
from ..diffusion.estimator import GraphScoreDiffusion
from ..diffusion.schedule import DiffusionSchedule
from ..diffusion.sde import score_forward
from ..rng import child_seeds

__all__ = [
    "Trajectory",
    "RewardNormalizer",
    "collect_trajectories",
    "log_prob_oneshot",
    "log_prob_step",
    "policy_gradient",
    "policy_gradient_modified",
    "ddpo_finetune",
    "FinetuneResult",
    "NonFiniteGradientError",
]

log = logging.getLogger(__name__)
_LOG2PI = math.log(2 * math.pi)


class NonFiniteGradientError(RuntimeError):
    pass


@dataclass
class Trajectory:
    """Encoded states ``X[t], A[t]`` for ``t = 0..T`` and the terminal molecule."""

    X: torch.Tensor
    A: torch.Tensor
    molecule: MolecularGraph
    reward: float

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def n_atoms(self) -> int:
        return self.X.shape[1]


class RewardNormalizer:
    """Running mean and standard deviation of rewards (Welford)."""

    def __init__(self):
        self.count = 0
        self.mean = 0.0
        self._m2 = 0.0

    def update(self, rewards) -> None:
        for r in np.asarray(rewards, float).ravel():
            self.count += 1
            delta = r - self.mean
            self.mean += delta / self.count
            self._m2 += delta * (r - self.mean)

    @property
    def std(self) -> float:
        return math.sqrt(self._m2 / self.count) if self.count > 1 else 0.0

    def center(self, rewards) -> np.ndarray:
        return np.asarray(rewards, float) - self.mean

    def to_dict(self) -> dict:
        return {"count": self.count, "mean": self.mean, "std": self.std}


def collect_trajectories(model: GraphScoreDiffusion, n: int, reward_fn, guidance=None,
                         seed: int = 0, n_atoms=None, normalizer: RewardNormalizer | None = None):
    """Run ``n`` sampling chains keeping every state; reward the terminal molecules."""
    res = model.sample(n, n_atoms=n_atoms, guidance=guidance, seed=seed, return_trajectories=True)
    trajs = []
    for mol, (X, A) in zip(res.molecules, res.trajectories):
        trajs.append(Trajectory(X, A, mol, float(reward_fn(mol))))
    if normalizer is not None:
        normalizer.update([t.reward for t in trajs])
    return trajs


def _gauss_logpdf(x_X, x_A, mu_X, mu_A, var) -> torch.Tensor:
    """Diagonal Gaussian log density over X entries and upper-triangle A entries."""
    n = x_A.shape[-1]
    iu = torch.triu_indices(n, n, 1)
    rX = ((x_X - mu_X) ** 2).sum(dim=(1, 2))
    rA = ((x_A - mu_A)[:, iu[0], iu[1]] ** 2).sum(dim=1)
    k = x_X[0].numel() + iu.shape[1]
    return -0.5 * (rX + rA) / var - 0.5 * k * (math.log(var) + _LOG2PI)


def log_prob_oneshot(net, schedule: DiffusionSchedule, X_t, A_t, X0, A0, t: int) -> torch.Tensor:
    """``log p(G_0 | G_t)`` under the one-shot denoising Gaussian, per batch element."""
    ab = float(schedule.alpha_bar[t])
    s_x, s_a = score_forward(net, X_t, A_t, torch.full((X_t.shape[0],), t), schedule)
    mu_x = (X_t + (1 - ab) * s_x) / math.sqrt(ab)
    mu_a = (A_t + (1 - ab) * s_a) / math.sqrt(ab)
    return _gauss_logpdf(X0, A0, mu_x, mu_a, (1 - ab) / ab)


def log_prob_step(net, schedule: DiffusionSchedule, X_t, A_t, X_prev, A_prev, t: int) -> torch.Tensor:
    """``log p(G_{t-1} | G_t)`` under the Euler-Maruyama transition, per batch element."""
    beta = float(schedule.beta[t])
    s_x, s_a = score_forward(net, X_t, A_t, torch.full((X_t.shape[0],), t), schedule)
    mu_x = X_t + 0.5 * beta * X_t + beta * s_x
    mu_a = A_t + 0.5 * beta * A_t + beta * s_a
    return _gauss_logpdf(X_prev, A_prev, mu_x, mu_a, beta)


def timesteps(T: int, stride: int = 10) -> list[int]:
    return list(range(1, T + 1, max(1, int(stride))))


def policy_gradient(net, schedule: DiffusionSchedule, trajectories, advantages,
                    stride: int = 10, estimator: str = "modified") -> dict[str, torch.Tensor]:
    """Gradient of ``mean_i adv_i * sum_t log p_theta(...)`` w.r.t. network parameters."""
    if estimator not in ("modified", "stepwise"):
        raise ValueError(f"unknown estimator {estimator!r}")
    adv = np.asarray(advantages, float)
    if len(adv) != len(trajectories):
        raise ValueError("one advantage per trajectory required")
    params = dict(net.named_parameters())
    grads = {k: torch.zeros_like(p) for k, p in params.items()}
    n_total = len(trajectories)
    if n_total == 0:
        return grads
    groups: dict[int, list[int]] = {}
    for i, tr in enumerate(trajectories):
        groups.setdefault(tr.n_atoms, []).append(i)
    names = list(params)
    for ids in groups.values():
        X = torch.stack([trajectories[i].X for i in ids])
        A = torch.stack([trajectories[i].A for i in ids])
        w = torch.as_tensor(adv[ids], dtype=X.dtype) / n_total
        if not torch.any(w != 0):
            continue
        for t in timesteps(schedule.T, stride):
            if estimator == "modified" or t == 1:
                lp = log_prob_oneshot(net, schedule, X[:, t], A[:, t], X[:, 0], A[:, 0], t)
            else:
                lp = log_prob_step(net, schedule, X[:, t], A[:, t], X[:, t - 1], A[:, t - 1], t)
            g = torch.autograd.grad((w * lp).sum(), [params[k] for k in names], allow_unused=True)
            for k, gk in zip(names, g):
                if gk is not None:
                    grads[k] += gk
    for k, g in grads.items():
        if not torch.isfinite(g).all():
            raise NonFiniteGradientError(f"non-finite policy gradient in {k}")
    return grads


def policy_gradient_modified(net, schedule, trajectories, advantages, stride: int = 10):
    return policy_gradient(net, schedule, trajectories, advantages, stride, "modified")


@dataclass
class FinetuneResult:
    reward_trace: list = field(default_factory=list)
    validity_trace: list = field(default_factory=list)
    checkpoints: list = field(default_factory=list)
    stopped_early: bool = False
    iterations_run: int = 0


def ddpo_finetune(model: GraphScoreDiffusion, iterations: int, batch_size: int, reward_fn,
                  lr: float = 1e-5, stride: int = 10, estimator: str = "modified", guidance=None,
                  seed: int = 0, n_atoms=None, baseline: str = "running", patience: int = 50,
                  degrade: float = 0.2, checkpoint_every: int = 0, out_dir=None,
                  start_iteration: int = 0, max_grad_norm: float = 0.0) -> FinetuneResult:
    """Fine-tune ``model`` in place with ``theta <- theta + lr * grad J``.

    ``baseline='running'`` centers rewards by the running mean over all
    batches so far (including the current one); ``'batch'`` uses the
    current batch mean. Training stops early once the mean reward has been
    more than ``degrade`` (relative) below its best for ``patience``
    consecutive iterations. With ``out_dir`` set, one JSON line per
    iteration goes to ``rewards.jsonl`` and checkpoints to
    ``ddpo_iter{k}.pt``. ``max_grad_norm > 0`` rescales larger gradients to
    that norm, a safeguard for badly trained starting points; it is off by
    default.
    """
    if baseline not in ("running", "batch"):
        raise ValueError(f"unknown baseline {baseline!r}")
    net = model.network_
    schedule = model.schedule
    norm = RewardNormalizer()
    seeds = child_seeds(seed, "ddpo", start_iteration + iterations)[start_iteration:]
    result = FinetuneResult()
    best = -math.inf
    bad = 0
    log_file = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        log_file = open(os.path.join(out_dir, "rewards.jsonl"), "a")
    try:
        for k in range(iterations):
            it = start_iteration + k
            trajs = collect_trajectories(model, batch_size, reward_fn, guidance, seeds[k], n_atoms, norm)
            rewards = np.array([t.reward for t in trajs])
            adv = norm.center(rewards) if baseline == "running" else rewards - rewards.mean()
            grads = policy_gradient(net, schedule, trajs, adv, stride, estimator)
            if max_grad_norm > 0:
                norm_g = math.sqrt(sum(float((g ** 2).sum()) for g in grads.values()))
                if norm_g > max_grad_norm:
                    grads = {k2: g * (max_grad_norm / norm_g) for k2, g in grads.items()}
            if lr:
                with torch.no_grad():
                    for name, p in net.named_parameters():
                        p.add_(grads[name], alpha=lr)
            mean_r = float(rewards.mean())
            validity = float(np.mean([validity_check(t.molecule).valid for t in trajs]))
            result.reward_trace.append(mean_r)
            result.validity_trace.append(validity)
            result.iterations_run += 1
            if log_file is not None:
                log_file.write(json.dumps({"iteration": it, "mean_reward": mean_r,
                                           "validity": validity, "baseline": norm.mean}) + "\n")
                log_file.flush()
            if checkpoint_every and out_dir is not None and (it + 1) % checkpoint_every == 0:
                path = os.path.join(out_dir, f"ddpo_iter{it + 1}.pt")
                model.save(path)
                result.checkpoints.append(path)
            best = max(best, mean_r)
            if mean_r < best - degrade * abs(best):
                bad += 1
                if bad >= patience:
                    log.info("early stop at iteration %d", it)
                    result.stopped_early = True
                    break
            else:
                bad = 0
    finally:
        if log_file is not None:
            log_file.close()
    return result
