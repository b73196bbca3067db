"""Forward noising, denoising score matching and reverse-time sampling.

All tensors live in the encoded space of :func:`kgmolgen.chem.graph.encode`
and are batched: ``X (B, N, M)``, ``A (B, N, N)``. Scores for ``A`` are
taken with respect to the shared off-diagonal entries, matching the
symmetric noise model.
"""
from __future__ import annotations

from typing import Protocol

import numpy as np
import torch

from .network import ScoreNetwork, symmetric_noise
from .schedule import DiffusionSchedule

__all__ = [
    "Guidance",
    "forward_noise",
    "score_forward",
    "dsm_loss",
    "reverse_step",
    "reverse_sample",
    "analytic_gaussian_score",
]


class Guidance(Protocol):
    scale: float

    def gradient(self, X: torch.Tensor, A: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        ...


def _coef(values: np.ndarray, t: torch.Tensor, dtype) -> torch.Tensor:
    return torch.as_tensor(values, dtype=dtype)[t.long()]


def forward_noise(X0: torch.Tensor, A0: torch.Tensor, t, eps_X: torch.Tensor,
                  eps_A: torch.Tensor, schedule: DiffusionSchedule):
    """``G_t = sqrt(abar_t) G_0 + sqrt(1 - abar_t) eps``, per batch element."""
    t = torch.as_tensor(t).reshape(-1)
    if torch.any(t < 1) or torch.any(t > schedule.T):
        raise ValueError(f"t out of range [1, {schedule.T}]")
    t = t.expand(X0.shape[0]) if t.numel() == 1 else t
    ab = _coef(schedule.alpha_bar, t, X0.dtype)
    a = ab.sqrt()[:, None, None]
    s = (1.0 - ab).sqrt()[:, None, None]
    return a * X0 + s * eps_X, a * A0 + s * eps_A


def score_forward(net: ScoreNetwork, X: torch.Tensor, A: torch.Tensor, t,
                  schedule: DiffusionSchedule):
    """Scores ``(s_X, s_A)`` = ``-eps_hat / sigma_t``."""
    if not (torch.isfinite(X).all() and torch.isfinite(A).all()):
        raise ValueError("non-finite input to the score network")
    t = torch.as_tensor(t).reshape(-1)
    t = t.expand(X.shape[0]) if t.numel() == 1 else t
    eps_x, eps_a = net(X, A, t)
    sigma = _coef(schedule.sigma(np.arange(schedule.T + 1)), t, X.dtype)[:, None, None]
    return -eps_x / sigma, -eps_a / sigma


def dsm_loss(net: ScoreNetwork, X0: torch.Tensor, A0: torch.Tensor,
             schedule: DiffusionSchedule, generator: torch.Generator | None = None,
             guidance: Guidance | None = None, weighting: str = "sigma2",
             t=None, eps=None) -> torch.Tensor:
    """Denoising score-matching loss ``|| s' + eps / sigma_t ||^2``.

    ``s'`` adds ``scale * grad log p(c | G_t)`` when guidance is supplied.
    ``weighting='sigma2'`` multiplies each term by ``sigma_t^2`` (the usual
    variance-balanced weighting); ``'none'`` is the unweighted objective.
    The X part is averaged over entries, the A part over upper-triangle
    entries, and the two heads and the batch are then averaged.
    """
    if X0.shape[0] == 0:
        raise ValueError("empty batch")
    B, n, _ = X0.shape
    if t is None:
        t = torch.randint(1, schedule.T + 1, (B,), generator=generator)
    if eps is None:
        eps = (torch.randn(X0.shape, generator=generator, dtype=X0.dtype),
               symmetric_noise(A0.shape, generator, X0.dtype))
    eps_X, eps_A = eps
    Xt, At = forward_noise(X0, A0, t, eps_X, eps_A, schedule)
    s_x, s_a = score_forward(net, Xt, At, t, schedule)
    if guidance is not None and guidance.scale != 0:
        g_x, g_a = guidance.gradient(Xt.detach(), At.detach())
        s_x = s_x + guidance.scale * g_x
        s_a = s_a + guidance.scale * g_a
    sigma = torch.as_tensor(schedule.sigma(t.numpy()), dtype=X0.dtype)[:, None, None]
    rx = s_x + eps_X / sigma
    ra = s_a + eps_A / sigma
    if weighting == "sigma2":
        rx, ra = rx * sigma, ra * sigma
    elif weighting != "none":
        raise ValueError(f"unknown weighting {weighting!r}")
    iu = torch.triu_indices(n, n, 1)
    lx = (rx ** 2).mean(dim=(1, 2))
    la = (ra[:, iu[0], iu[1]] ** 2).mean(dim=1) if n > 1 else torch.zeros_like(lx)
    heads = 2.0 if n > 1 else 1.0
    return ((lx + la) / heads).mean()


def reverse_step(X: torch.Tensor, A: torch.Tensor, t: int, score_fn, schedule: DiffusionSchedule,
                 noise=None, guidance: Guidance | None = None):
    """One Euler-Maruyama step of the reverse-time SDE from ``t`` to ``t - 1``.

    ``G <- G - f_t(G) + g_t^2 s'(G) + g_t z`` with ``f_t = -beta_t G / 2`` and
    ``g_t^2 = beta_t``; ``noise`` is ``(z_X, z_A)`` or None for a
    noise-free step. ``score_fn(X, A, t)`` returns the unconditional score.
    """
    beta = float(schedule.beta[t])
    s_x, s_a = score_fn(X, A, t)
    if guidance is not None and guidance.scale != 0:
        g_x, g_a = guidance.gradient(X, A)
        s_x = s_x + guidance.scale * g_x
        s_a = s_a + guidance.scale * g_a
    Xn = X + 0.5 * beta * X + beta * s_x
    An = A + 0.5 * beta * A + beta * s_a
    if noise is not None:
        g = beta ** 0.5
        Xn = Xn + g * noise[0]
        An = An + g * noise[1]
    n = A.shape[-1]
    An = 0.5 * (An + An.transpose(-1, -2)) * (1.0 - torch.eye(n, dtype=A.dtype))
    return Xn, An


def reverse_sample(score_fn, X_T: torch.Tensor, A_T: torch.Tensor, schedule: DiffusionSchedule,
                   generators: list[torch.Generator], guidance: Guidance | None = None,
                   keep_trajectory: bool = False, final_step_noise: bool = False):
    """Integrate from ``t = T`` to ``0``.

    Each batch element draws its noise from its own generator so results do
    not depend on how molecules are batched. Returns the final ``(X, A)``
    and, if requested, stacked states ``(B, T+1, ...)`` ordered ``t = 0..T``.
    """
    X, A = X_T, A_T
    B = X.shape[0]
    traj_x = [X] if keep_trajectory else None
    traj_a = [A] if keep_trajectory else None
    for t in range(schedule.T, 0, -1):
        noise = None
        if t > 1 or final_step_noise:
            zx = torch.stack([torch.randn(X.shape[1:], generator=g, dtype=X.dtype) for g in generators]) \
                if B else torch.zeros_like(X)
            za = torch.stack([symmetric_noise(A.shape[1:], g, A.dtype) for g in generators]) \
                if B else torch.zeros_like(A)
            noise = (zx, za)
        X, A = reverse_step(X, A, t, score_fn, schedule, noise, guidance)
        if keep_trajectory:
            traj_x.append(X)
            traj_a.append(A)
    if keep_trajectory:
        return X, A, torch.stack(traj_x[::-1], dim=1), torch.stack(traj_a[::-1], dim=1)
    return X, A


def analytic_gaussian_score(mean: float, var: float, schedule: DiffusionSchedule):
    """Exact score of the VP marginal of ``N(mean, var)`` data, for sampler checks."""
    ab = schedule.alpha_bar

    def fn(X, A, t):
        m = np.sqrt(ab[t]) * mean
        v = ab[t] * var + 1.0 - ab[t]
        return -(X - m) / v, -(A - m) / v
    return fn
