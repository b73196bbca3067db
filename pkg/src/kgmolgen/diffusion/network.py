"""Permutation-equivariant score network over (X, A)."""
from __future__ import annotations

import math

import torch
from torch import nn
from torch.nn import functional as F

__all__ = ["ScoreNetwork", "timestep_embedding", "symmetric_noise"]

INPUT_CLIP = 5.0


def timestep_embedding(t: torch.Tensor, T: int, dim: int) -> torch.Tensor:
    """Sinusoidal embedding of ``t / T``; shape ``(B, dim)``."""
    half = dim // 2
    freqs = torch.exp(-math.log(1000.0) * torch.arange(half, dtype=torch.float64) / max(half - 1, 1))
    arg = (t.to(torch.float64) / T)[:, None] * freqs[None, :] * 1000.0
    return torch.cat([torch.sin(arg), torch.cos(arg)], dim=1)


def symmetric_noise(shape, generator=None, dtype=torch.float32) -> torch.Tensor:
    """Standard normal noise for ``(..., N, N)`` matrices: symmetric, zero diagonal."""
    z = torch.randn(shape, generator=generator, dtype=dtype)
    upper = torch.triu(z, diagonal=1)
    return upper + upper.transpose(-1, -2)


class _MessagePassing(nn.Module):
    def __init__(self, hidden: int, time_dim: int):
        super().__init__()
        self.self_lin = nn.Linear(hidden, hidden)
        self.bond_lin = nn.Linear(hidden, hidden, bias=False)
        self.glob_lin = nn.Linear(hidden, hidden, bias=False)
        self.time_lin = nn.Linear(time_dim, hidden, bias=False)
        self.out = nn.Linear(hidden, hidden)

    def forward(self, h, W, temb):
        # W: bond-weighted adjacency (B, N, N)
        n = h.shape[1]
        agg = W @ h / 2.0
        glob = h.mean(dim=1, keepdim=True).expand(-1, n, -1)
        z = self.self_lin(h) + self.bond_lin(agg) + self.glob_lin(glob) + self.time_lin(temb)[:, None]
        return h + self.out(F.silu(z))


class ScoreNetwork(nn.Module):
    """Two-headed score model ``s_theta(X_t, A_t, t)``.

    Node states start from ``X_t`` and the noisy bond row sums, then go
    through ``layers`` residual message-passing blocks whose aggregation is
    weighted by the decoded bond strength ``A_t + 1``; inputs are clipped to
    ``[-5, 5]``. The X head predicts per-node noise, the A head scores node
    pairs from symmetric pair features. Both heads output the noise estimate
    ``eps_hat``; the score is ``-eps_hat / sigma_t`` (see
    :func:`kgmolgen.diffusion.sde.score_forward`).
    """

    def __init__(self, n_atom_types: int = 4, hidden: int = 64, layers: int = 3,
                 time_dim: int = 32, T: int = 1000):
        super().__init__()
        self.n_atom_types = n_atom_types
        self.hidden = hidden
        self.time_dim = time_dim
        self.T = T
        self.embed = nn.Linear(n_atom_types + 2, hidden)
        self.time_mlp = nn.Linear(time_dim, time_dim)
        self.blocks = nn.ModuleList(_MessagePassing(hidden, time_dim) for _ in range(layers))
        self.x_head = nn.Sequential(nn.Linear(hidden, hidden), nn.SiLU(), nn.Linear(hidden, n_atom_types))
        self.pair_sum = nn.Linear(hidden, hidden)
        self.pair_prod = nn.Linear(hidden, hidden, bias=False)
        self.pair_edge = nn.Linear(1, hidden, bias=False)
        self.pair_time = nn.Linear(time_dim, hidden, bias=False)
        self.a_head = nn.Linear(hidden, 1)

    def forward(self, X: torch.Tensor, A: torch.Tensor, t: torch.Tensor):
        """Noise estimates ``(eps_X, eps_A)`` for batched ``X (B,N,M)``, ``A (B,N,N)``."""
        B, n, _ = X.shape
        eye = torch.eye(n, dtype=X.dtype)
        off = 1.0 - eye
        # inputs far off the data manifold are clipped so an untrained network
        # cannot feed its own output back without bound during sampling
        X = torch.clamp(X, -INPUT_CLIP, INPUT_CLIP)
        A = torch.clamp(A, -INPUT_CLIP, INPUT_CLIP)
        W = (A + 1.0) * off
        temb = F.silu(self.time_mlp(timestep_embedding(t, self.T, self.time_dim).to(X.dtype)))
        deg = W.sum(-1, keepdim=True) / 2.0
        h = self.embed(torch.cat([X, deg, torch.full_like(deg, n / 10.0)], dim=-1))
        for block in self.blocks:
            h = block(h, W, temb)
        eps_x = self.x_head(h)
        pair = (self.pair_sum(h[:, :, None] + h[:, None, :])
                + self.pair_prod(h[:, :, None] * h[:, None, :])
                + self.pair_edge(A[..., None])
                + self.pair_time(temb)[:, None, None])
        eps_a = self.a_head(F.silu(pair))[..., 0]
        eps_a = 0.5 * (eps_a + eps_a.transpose(1, 2)) * off
        return eps_x, eps_a
