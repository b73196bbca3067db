"""Property inference network: molecular graph -> KGE-space context vector.

The network reads encoded (possibly noisy) graphs, so it can supply the
conditional term ``grad log p(c | G_t)`` during guided sampling.
"""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
import torch
from sklearn.base import BaseEstimator
from torch import nn
from torch.nn import functional as F

from ._validation import check_finite_array, check_graphs
from .chem.graph import AtomVocabulary, encode
from .diffusion.network import symmetric_noise
from .diffusion.schedule import DiffusionSchedule
from .diffusion.sde import forward_noise
from .kg.store import KnowledgeGraph, complete_triple
from .kge.evaluation import embedding_scorer
from .kge.model import EmbeddingTable
from .optim import Adam
from .rng import numpy_stream, torch_stream

__all__ = [
    "PinNetwork",
    "PropertyInferenceNetwork",
    "ContextVector",
    "PinGuidance",
    "guidance_gradient",
    "context_from_kge",
    "noise_levels",
]

SLOPE = 0.2


def _soft_adjacency(A: torch.Tensor) -> torch.Tensor:
    """Decoded bond strength clipped to [0, 1], zero diagonal."""
    n = A.shape[-1]
    return torch.clamp(A + 1.0, 0.0, 1.0) * (1.0 - torch.eye(n, dtype=A.dtype))


class _Attention(nn.Module):
    def __init__(self, hidden: int):
        super().__init__()
        self.W = nn.Linear(hidden, hidden, bias=False)
        self.W_a = nn.Linear(2 * hidden, 1, bias=False)

    def forward(self, h, w, return_weights: bool = False):
        # w: soft neighbour weights with self-loops, (B, N, N)
        z = self.W(h)
        n = z.shape[1]
        # e_ij = sigma(W_a [z_i ; z_j]) split into the two halves of W_a
        wa = self.W_a.weight[0]
        hid = z.shape[-1]
        e = F.leaky_relu((z @ wa[:hid])[:, :, None] + (z @ wa[hid:])[:, None, :], SLOPE)
        # stabilise with the max over actual neighbours so some term stays O(1)
        e_max = e.masked_fill(w <= 0, float("-inf")).max(dim=-1, keepdim=True).values
        num = w * torch.exp((e - e_max.detach()).clamp(max=0.0))
        alpha = num / num.sum(dim=-1, keepdim=True)
        out = F.leaky_relu(alpha @ z, SLOPE)
        return (out, alpha) if return_weights else out


class PinNetwork(nn.Module):
    """``P_phi``: aggregation layer, ``layers`` attention layers, mean pool, projection.

    The first layer computes ``sigma((A + I) X W0)`` on the decoded bond
    strengths. Attention runs over bonded neighbours plus self, with bond
    strength acting as a soft membership weight so the map stays
    differentiable in ``A``.
    """

    def __init__(self, n_atom_types: int, out_dim: int, hidden: int = 64, layers: int = 3):
        super().__init__()
        self.n_atom_types = n_atom_types
        self.out_dim = out_dim
        self.W0 = nn.Linear(n_atom_types, hidden)
        self.attn = nn.ModuleList(_Attention(hidden) for _ in range(layers))
        self.proj = nn.Linear(hidden, out_dim)

    def _neighbourhood(self, A):
        n = A.shape[-1]
        return _soft_adjacency(A) + torch.eye(n, dtype=A.dtype)

    def forward(self, X: torch.Tensor, A: torch.Tensor) -> torch.Tensor:
        """``(B, N, M), (B, N, N)`` encoded graphs -> ``(B, out_dim)``."""
        w = self._neighbourhood(A)
        h = F.leaky_relu(w @ self.W0(X), SLOPE)
        for layer in self.attn:
            h = layer(h, w)
        return self.proj(h.mean(dim=1))

    def attention_weights(self, X, A) -> list[torch.Tensor]:
        w = self._neighbourhood(A)
        h = F.leaky_relu(w @ self.W0(X), SLOPE)
        out = []
        for layer in self.attn:
            h, alpha = layer(h, w, return_weights=True)
            out.append(alpha)
        return out


def noise_levels(S: int) -> int:
    """Largest noise step used for PIN training: ``floor(0.05 * S)``."""
    return int(np.floor(0.05 * S + 1e-9))


def guidance_gradient(net: PinNetwork, X: torch.Tensor, A: torch.Tensor, c, alpha: float = 1.0):
    """Gradient of ``log p(c | G) = -alpha ||c - P(G)||^2 - log Z`` w.r.t. ``(X, A)``.

    Returns ``2 alpha J^T (c - P(G))``. The A gradient is taken with respect
    to the shared off-diagonal variable (``G + G^T``, zero diagonal), the
    same parametrization the diffusion score uses.
    """
    c = torch.as_tensor(c, dtype=X.dtype)
    with torch.enable_grad():
        Xg = X.detach().requires_grad_(True)
        Ag = A.detach().requires_grad_(True)
        pred = net(Xg, Ag)
        logp = -alpha * ((c - pred) ** 2).sum()
        gX, gA = torch.autograd.grad(logp, (Xg, Ag))
    n = A.shape[-1]
    gA = (gA + gA.transpose(-1, -2)) * (1.0 - torch.eye(n, dtype=A.dtype))
    return gX, gA


@dataclass
class PinGuidance:
    """Guidance term ``scale * grad log p(c | G)`` for sampling and DSM."""

    network: PinNetwork
    c: np.ndarray
    scale: float = 1.0
    alpha: float = 1.0

    def gradient(self, X, A):
        net = self.network
        if next(net.parameters()).dtype != X.dtype:
            net = net.to(X.dtype)
        return guidance_gradient(net, X, A, self.c, self.alpha)


@dataclass(frozen=True)
class ContextVector:
    c: np.ndarray
    provenance: str


def context_from_kge(emb: EmbeddingTable, kg: KnowledgeGraph, spec, composite: bool = False) -> ContextVector:
    """Context vector for an entity label or a completion pattern.

    ``spec`` is an entity label, or a pattern ``(s, r, o)`` with exactly one
    ``None`` (or ``"_"``) slot. Patterns return the embedding of the
    top-ranked constraint-satisfying candidate, or with ``composite`` the
    embedding the blank slot would need for a perfect score.
    """
    ent = emb.entity.detach().numpy()
    if isinstance(spec, str):
        try:
            i = kg.entities.id(spec)
        except KeyError:
            raise KeyError(f"unknown entity {spec!r}") from None
        return ContextVector(ent[i].copy(), f"entity:{spec}")
    s, r, o = (None if x in (None, "_") else x for x in spec)
    if composite:
        if (s is None) == (o is None):
            raise ValueError("pattern must have exactly one blank")
        rid = kg.relations.id(r) if isinstance(r, str) else int(r)
        rel = emb.relation[rid].detach().numpy()
        known = o if s is None else s
        e = ent[kg.entities.id(known) if isinstance(known, str) else int(known)]
        if emb.model == "transe":
            c = e - rel if s is None else e + rel
        else:
            h = e.shape[0] // 2
            er, ei = e[:h], e[h:]
            rr, ri = rel[:h], rel[h:]
            if s is None:
                # e_o * conj(e_r)
                c = np.concatenate([er * rr + ei * ri, ei * rr - er * ri])
            else:
                c = np.concatenate([er * rr - ei * ri, er * ri + ei * rr])
        return ContextVector(c, f"composite:{spec}")
    ranked = complete_triple(kg, embedding_scorer(emb), (s, r, o), top_k=1)
    if not ranked:
        raise ValueError(f"no constraint-satisfying completion for {spec}")
    best = ranked[0][0]
    return ContextVector(ent[best].copy(), f"completion:{spec}->{kg.entities.label(best)}")


class PropertyInferenceNetwork(BaseEstimator):
    """Estimator training :class:`PinNetwork` on ``(molecule, context)`` pairs.

    Each training example is forward-noised to a level drawn uniformly
    from ``0 .. floor(0.05 * generation_steps)`` (level 0 is the clean
    graph), using the same schedule as the diffusion model.
    """

    def __init__(self, hidden: int = 64, layers: int = 3, steps: int = 2000, batch_size: int = 32,
                 learning_rate: float = 1e-3, generation_steps: int = 1000, beta_min: float = 0.1,
                 beta_max: float = 20.0, alpha: float = 1.0, seed: int = 0):
        self.hidden = hidden
        self.layers = layers
        self.steps = steps
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.generation_steps = generation_steps
        self.beta_min = beta_min
        self.beta_max = beta_max
        self.alpha = alpha
        self.seed = seed

    @property
    def schedule(self) -> DiffusionSchedule:
        return DiffusionSchedule(self.generation_steps, self.beta_min, self.beta_max)

    def _build(self, vocab: AtomVocabulary, dim: int):
        torch.manual_seed(int(numpy_stream(self.seed, "pin-init").integers(2**62)))
        self.network_ = PinNetwork(len(vocab), dim, self.hidden, self.layers)
        self.vocab_ = vocab
        self.out_dim_ = dim

    def fit(self, graphs, y, kge_dim: int | None = None):
        graphs = check_graphs(graphs)
        Y = check_finite_array(y, "contexts")
        if Y.ndim != 2 or len(Y) != len(graphs):
            raise ValueError("y must have shape (n_graphs, d)")
        if kge_dim is not None and Y.shape[1] != kge_dim:
            raise ValueError(f"context dimension {Y.shape[1]} != KGE dimension {kge_dim}")
        self._build(graphs[0].vocab, Y.shape[1])
        sizes = np.array([g.n_atoms for g in graphs])
        buckets = {}
        for n in np.unique(sizes):
            ids = np.nonzero(sizes == n)[0]
            X = torch.as_tensor(np.stack([encode(graphs[i])[0] for i in ids]), dtype=torch.float32)
            A = torch.as_tensor(np.stack([encode(graphs[i])[1] for i in ids]), dtype=torch.float32)
            buckets[int(n)] = (X, A, torch.as_tensor(Y[ids], dtype=torch.float32))
        values, counts = np.unique(sizes, return_counts=True)
        probs = counts / counts.sum()
        rng = numpy_stream(self.seed, "pin-batches")
        gen = torch_stream(self.seed, "pin-noise")
        schedule = self.schedule
        t_max = noise_levels(self.generation_steps)
        opt = Adam(self.network_.named_parameters(), lr=self.learning_rate)
        self.loss_trace_ = []
        for _ in range(self.steps):
            n = int(rng.choice(values, p=probs))
            X0, A0, C = buckets[n]
            idx = torch.as_tensor(rng.integers(0, len(X0), min(self.batch_size, len(X0))))
            X0, A0, C = X0[idx], A0[idx], C[idx]
            t = torch.randint(0, t_max + 1, (len(idx),), generator=gen)
            eX = torch.randn(X0.shape, generator=gen)
            eA = symmetric_noise(A0.shape, gen)
            Xt, At = _noise_or_clean(X0, A0, t, eX, eA, schedule)
            loss = ((self.network_(Xt, At) - C) ** 2).sum(dim=1).mean()
            opt.zero_grad()
            loss.backward()
            opt.step()
            self.loss_trace_.append(loss.item())
        return self

    def _check_fitted(self):
        if not hasattr(self, "network_"):
            raise RuntimeError("model is not fitted")

    def predict(self, graphs) -> np.ndarray:
        self._check_fitted()
        graphs = check_graphs(graphs)
        out = np.zeros((len(graphs), self.out_dim_))
        with torch.no_grad():
            for i, g in enumerate(graphs):
                X, A = encode(g)
                out[i] = self.network_(torch.as_tensor(X[None], dtype=torch.float32),
                                       torch.as_tensor(A[None], dtype=torch.float32))[0].numpy()
        return out

    def score(self, graphs, y) -> float:
        """Negative mean squared context error."""
        return -float(np.mean(np.sum((self.predict(graphs) - np.asarray(y)) ** 2, axis=1)))

    def guidance(self, c, scale: float = 1.0) -> PinGuidance:
        self._check_fitted()
        c = check_finite_array(c, "context")
        if c.shape != (self.out_dim_,):
            raise ValueError(f"context must have shape ({self.out_dim_},)")
        return PinGuidance(self.network_, c, scale, self.alpha)

    def save(self, path) -> None:
        self._check_fitted()
        payload = {
            "kind": "pin",
            "state_dict": self.network_.state_dict(),
            "vocab": list(self.vocab_.symbols),
            "vocab_valences": list(self.vocab_.valences),
            "vocab_hash": self.vocab_.hash(),
            "kge_dim": self.out_dim_,
            "config": self.get_params(),
            "loss_trace": list(getattr(self, "loss_trace_", [])),
        }
        path = os.fspath(path)
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        torch.save(payload, path + ".tmp")
        os.replace(path + ".tmp", path)

    @classmethod
    def load(cls, path, vocab: AtomVocabulary | None = None, kge_dim: int | None = None):
        payload = torch.load(path, map_location="cpu", weights_only=False)
        if payload.get("kind") != "pin":
            raise ValueError(f"{path} is not a PIN checkpoint")
        if vocab is not None and vocab.hash() != payload["vocab_hash"]:
            raise ValueError("PIN checkpoint vocabulary does not match")
        if kge_dim is not None and kge_dim != payload["kge_dim"]:
            raise ValueError(f"PIN checkpoint was trained for KGE dimension {payload['kge_dim']}")
        model = cls(**payload["config"])
        saved = AtomVocabulary(tuple(payload["vocab"]), tuple(payload["vocab_valences"]))
        model._build(saved, payload["kge_dim"])
        model.network_.load_state_dict(payload["state_dict"])
        model.loss_trace_ = list(payload["loss_trace"])
        return model


def _noise_or_clean(X0, A0, t, eX, eA, schedule):
    # level 0 keeps the clean graph; forward_noise only accepts t >= 1
    tt = torch.clamp(t, min=1)
    Xt, At = forward_noise(X0, A0, tt, eX, eA, schedule)
    clean = (t == 0)[:, None, None]
    return torch.where(clean, X0, Xt), torch.where(clean, A0, At)
