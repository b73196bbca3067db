"""Estimator wrapper: train the score network and sample molecules."""
from __future__ import annotations

import io
import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np
import torch
from sklearn.base import BaseEstimator

from .._validation import check_graphs
from ..chem.graph import QM9_VOCAB, AtomVocabulary, MolecularGraph, decode, encode, quantize
from ..optim import Adam
from ..rng import numpy_stream, torch_stream
from .network import ScoreNetwork, symmetric_noise
from .schedule import DiffusionSchedule
from .sde import dsm_loss, reverse_sample, score_forward

__all__ = ["GraphScoreDiffusion", "SampleResult", "NonFiniteLossError"]

log = logging.getLogger(__name__)


class NonFiniteLossError(RuntimeError):
    """Training hit a NaN/inf loss; parameters were rolled back."""


@dataclass
class SampleResult:
    """Quantized molecules plus, when requested, encoded trajectories.

    ``trajectories[i]`` is ``(X, A)`` with leading axis ``t = 0..T``.
    """

    molecules: list
    trajectories: list = field(default_factory=list)
    n_atoms: list = field(default_factory=list)


def _stack(graphs):
    X = np.stack([encode(g)[0] for g in graphs])
    A = np.stack([encode(g)[1] for g in graphs])
    return torch.as_tensor(X, dtype=torch.float32), torch.as_tensor(A, dtype=torch.float32)


class GraphScoreDiffusion(BaseEstimator):
    """Joint (X, A) score-based diffusion model.

    ``fit`` runs Adam on the denoising score-matching loss over the corpus,
    drawing each batch from a single molecule-size bucket. ``sample`` draws
    sizes from the training size distribution and integrates the reverse
    SDE with one noise substream per molecule.

    ``prior_scale`` multiplies the initial noise ``G_T``; values above 1
    push samples away from the training manifold (a scalar stand-in for an
    out-of-distribution control).

    ``T`` defaults to 1000 steps; the desk-scale profile used by the CLI
    config is ``T = 200``.
    """

    def __init__(self, T: int = 1000, hidden: int = 64, layers: int = 3, time_dim: int = 32,
                 steps: int = 2000, batch_size: int = 64, learning_rate: float = 1e-3,
                 weighting: str = "sigma2", checkpoint_every: int = 0, checkpoint_dir=None,
                 prior_scale: float = 1.0, beta_min: float = 0.1, beta_max: float = 20.0,
                 seed: int = 0):
        self.T = T
        self.hidden = hidden
        self.layers = layers
        self.time_dim = time_dim
        self.steps = steps
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.weighting = weighting
        self.checkpoint_every = checkpoint_every
        self.checkpoint_dir = checkpoint_dir
        self.prior_scale = prior_scale
        self.beta_min = beta_min
        self.beta_max = beta_max
        self.seed = seed

    # -- construction ---------------------------------------------------------

    @property
    def schedule(self) -> DiffusionSchedule:
        return DiffusionSchedule(self.T, self.beta_min, self.beta_max)

    def _build(self, vocab: AtomVocabulary):
        torch.manual_seed(int(numpy_stream(self.seed, "init").integers(2**62)))
        self.network_ = ScoreNetwork(len(vocab), self.hidden, self.layers, self.time_dim, self.T)
        self.vocab_ = vocab

    def fit(self, graphs, y=None, guidance=None):
        """Train on discrete molecules; ``guidance`` adds the conditional term."""
        graphs = check_graphs(graphs)
        if self.weighting not in ("sigma2", "none"):
            raise ValueError(f"unknown weighting {self.weighting!r}")
        vocab = graphs[0].vocab
        self._build(vocab)
        sizes = np.array([g.n_atoms for g in graphs])
        self.size_values_, counts = np.unique(sizes, return_counts=True)
        self.size_probs_ = counts / counts.sum()
        buckets = {int(n): _stack([g for g in graphs if g.n_atoms == n]) for n in self.size_values_}
        rng = numpy_stream(self.seed, "batches")
        gen = torch_stream(self.seed, "dsm")
        opt = Adam(self.network_.named_parameters(), lr=self.learning_rate)
        schedule = self.schedule
        self.loss_trace_ = []
        self.checkpoints_ = []
        good = {k: v.clone() for k, v in self.network_.state_dict().items()}
        for step in range(self.steps):
            n = int(rng.choice(self.size_values_, p=self.size_probs_))
            X0, A0 = buckets[n]
            idx = torch.as_tensor(rng.integers(0, X0.shape[0], min(self.batch_size, X0.shape[0])))
            loss = dsm_loss(self.network_, X0[idx], A0[idx], schedule, gen,
                            guidance=guidance, weighting=self.weighting)
            value = loss.item()
            if not np.isfinite(value):
                self.network_.load_state_dict(good)
                raise NonFiniteLossError(f"non-finite DSM loss at step {step}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            self.loss_trace_.append(value)
            if self.checkpoint_every and (step + 1) % self.checkpoint_every == 0:
                good = {k: v.clone() for k, v in self.network_.state_dict().items()}
                if self.checkpoint_dir is not None:
                    path = os.path.join(self.checkpoint_dir, f"diffusion_step{step + 1}.pt")
                    self.save(path)
                    self.checkpoints_.append(path)
        return self

    def _check_fitted(self):
        if not hasattr(self, "network_"):
            raise RuntimeError("model is not fitted")

    # -- scoring and sampling -------------------------------------------------

    def score_fn(self, grad: bool = False):
        """Callable ``(X, A, t) -> (s_X, s_A)`` for :func:`reverse_sample`."""
        self._check_fitted()
        schedule = self.schedule

        def fn(X, A, t):
            with torch.set_grad_enabled(grad):
                return score_forward(self.network_, X, A, torch.full((X.shape[0],), t), schedule)
        return fn

    def draw_sizes(self, n: int, seed: int | None = None) -> np.ndarray:
        self._check_fitted()
        rng = numpy_stream(self.seed if seed is None else seed, "sizes")
        return rng.choice(self.size_values_, size=n, p=self.size_probs_).astype(int)

    def sample(self, n: int, n_atoms=None, guidance=None, seed: int | None = None,
               return_trajectories: bool = False, final_step_noise: bool = False) -> SampleResult:
        """Generate ``n`` molecules.

        ``n_atoms`` may be an int (all molecules) or a sequence of sizes; by
        default sizes follow the training corpus. Molecule ``i`` uses noise
        substream ``("sample", i)`` of ``seed``, so outputs do not depend on
        batching.
        """
        self._check_fitted()
        seed = self.seed if seed is None else seed
        if n == 0:
            return SampleResult([], [], [])
        if n_atoms is None:
            sizes = self.draw_sizes(n, seed)
        elif np.isscalar(n_atoms):
            sizes = np.full(n, int(n_atoms))
        else:
            sizes = np.asarray(n_atoms, int)
            if len(sizes) != n:
                raise ValueError("n_atoms length must equal n")
        m = len(self.vocab_)
        mols = [None] * n
        trajs = [None] * n
        score = self.score_fn()
        for size in np.unique(sizes):
            ids = np.nonzero(sizes == size)[0]
            gens = [torch_stream(seed, "sample", int(i)) for i in ids]
            XT = torch.stack([torch.randn((size, m), generator=g) for g in gens]) * self.prior_scale
            AT = torch.stack([symmetric_noise((size, size), g) for g in gens]) * self.prior_scale
            out = reverse_sample(score, XT, AT, self.schedule, gens, guidance,
                                 keep_trajectory=return_trajectories,
                                 final_step_noise=final_step_noise)
            X0, A0 = out[0].detach().numpy(), out[1].detach().numpy()
            for k, i in enumerate(ids):
                mols[i] = self.to_molecule(X0[k], A0[k])
                if return_trajectories:
                    trajs[i] = (out[2][k].detach(), out[3][k].detach())
        return SampleResult(mols, trajs if return_trajectories else [], sizes.tolist())

    def to_molecule(self, X_enc, A_enc) -> MolecularGraph:
        """Decode and quantize one encoded state."""
        X, A = decode(X_enc, A_enc)
        return quantize(MolecularGraph(X, A, False, self.vocab_), self.vocab_)

    # -- persistence ----------------------------------------------------------

    def save(self, path) -> None:
        """Write a checkpoint with weights, schedule, vocabulary hash and config."""
        self._check_fitted()
        payload = {
            "kind": "diffusion",
            "state_dict": self.network_.state_dict(),
            "schedule": self.schedule.to_dict(),
            "vocab": list(self.vocab_.symbols),
            "vocab_valences": list(self.vocab_.valences),
            "vocab_hash": self.vocab_.hash(),
            "config": self.get_params(),
            "size_values": self.size_values_.tolist(),
            "size_probs": self.size_probs_.tolist(),
            "loss_trace": list(getattr(self, "loss_trace_", [])),
        }
        _atomic_torch_save(payload, path)

    @classmethod
    def load(cls, path, vocab: AtomVocabulary | None = None) -> "GraphScoreDiffusion":
        payload = torch.load(path, map_location="cpu", weights_only=False)
        if payload.get("kind") != "diffusion":
            raise ValueError(f"{path} is not a diffusion checkpoint")
        saved = AtomVocabulary(tuple(payload["vocab"]), tuple(payload["vocab_valences"]))
        if vocab is not None and vocab.hash() != payload["vocab_hash"]:
            raise ValueError("checkpoint vocabulary does not match")
        config = dict(payload["config"])
        config.pop("checkpoint_dir", None)
        model = cls(**config)
        model._build(saved)
        model.network_.load_state_dict(payload["state_dict"])
        model.size_values_ = np.asarray(payload["size_values"], int)
        model.size_probs_ = np.asarray(payload["size_probs"], float)
        model.loss_trace_ = list(payload["loss_trace"])
        return model


def _atomic_torch_save(payload, path) -> None:
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    tmp = path + ".tmp"
    torch.save(payload, tmp)
    os.replace(tmp, path)


def config_json(model: GraphScoreDiffusion) -> str:
    return json.dumps({k: v for k, v in model.get_params().items() if k != "checkpoint_dir"},
                      sort_keys=True)
