"""TransE / RotatE knowledge-graph embeddings.

Scores are negative distances: higher means more plausible. Domain
constraints act as a ``-inf`` sentinel on the score, which is the same as
multiplying ``exp(score)`` by the constraint indicator.

RotatE relation rows store ``d/2`` unit complex numbers as
``[real parts | imaginary parts]``; entity rows use the same layout.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from ..kg.store import DomainConstraintSet, KnowledgeGraph, Triple
from ..optim import AdamState, adam_step

__all__ = [
    "KgeConfig",
    "EmbeddingTable",
    "score_transe",
    "score_rotate",
    "score",
    "distance",
    "constrained_score",
    "negative_sample_slcwa",
    "sample_negatives",
    "margin_loss",
    "log_partition_function",
    "partition_function",
    "mle_loss",
    "train_kge",
    "TrainingResult",
]

log = logging.getLogger(__name__)

MODEL_KINDS = ("transe", "rotate")
DEFAULT_TERM_CAP = 10**7


@dataclass
class KgeConfig:
    """Training configuration.

    ``learning_rate`` defaults to 1e-4; the algorithm listing this trainer
    follows uses 5e-3, which is a better choice for tiny graphs.
    """

    model: str = "transe"
    dim: int = 32
    learning_rate: float = 1e-4
    margin: float = 0.2
    epochs: int = 100
    batch_size: int = 256
    negatives_per_positive: int = 1
    training_mode: str = "slcwa"
    respect_constraints: bool = True
    margin_norm: int = 2
    score_norm: int = 1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        self.model = self.model.lower()
        if self.model not in MODEL_KINDS:
            raise ValueError(f"unknown model {self.model!r}; expected one of {MODEL_KINDS}")
        if self.dim <= 0:
            raise ValueError("dim must be positive")
        if self.model == "rotate" and self.dim % 2:
            raise ValueError("RotatE needs an even embedding dimension")
        if self.margin < 0:
            raise ValueError("margin must be non-negative")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.training_mode not in ("slcwa", "mle"):
            raise ValueError("training_mode must be 'slcwa' or 'mle'")


@dataclass
class EmbeddingTable:
    entity: torch.Tensor
    relation: torch.Tensor
    model: str = "transe"
    score_norm: int = 1
    dictionary_hash: str = ""

    def __post_init__(self):
        if self.model == "rotate" and self.entity.shape[1] % 2:
            raise ValueError("RotatE needs an even embedding dimension")

    @property
    def dim(self) -> int:
        return self.entity.shape[1]

    @classmethod
    def initialize(cls, n_entities: int, n_relations: int, dim: int, model: str = "transe",
                   seed: int = 0, score_norm: int = 1, dictionary_hash: str = "") -> EmbeddingTable:
        if model == "rotate" and dim % 2:
            raise ValueError("RotatE needs an even embedding dimension")
        rng = np.random.default_rng(seed)
        bound = 6.0 / math.sqrt(dim)
        ent = rng.uniform(-bound, bound, size=(n_entities, dim))
        if model == "rotate":
            phase = rng.uniform(0.0, 2 * math.pi, size=(n_relations, dim // 2))
            rel = np.concatenate([np.cos(phase), np.sin(phase)], axis=1)
        else:
            rel = rng.uniform(-bound, bound, size=(n_relations, dim))
        return cls(torch.tensor(ent, dtype=torch.float64), torch.tensor(rel, dtype=torch.float64),
                   model, score_norm, dictionary_hash)

    def parameters(self) -> dict[str, torch.Tensor]:
        return {"entity": self.entity, "relation": self.relation}

    def requires_grad_(self, flag: bool = True) -> EmbeddingTable:
        self.entity.requires_grad_(flag)
        self.relation.requires_grad_(flag)
        return self

    def detach(self) -> EmbeddingTable:
        return EmbeddingTable(self.entity.detach().clone(), self.relation.detach().clone(),
                              self.model, self.score_norm, self.dictionary_hash)

    @torch.no_grad()
    def normalize_relations(self):
        """Project RotatE relation components back onto the unit circle."""
        if self.model != "rotate":
            return
        h = self.dim // 2
        mod = torch.sqrt(self.relation[:, :h] ** 2 + self.relation[:, h:] ** 2).clamp_min(1e-12)
        self.relation[:, :h] /= mod
        self.relation[:, h:] /= mod

    def save(self, path):
        with open(path, "wb") as fh:
            np.savez(fh, model=np.array(self.model), score_norm=np.array(self.score_norm),
                     dictionary_hash=np.array(self.dictionary_hash),
                     entity=self.entity.detach().numpy(),
                     relation=self.relation.detach().numpy())

    @classmethod
    def load(cls, path) -> EmbeddingTable:
        with np.load(path, allow_pickle=False) as z:
            return cls(torch.from_numpy(z["entity"].copy()), torch.from_numpy(z["relation"].copy()),
                       str(z["model"]), int(z["score_norm"]), str(z["dictionary_hash"]))


def _idx(x) -> torch.Tensor:
    return torch.from_numpy(np.array(x, dtype=np.int64))


def _rotate(emb: EmbeddingTable, s, r) -> tuple[torch.Tensor, torch.Tensor]:
    h = emb.dim // 2
    es, rr = emb.entity[_idx(s)], emb.relation[_idx(r)]
    a, b = es[..., :h], es[..., h:]
    c, d = rr[..., :h], rr[..., h:]
    return a * c - b * d, a * d + b * c


def distance(emb: EmbeddingTable, s, r, o, p: int | None = None) -> torch.Tensor:
    """``||e_s (+|o) e_r - e_o||`` for integer id arrays (differentiable)."""
    p = emb.score_norm if p is None else p
    if emb.model == "transe":
        diff = emb.entity[_idx(s)] + emb.relation[_idx(r)] - emb.entity[_idx(o)]
        return torch.linalg.vector_norm(diff, ord=p, dim=-1)
    re, im = _rotate(emb, s, r)
    h = emb.dim // 2
    eo = emb.entity[_idx(o)]
    mod = torch.sqrt((re - eo[..., :h]) ** 2 + (im - eo[..., h:]) ** 2 + 1e-30)
    return mod.sum(dim=-1)


def score(emb: EmbeddingTable, s, r, o) -> torch.Tensor:
    return -distance(emb, s, r, o)


def score_transe(emb: EmbeddingTable, t) -> float:
    """``-||e_s + e_r - e_o||_1`` of a single triple."""
    s, r, o = t
    diff = emb.entity[s] + emb.relation[r] - emb.entity[o]
    return -float(diff.abs().sum())


def score_rotate(emb: EmbeddingTable, t) -> float:
    """``-sum_k |e_s,k * r_k - e_o,k|`` over the complex components."""
    if emb.dim % 2:
        raise ValueError("RotatE needs an even embedding dimension")
    s, r, o = t
    h = emb.dim // 2
    es = torch.complex(emb.entity[s, :h], emb.entity[s, h:])
    eo = torch.complex(emb.entity[o, :h], emb.entity[o, h:])
    rr = torch.complex(emb.relation[r, :h], emb.relation[r, h:])
    return -float((es * rr - eo).abs().sum())


def constrained_score(emb: EmbeddingTable, t, k: DomainConstraintSet) -> float:
    """Base score inside the constraint domain, ``-inf`` outside."""
    s, r, o = (int(x) for x in t)
    if not k.contains(s, r, o):
        return -math.inf
    return float(score(emb, [s], [r], [o])[0])


def margin_loss(pos_dist, neg_dist, gamma: float = 0.2):
    """``max(0, pos_dist + gamma - neg_dist)``; works on floats or tensors."""
    if isinstance(pos_dist, torch.Tensor) or isinstance(neg_dist, torch.Tensor):
        return torch.clamp(pos_dist + gamma - neg_dist, min=0.0)
    return max(0.0, pos_dist + gamma - neg_dist)


# -- negative sampling -----------------------------------------------------------

def _slot_candidates(kg: KnowledgeGraph, r: int, head: bool, respect: bool) -> np.ndarray:
    if not respect:
        return np.arange(kg.entity_count)
    mask = kg.constraints.subject_mask(r) if head else kg.constraints.object_mask(r)
    return np.nonzero(mask)[0]


def negative_sample_slcwa(t, kg: KnowledgeGraph, rng: np.random.Generator,
                          respect_constraints: bool = False,
                          max_attempts: int = 100) -> tuple[Triple, bool]:
    """Corrupt head or tail of ``t`` (fair coin) with a uniform entity.

    Redraws up to ``max_attempts`` times while the corruption is a known
    positive of ``kg``. Returns the last draw and whether it is still a
    known positive.
    """
    s, r, o = (int(x) for x in t)
    head = bool(rng.random() < 0.5)
    cand = _slot_candidates(kg, r, head, respect_constraints)
    if len(cand) == 0:
        raise ValueError(f"no constraint-satisfying candidates for relation {r}")
    neg = Triple(s, r, o)
    for _ in range(max_attempts):
        e = int(cand[rng.integers(len(cand))])
        neg = Triple(e, r, o) if head else Triple(s, r, e)
        if not kg.contains([neg])[0]:
            return neg, False
    return neg, True


def sample_negatives(batch: np.ndarray, kg: KnowledgeGraph, rng: np.random.Generator,
                     respect_constraints: bool = False, max_attempts: int = 100) -> np.ndarray:
    """Vectorized :func:`negative_sample_slcwa` over a batch of triples."""
    batch = np.asarray(batch, dtype=np.int64)
    n = len(batch)
    head = rng.random(n) < 0.5
    out = batch.copy()
    if not respect_constraints or kg.constraints.is_trivial:
        todo = np.arange(n)
        for _ in range(max_attempts):
            e = rng.integers(kg.entity_count, size=len(todo))
            h = head[todo]
            out[todo[h], 0] = e[h]
            out[todo[~h], 2] = e[~h]
            todo = todo[kg.contains(out[todo])]
            if not len(todo):
                break
        return out
    pools = {}
    for r in np.unique(batch[:, 1]):
        for side in (True, False):
            pool = _slot_candidates(kg, int(r), side, True)
            if len(pool) == 0:
                raise ValueError(f"no constraint-satisfying candidates for relation {r}")
            pools[int(r), side] = pool
    todo = np.arange(n)
    for _ in range(max_attempts):
        for k in todo:
            pool = pools[int(batch[k, 1]), bool(head[k])]
            out[k, 0 if head[k] else 2] = pool[rng.integers(len(pool))]
        todo = todo[kg.contains(out[todo])]
        if not len(todo):
            break
    return out


# -- exact likelihood ----------------------------------------------------------------

def _relation_score_matrix(emb: EmbeddingTable, r: int, subj: torch.Tensor,
                           obj: torch.Tensor) -> torch.Tensor:
    """Scores of all (subject, r, object) pairs for the given entity id vectors."""
    es = emb.entity[subj]
    eo = emb.entity[obj]
    if emb.model == "transe":
        diff = (es + emb.relation[r])[:, None, :] - eo[None, :, :]
        return -torch.linalg.vector_norm(diff, ord=emb.score_norm, dim=-1)
    h = emb.dim // 2
    c, d = emb.relation[r, :h], emb.relation[r, h:]
    re = es[:, :h] * c - es[:, h:] * d
    im = es[:, :h] * d + es[:, h:] * c
    dre = re[:, None, :] - eo[None, :, :h]
    dim_ = im[:, None, :] - eo[None, :, h:]
    return -torch.sqrt(dre ** 2 + dim_ ** 2 + 1e-30).sum(-1)


def log_partition_function(emb: EmbeddingTable, kg: KnowledgeGraph,
                           k: DomainConstraintSet | None = None,
                           term_cap: int = DEFAULT_TERM_CAP) -> torch.Tensor:
    """``log Z`` with ``Z = sum over K of exp(score)``, by exhaustive enumeration."""
    n_e, n_r = kg.entity_count, kg.relation_count
    if n_e * n_e * n_r > term_cap:
        raise ValueError(
            f"exact partition function needs {n_e * n_e * n_r} terms (cap {term_cap}); "
            "exhaustive evaluation is only meant for desk-scale graphs")
    k = kg.constraints if k is None else k
    parts = []
    for r in range(n_r):
        subj = torch.as_tensor(np.nonzero(k.subject_mask(r))[0])
        obj = torch.as_tensor(np.nonzero(k.object_mask(r))[0])
        if len(subj) == 0 or len(obj) == 0:
            continue
        parts.append(torch.logsumexp(_relation_score_matrix(emb, r, subj, obj).reshape(-1), 0))
    if not parts:
        raise ValueError("constraint domain K is empty")
    return torch.logsumexp(torch.stack(parts), 0)


def partition_function(emb: EmbeddingTable, kg: KnowledgeGraph,
                       k: DomainConstraintSet | None = None,
                       term_cap: int = DEFAULT_TERM_CAP) -> float:
    return float(torch.exp(log_partition_function(emb, kg, k, term_cap)))


def mle_loss(emb: EmbeddingTable, kg: KnowledgeGraph, k: DomainConstraintSet | None = None,
             triples=None) -> torch.Tensor:
    """Negative log-likelihood ``|G| log Z - sum_G score`` of the training triples."""
    k = kg.constraints if k is None else k
    T = kg.triples if triples is None else np.asarray(triples).reshape(-1, 3)
    inside = k.contains(T[:, 0], T[:, 1], T[:, 2])
    if not np.all(inside):
        bad = T[np.argmin(inside)]
        raise ValueError(f"training triple {tuple(int(x) for x in bad)} lies outside the constraint domain")
    log_z = log_partition_function(emb, kg, k)
    return len(T) * log_z - score(emb, T[:, 0], T[:, 1], T[:, 2]).sum()


# -- training -------------------------------------------------------------------

@dataclass
class TrainingResult:
    embeddings: EmbeddingTable
    loss_trace: list[float] = field(default_factory=list)
    flagged_negatives: int = 0


def train_kge(kg: KnowledgeGraph, config: KgeConfig) -> TrainingResult:
    """Train embeddings on ``kg`` (the training split) with Adam.

    ``slcwa`` mode: shuffled minibatches, one corrupted triple per positive
    (``negatives_per_positive`` copies), margin loss on L``margin_norm``
    distances. ``mle`` mode: full-batch exact negative log-likelihood.
    """
    emb = EmbeddingTable.initialize(kg.entity_count, kg.relation_count, config.dim,
                                    config.model, config.seed, config.score_norm,
                                    kg.dictionary_hash())
    emb.requires_grad_(True)
    state = AdamState()
    rng = np.random.default_rng(config.seed + 1)
    trace: list[float] = []
    flagged = 0
    T = kg.triples
    for epoch in range(config.epochs):
        if config.training_mode == "mle":
            loss = mle_loss(emb, kg)
            value = loss.item()
            _check_finite(value, epoch)
            grads = torch.autograd.grad(loss, [emb.entity, emb.relation])
            adam_step(emb.parameters(), dict(zip(("entity", "relation"), grads)), state,
                      config.learning_rate, config.beta1, config.beta2, config.eps)
            emb.normalize_relations()
            trace.append(value / max(len(T), 1))
            continue
        perm = rng.permutation(len(T))
        total, count = 0.0, 0
        for start in range(0, len(T), config.batch_size):
            pos = T[perm[start:start + config.batch_size]]
            pos = np.repeat(pos, config.negatives_per_positive, axis=0)
            neg = sample_negatives(pos, kg, rng, config.respect_constraints)
            flagged += int(kg.contains(neg).sum())
            d_pos = distance(emb, pos[:, 0], pos[:, 1], pos[:, 2], config.margin_norm)
            d_neg = distance(emb, neg[:, 0], neg[:, 1], neg[:, 2], config.margin_norm)
            loss = margin_loss(d_pos, d_neg, config.margin).mean()
            value = loss.item()
            _check_finite(value, epoch)
            grads = torch.autograd.grad(loss, [emb.entity, emb.relation])
            adam_step(emb.parameters(), dict(zip(("entity", "relation"), grads)), state,
                      config.learning_rate, config.beta1, config.beta2, config.eps)
            emb.normalize_relations()
            total += value * len(pos)
            count += len(pos)
        trace.append(total / max(count, 1))
    emb.requires_grad_(False)
    return TrainingResult(emb, trace, flagged)


def _check_finite(value: float, epoch: int):
    if not math.isfinite(value):
        raise FloatingPointError(f"non-finite KGE loss {value} at epoch {epoch}")


def config_dict(config: KgeConfig) -> dict:
    return asdict(config)


def save_embeddings(emb: EmbeddingTable, path) -> Path:
    path = Path(path)
    emb.save(path)
    return path
