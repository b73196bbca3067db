"""Rank-based link-prediction metrics: MRR, Hits@k and adjusted mean rank."""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import torch

from ..kg.store import DomainConstraintSet, KnowledgeGraph
from .model import EmbeddingTable, score

__all__ = [
    "RankResult",
    "rank_true_entity",
    "rank_all",
    "mrr",
    "hits_at_k",
    "adjusted_mean_rank",
    "metric_summary",
    "evaluate",
    "random_scorer",
]

Scorer = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


@dataclass
class RankResult:
    rank: int
    candidates: int


def embedding_scorer(emb: EmbeddingTable) -> Scorer:
    def fn(s, r, o):
        with torch.no_grad():
            return score(emb, s, r, o).numpy()
    return fn


def random_scorer(seed: int = 0) -> Scorer:
    """Scores drawn i.i.d. uniform; the chance-level baseline."""
    rng = np.random.default_rng(seed)

    def fn(s, r, o):
        return rng.random(len(np.asarray(s)))
    return fn


def _as_scorer(model) -> Scorer:
    return embedding_scorer(model) if isinstance(model, EmbeddingTable) else model


def rank_true_entity(model, kg_filter: KnowledgeGraph | None, t, slot: str,
                     k: DomainConstraintSet | None = None, filtered: bool = True) -> RankResult:
    """Realistic rank of the true entity of ``t`` in ``slot`` ('head' or 'tail').

    Candidates are entities allowed by the constraint set ``k`` for that
    slot. In the filtered setting, candidates that form a known positive of
    ``kg_filter`` (other than ``t``) are removed. Ties are resolved by the
    mean of optimistic and pessimistic rank, rounded half up.
    """
    if slot not in ("head", "tail"):
        raise ValueError("slot must be 'head' or 'tail'")
    scorer = _as_scorer(model)
    s, r, o = (int(x) for x in t)
    n_e = kg_filter.entity_count if kg_filter is not None else None
    if k is not None:
        mask = k.subject_mask(r) if slot == "head" else k.object_mask(r)
    else:
        mask = np.ones(n_e, dtype=bool)
    true = s if slot == "head" else o
    if not mask[true]:
        raise ValueError(f"true {slot} entity {true} of {(s, r, o)} is excluded by the constraints")
    cand = np.nonzero(mask)[0]
    if slot == "head":
        trip = np.stack([cand, np.full_like(cand, r), np.full_like(cand, o)], 1)
    else:
        trip = np.stack([np.full_like(cand, s), np.full_like(cand, r), cand], 1)
    if filtered and kg_filter is not None:
        known = kg_filter.contains(trip) & (cand != true)
        cand, trip = cand[~known], trip[~known]
    scores = np.asarray(scorer(trip[:, 0], trip[:, 1], trip[:, 2]), dtype=float)
    true_score = scores[np.nonzero(cand == true)[0][0]]
    optimistic = 1 + int(np.sum(scores > true_score))
    pessimistic = int(np.sum(scores >= true_score))
    rank = (optimistic + pessimistic + 1) // 2
    return RankResult(rank, len(cand))


def rank_all(model, test: KnowledgeGraph, kg_filter: KnowledgeGraph | None,
             k: DomainConstraintSet | None = None, filtered: bool = True,
             slots: Sequence[str] = ("head", "tail")) -> dict[str, list[RankResult]]:
    scorer = _as_scorer(model)
    return {slot: [rank_true_entity(scorer, kg_filter, t, slot, k, filtered) for t in test]
            for slot in slots}


def mrr(ranks) -> float:
    ranks = np.asarray(ranks, dtype=float)
    if ranks.size == 0:
        raise ValueError("mrr of an empty rank list")
    return float(np.mean(1.0 / ranks))


def hits_at_k(ranks, k: int) -> float:
    if k < 1:
        raise ValueError("k must be >= 1")
    ranks = np.asarray(ranks)
    if ranks.size == 0:
        raise ValueError("hits@k of an empty rank list")
    return float(np.mean(ranks <= k))


def adjusted_mean_rank(ranks, candidate_counts) -> float:
    """Mean rank divided by its expectation ``mean((n + 1) / 2)`` under random scoring."""
    ranks = np.asarray(ranks, dtype=float)
    counts = np.asarray(candidate_counts, dtype=float)
    if ranks.shape != counts.shape:
        raise ValueError(f"ranks and candidate counts misaligned: {ranks.shape} vs {counts.shape}")
    if ranks.size == 0:
        raise ValueError("adjusted mean rank of an empty rank list")
    if np.any(counts < 1):
        raise ValueError("candidate counts must be >= 1")
    return float(ranks.mean() / np.mean((counts + 1.0) / 2.0))


def metric_summary(results: Sequence[RankResult]) -> dict[str, float]:
    ranks = [x.rank for x in results]
    counts = [x.candidates for x in results]
    out = {
        "amr": adjusted_mean_rank(ranks, counts),
        "mrr": mrr(ranks),
        "hits@1": hits_at_k(ranks, 1),
        "hits@10": hits_at_k(ranks, 10),
    }
    assert out["hits@1"] <= out["hits@10"], out
    assert out["mrr"] >= out["hits@1"], out
    return out


METRICS = ("amr", "mrr", "hits@1", "hits@10")


def evaluate(models: Sequence, test: KnowledgeGraph, kg_filter: KnowledgeGraph | None,
             constraints: DomainConstraintSet | None, seeds: Sequence[int],
             filtered: bool = True, dataset: str = "", model_name: str = "") -> dict:
    """Per-seed and mean/std metrics with head and tail corruption pooled.

    ``models[i]`` is the embedding table (or scorer) trained with
    ``seeds[i]``. Standard deviations are population (ddof=0) values.
    """
    if len(models) != len(seeds):
        raise ValueError("one model per seed is required")
    per_seed = []
    for model, seed in zip(models, seeds):
        ranked = rank_all(model, test, kg_filter, constraints, filtered)
        pooled = ranked["head"] + ranked["tail"]
        row = {"seed": int(seed), **metric_summary(pooled),
               "head": metric_summary(ranked["head"]),
               "tail": metric_summary(ranked["tail"]),
               "n_cases": len(pooled)}
        per_seed.append(row)
    mean = {m: float(np.mean([r[m] for r in per_seed])) for m in METRICS}
    std = {m: float(np.std([r[m] for r in per_seed])) for m in METRICS}
    return {
        "dataset": dataset,
        "model": model_name,
        "seeds": [int(s) for s in seeds],
        "filtered": filtered,
        "per_seed": per_seed,
        "mean": mean,
        "std": std,
    }


def format_report(report: dict) -> str:
    """One-line ``AMR / MRR / Hits@1 / Hits@10`` with +- dispersion."""
    m, s = report["mean"], report["std"]
    return " / ".join(f"{m[k]:.3f}±{s[k]:.3f}" for k in METRICS)


def report_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True)
