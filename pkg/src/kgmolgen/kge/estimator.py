"""scikit-learn style wrapper around :func:`train_kge`."""
from __future__ import annotations

import numpy as np
import torch
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .._validation import check_kg
from ..kg.store import KnowledgeGraph, complete_triple
from .evaluation import evaluate, rank_all, metric_summary
from .model import KgeConfig, score, train_kge

__all__ = ["KGEModel"]


class KGEModel(BaseEstimator):
    """Knowledge-graph embedding estimator (TransE or RotatE).

    Parameters mirror :class:`KgeConfig`. ``fit`` takes a
    :class:`KnowledgeGraph` holding the training triples.
    """

    def __init__(self, model="transe", dim=32, learning_rate=1e-4, margin=0.2, epochs=100,
                 batch_size=256, negatives_per_positive=1, training_mode="slcwa",
                 respect_constraints=True, margin_norm=2, score_norm=1, beta1=0.9,
                 beta2=0.999, eps=1e-8, seed=0):
        self.model = model
        self.dim = dim
        self.learning_rate = learning_rate
        self.margin = margin
        self.epochs = epochs
        self.batch_size = batch_size
        self.negatives_per_positive = negatives_per_positive
        self.training_mode = training_mode
        self.respect_constraints = respect_constraints
        self.margin_norm = margin_norm
        self.score_norm = score_norm
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.seed = seed

    def config(self) -> KgeConfig:
        return KgeConfig(**self.get_params())

    def fit(self, kg: KnowledgeGraph, y=None):
        kg = check_kg(kg)
        result = train_kge(kg, self.config())
        self.embeddings_ = result.embeddings
        self.loss_trace_ = result.loss_trace
        self.flagged_negatives_ = result.flagged_negatives
        self.kg_ = kg
        return self

    def score_triples(self, triples) -> np.ndarray:
        check_is_fitted(self, "embeddings_")
        t = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
        with torch.no_grad():
            return score(self.embeddings_, t[:, 0], t[:, 1], t[:, 2]).numpy()

    def scorer(self):
        return lambda s, r, o: self.score_triples(np.stack([s, r, o], 1))

    def complete(self, pattern, top_k: int = 10, kg: KnowledgeGraph | None = None):
        check_is_fitted(self, "embeddings_")
        return complete_triple(kg or self.kg_, self.scorer(), pattern, top_k)

    def score(self, test: KnowledgeGraph, kg_filter: KnowledgeGraph | None = None) -> float:
        """Filtered MRR on ``test`` (head and tail pooled)."""
        check_is_fitted(self, "embeddings_")
        ranked = rank_all(self.embeddings_, test, kg_filter or self.kg_, test.constraints)
        return metric_summary(ranked["head"] + ranked["tail"])["mrr"]

    def evaluate(self, test: KnowledgeGraph, kg_filter: KnowledgeGraph, **kw) -> dict:
        check_is_fitted(self, "embeddings_")
        return evaluate([self.embeddings_], test, kg_filter, test.constraints, [self.seed], **kw)
