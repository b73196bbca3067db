from .estimator import KGEModel
from .evaluation import (adjusted_mean_rank, evaluate, hits_at_k, metric_summary, mrr,
                         random_scorer, rank_all, rank_true_entity)
from .model import (EmbeddingTable, KgeConfig, constrained_score, distance, log_partition_function,
                    margin_loss, mle_loss, negative_sample_slcwa, partition_function,
                    sample_negatives, score, score_rotate, score_transe, train_kge)

__all__ = [
    "KGEModel", "KgeConfig", "EmbeddingTable", "score", "score_transe", "score_rotate",
    "distance", "constrained_score", "negative_sample_slcwa", "sample_negatives", "margin_loss",
    "partition_function", "log_partition_function", "mle_loss", "train_kge",
    "rank_true_entity", "rank_all", "mrr", "hits_at_k", "adjusted_mean_rank", "metric_summary",
    "evaluate", "random_scorer",
]
