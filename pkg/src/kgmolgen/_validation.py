"""Input validation helpers shared by the estimators."""
from __future__ import annotations

import numpy as np

from .chem.graph import MolecularGraph
from .kg.store import KnowledgeGraph


def check_kg(kg) -> KnowledgeGraph:
    if not isinstance(kg, KnowledgeGraph):
        raise TypeError(f"expected a KnowledgeGraph, got {type(kg).__name__}")
    if len(kg) == 0:
        raise ValueError("knowledge graph has no triples")
    return kg


def check_graphs(graphs, discrete: bool = True) -> list[MolecularGraph]:
    """Validate a non-empty sequence of molecular graphs."""
    graphs = list(graphs)
    if not graphs:
        raise ValueError("expected at least one molecular graph")
    for k, g in enumerate(graphs):
        if not isinstance(g, MolecularGraph):
            raise TypeError(f"item {k} is {type(g).__name__}, not MolecularGraph")
        if g.n_atoms == 0:
            raise ValueError(f"graph {k} has no atoms")
        if discrete and not g.discrete:
            raise ValueError(f"graph {k} is not discrete")
        if not np.allclose(g.A, g.A.T):
            raise ValueError(f"graph {k} has a non-symmetric adjacency matrix")
    return graphs


def check_finite_array(x, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains non-finite values")
    return x
