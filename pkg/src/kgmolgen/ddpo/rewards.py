"""Terminal rewards for fine-tuning: drug-likeness, synthesizability and custom terms.

``q_proxy`` and ``s_proxy`` are small rule-based stand-ins for QED and
SAScore. They are named differently on purpose so reported numbers are
never mistaken for the real descriptors.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import networkx as nx
import numpy as np

from ..chem.fingerprint import bulk_tanimoto, fingerprint
from ..chem.graph import MolecularGraph, validity_check

__all__ = [
    "RewardWeights",
    "PROFILES",
    "profile",
    "reward",
    "q_proxy",
    "s_proxy",
    "novelty_term",
    "ring_count",
    "training_fingerprints",
]

# s_proxy complexity weights
W_RINGS = 0.15
W_BRANCH = 0.1
W_MACRO = 0.3


@dataclass(frozen=True)
class RewardWeights:
    """Weights of ``r = k1 Q + k2 S + k3 C`` (valid) or ``-k4`` (invalid).

    ``C = w_val * r_val + w_nov * r_nov + w_ctx * r_ctx`` where ``r_val`` is 1
    for a valid molecule, ``r_nov`` is :func:`novelty_term` and ``r_ctx``
    rewards closeness of the predicted context to a target vector.
    """

    k1: float = 0.0
    k2: float = 0.0
    k3: float = 1.0
    k4: float = 1.0
    w_val: float = 0.7
    w_nov: float = 0.2
    w_ctx: float = 0.0
    novelty_threshold: float = 0.4

    def __post_init__(self):
        vals = asdict(self)
        if not all(np.isfinite(v) for v in vals.values()):
            raise ValueError("reward weights must be finite")
        if min(self.k1, self.k2, self.k3) < 0:
            raise ValueError("k1, k2, k3 must be non-negative")
        if self.k4 <= 0:
            raise ValueError("k4 must be positive")
        if min(self.w_val, self.w_nov, self.w_ctx) < 0 or self.w_val + self.w_nov + self.w_ctx > 1 + 1e-12:
            raise ValueError("C sub-weights must be non-negative and sum to at most 1")

    def to_dict(self) -> dict:
        return asdict(self)


PROFILES = {
    "unconditional": RewardWeights(k1=0.0, k2=0.0, k3=1.0, k4=1.0, w_val=0.7, w_nov=0.2),
    "targeted": RewardWeights(k1=0.4, k2=0.3, k3=0.2, k4=1.0, w_val=0.7, w_nov=0.3),
}


def profile(name: str) -> RewardWeights:
    try:
        return PROFILES[name]
    except KeyError:
        raise KeyError(f"unknown reward profile {name!r}; available: {', '.join(sorted(PROFILES))}") from None


def _nx(g: MolecularGraph) -> nx.Graph:
    G = nx.Graph()
    G.add_nodes_from(range(g.n_atoms))
    G.add_edges_from((i, j) for i, j, _ in g.bonds())
    return G


def ring_count(g: MolecularGraph) -> int:
    """Cycle rank ``E - V + components``."""
    if g.n_atoms == 0:
        return 0
    return len(g.bonds()) - g.n_atoms + len(g.components())


def q_proxy(g: MolecularGraph) -> float:
    """Fraction of four drug-likeness rules satisfied.

    Rules: 4 to 30 heavy atoms; at most 5 donors (N or O carrying an
    implicit hydrogen); at most 10 acceptors (N plus O atoms); at most 4
    rings.
    """
    sym = np.array(g.symbols)
    hetero = (sym == "N") | (sym == "O")
    h = g.implicit_hydrogens()
    rules = (
        4 <= g.n_atoms <= 30,
        int(np.sum(hetero & (h > 0))) <= 5,
        int(np.sum(hetero)) <= 10,
        ring_count(g) <= 4,
    )
    return sum(rules) / 4.0


def s_proxy(g: MolecularGraph) -> float:
    """``1 - complexity`` clipped to [0, 1].

    Complexity adds 0.15 per ring beyond the second, 0.1 per atom with four
    or more heavy neighbours and 0.3 per ring of the minimum cycle basis
    with more than 8 atoms.
    """
    rings = ring_count(g)
    deg = (g.bond_orders() > 0).sum(axis=1) if g.n_atoms else np.zeros(0)
    macro = 0
    if rings:
        macro = sum(1 for cyc in nx.minimum_cycle_basis(_nx(g)) if len(cyc) > 8)
    complexity = W_RINGS * max(0, rings - 2) + W_BRANCH * int(np.sum(deg >= 4)) + W_MACRO * macro
    return float(np.clip(1.0 - complexity, 0.0, 1.0))


def training_fingerprints(graphs, radius: int = 2, nbits: int = 1024) -> np.ndarray:
    return np.stack([fingerprint(g, radius, nbits) for g in graphs]) if len(graphs) else \
        np.zeros((0, nbits), dtype=bool)


def max_similarity(g: MolecularGraph, training_fps: np.ndarray) -> float:
    if len(training_fps) == 0:
        return 0.0
    return float(bulk_tanimoto(fingerprint(g, nbits=training_fps.shape[1]), training_fps).max())


def novelty_term(g: MolecularGraph, training_fps: np.ndarray, threshold: float = 0.4) -> float:
    """1 below the similarity threshold, otherwise ``1 - max similarity``."""
    sim = max_similarity(g, training_fps)
    return 1.0 if sim < threshold else 1.0 - sim


def reward(g: MolecularGraph, c=None, w: RewardWeights = PROFILES["unconditional"],
           training_fps: np.ndarray | None = None, predictor=None) -> float:
    """Terminal reward of a discrete molecule.

    Invalid molecules get exactly ``-k4``. ``predictor(graphs) -> (n, d)``
    maps molecules to context space and is only needed when ``w_ctx > 0``.
    """
    if not validity_check(g).valid:
        return -w.k4
    fps = training_fps if training_fps is not None else np.zeros((0, 1024), dtype=bool)
    C = w.w_val
    if w.w_nov:
        C += w.w_nov * novelty_term(g, fps, w.novelty_threshold)
    if w.w_ctx and c is not None and predictor is not None:
        c = np.asarray(c, float)
        d = predictor([g])[0] - c
        C += w.w_ctx * float(np.exp(-np.dot(d, d) / len(c)))
    r = w.k3 * C
    if w.k1:
        r += w.k1 * q_proxy(g)
    if w.k2:
        r += w.k2 * s_proxy(g)
    return float(r)
