"""Molecular graph data model, validity and quantization.

A molecule is a pair ``(X, A)``: ``X`` is an ``N x M`` node feature matrix
(one-hot atom types when discrete) and ``A`` a symmetric ``N x N`` matrix of
bond orders (0 none, 1 single, 2 double, 3 triple). Hydrogens are implicit.

The diffusion model works on an affine "encoded" version of the same
matrices, see :func:`encode` and :func:`decode`.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.csgraph import connected_components

__all__ = [
    "AtomVocabulary",
    "QM9_VOCAB",
    "MolecularGraph",
    "ValidityReport",
    "validity_check",
    "quantize",
    "encode",
    "decode",
    "from_atoms",
]

BOND_ORDERS = (0, 1, 2, 3)


@dataclass(frozen=True)
class AtomVocabulary:
    """Ordered atom symbols with their maximum valences."""

    symbols: tuple[str, ...] = ("C", "N", "O", "F")
    valences: tuple[int, ...] = (4, 3, 2, 1)

    def __post_init__(self):
        if len(self.symbols) != len(self.valences):
            raise ValueError("symbols and valences must have equal length")
        if len(set(self.symbols)) != len(self.symbols):
            raise ValueError("atom symbols must be unique")
        if any(v <= 0 for v in self.valences):
            raise ValueError("valences must be positive")

    def __len__(self) -> int:
        return len(self.symbols)

    def index(self, symbol: str) -> int:
        return self.symbols.index(symbol)

    def valence(self, symbol_or_index) -> int:
        if isinstance(symbol_or_index, str):
            symbol_or_index = self.index(symbol_or_index)
        return self.valences[int(symbol_or_index)]

    def hash(self) -> str:
        text = ",".join(f"{s}:{v}" for s, v in zip(self.symbols, self.valences))
        return hashlib.sha1(text.encode()).hexdigest()[:16]


QM9_VOCAB = AtomVocabulary()


@dataclass
class MolecularGraph:
    """Node features ``X`` and bond-order adjacency ``A`` of one molecule."""

    X: np.ndarray
    A: np.ndarray
    discrete: bool = True
    vocab: AtomVocabulary = field(default=QM9_VOCAB, repr=False)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.A = np.asarray(self.A, dtype=float)
        n = self.X.shape[0]
        if self.X.ndim != 2 or self.A.shape != (n, n):
            raise ValueError(
                f"inconsistent shapes X{self.X.shape} A{self.A.shape}")

    @property
    def n_atoms(self) -> int:
        return self.X.shape[0]

    @property
    def atom_types(self) -> np.ndarray:
        return np.argmax(self.X, axis=1) if self.n_atoms else np.zeros(0, int)

    @property
    def symbols(self) -> list[str]:
        return [self.vocab.symbols[k] for k in self.atom_types]

    def bond_orders(self) -> np.ndarray:
        return np.rint(self.A).astype(int)

    def bonds(self) -> list[tuple[int, int, int]]:
        """Bonds as ``(i, j, order)`` with ``i < j``."""
        B = self.bond_orders()
        i, j = np.nonzero(np.triu(B, 1))
        return [(int(a), int(b), int(B[a, b])) for a, b in zip(i, j)]

    def neighbors(self, i: int) -> list[int]:
        return [int(j) for j in np.nonzero(self.bond_orders()[i])[0] if j != i]

    def permute(self, perm) -> MolecularGraph:
        """Relabel nodes so that new node ``k`` is old node ``perm[k]``."""
        perm = np.asarray(perm)
        return MolecularGraph(self.X[perm], self.A[np.ix_(perm, perm)],
                              self.discrete, self.vocab)

    def subgraph(self, nodes) -> MolecularGraph:
        nodes = np.asarray(sorted(nodes), dtype=int)
        return MolecularGraph(self.X[nodes], self.A[np.ix_(nodes, nodes)],
                              self.discrete, self.vocab)

    def components(self) -> list[list[int]]:
        if self.n_atoms == 0:
            return []
        _, labels = connected_components(self.bond_orders() > 0, directed=False)
        comps: dict[int, list[int]] = {}
        for node, lab in enumerate(labels):
            comps.setdefault(int(lab), []).append(node)
        return list(comps.values())

    def largest_component(self) -> MolecularGraph:
        comps = self.components()
        if len(comps) <= 1:
            return self
        # ties go to the component holding the lowest node index
        best = max(comps, key=lambda c: (len(c), -min(c)))
        return self.subgraph(best)

    def implicit_hydrogens(self) -> np.ndarray:
        used = self.bond_orders().sum(axis=1)
        cap = np.array([self.vocab.valences[k] for k in self.atom_types], dtype=int)
        return np.maximum(cap - used, 0)

    def copy(self) -> MolecularGraph:
        return MolecularGraph(self.X.copy(), self.A.copy(), self.discrete, self.vocab)


def from_atoms(symbols, bonds, vocab: AtomVocabulary = QM9_VOCAB) -> MolecularGraph:
    """Build a discrete graph from atom symbols and ``(i, j, order)`` bonds."""
    n = len(symbols)
    X = np.zeros((n, len(vocab)))
    for i, s in enumerate(symbols):
        X[i, vocab.index(s)] = 1.0
    A = np.zeros((n, n))
    for i, j, order in bonds:
        A[i, j] = A[j, i] = order
    return MolecularGraph(X, A, True, vocab)


@dataclass
class ValidityReport:
    valid: bool
    violations: list[str]
    n_fragments: int
    largest_fragment: int

    def __bool__(self) -> bool:
        return self.valid


def validity_check(g: MolecularGraph, vocab: AtomVocabulary | None = None) -> ValidityReport:
    """Valence-sum validity of a discrete graph.

    Valid iff the graph has at least one atom, no self-bonds, only bond
    orders in {0, 1, 2, 3}, and no atom whose bond-order sum exceeds its
    maximum valence.
    """
    vocab = vocab or g.vocab
    violations: list[str] = []
    n = g.n_atoms
    if n == 0:
        return ValidityReport(False, ["empty graph"], 0, 0)
    A = g.A
    if not np.allclose(A, A.T):
        violations.append("adjacency not symmetric")
    for i in np.nonzero(np.diag(A))[0]:
        violations.append(f"self-bond on atom {int(i)}")
    B = np.rint(A)
    if np.any(np.abs(A - B) > 1e-9) or np.any((B < 0) | (B > 3)):
        violations.append("bond orders outside {0,1,2,3}")
    B = np.clip(B, 0, 3)
    np.fill_diagonal(B, 0)
    used = B.sum(axis=1)
    for i, k in enumerate(g.atom_types):
        cap = vocab.valences[k]
        if used[i] > cap:
            violations.append(
                f"atom {i} ({vocab.symbols[k]}) bond-order sum {int(used[i])} > valence {cap}")
    comps = g.components()
    return ValidityReport(
        not violations, violations, len(comps), max(len(c) for c in comps))


# -- continuous representation -------------------------------------------------

def encode(g: MolecularGraph) -> tuple[np.ndarray, np.ndarray]:
    """Affine map of a discrete graph into the diffusion space.

    ``X -> 2X - 1`` (one-hot rows become +-1) and off-diagonal
    ``A -> A - 1`` (no bond -1, single 0, double 1, triple 2); the diagonal
    stays 0.
    """
    X = 2.0 * g.X - 1.0
    A = g.A - 1.0
    np.fill_diagonal(A, 0.0)
    return X, A


def decode(X_enc: np.ndarray, A_enc: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of :func:`encode` (diagonal of A forced to zero)."""
    X = (np.asarray(X_enc, float) + 1.0) / 2.0
    A = np.asarray(A_enc, float) + 1.0
    np.fill_diagonal(A, 0.0)
    return X, A


def _round_half_down(x: np.ndarray) -> np.ndarray:
    return np.ceil(x - 0.5)


def quantize(
    g: MolecularGraph,
    vocab: AtomVocabulary | None = None,
    node_keep_threshold: float = 0.5,
    temperature: float = 0.25,
) -> MolecularGraph:
    """Convert a continuous graph (data space) into a discrete molecule.

    Atom type is the argmax of each ``X`` row. Bond orders are the nearest
    value in {0, 1, 2, 3} of the symmetrized ``A``, half-integer ties rounding
    down. A node is dropped when the maximum of ``softmax(X_row / temperature)``
    is below ``node_keep_threshold``; afterwards only the largest connected
    component is kept.
    """
    vocab = vocab or g.vocab
    X = np.asarray(g.X, float)
    n, m = X.shape
    if n == 0:
        return MolecularGraph(np.zeros((0, m)), np.zeros((0, 0)), True, vocab)
    A = 0.5 * (g.A + g.A.T)
    B = np.clip(_round_half_down(A), 0, 3)
    np.fill_diagonal(B, 0)
    z = X / temperature
    z = z - z.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    keep = np.nonzero(p.max(axis=1) >= node_keep_threshold)[0]
    Xd = np.zeros((n, m))
    Xd[np.arange(n), np.argmax(X, axis=1)] = 1.0
    out = MolecularGraph(Xd[keep], B[np.ix_(keep, keep)], True, vocab)
    if out.n_atoms == 0:
        return out
    return out.largest_component()
