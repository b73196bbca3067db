"""Canonical atom ordering and graph hashing.

Morgan-style iterative refinement of atom invariants, completed by an
individualization search over the remaining ties. Every tie-break is tried
and the lexicographically smallest certificate wins, so the result does not
depend on the input atom order.
"""
from __future__ import annotations

import hashlib

import numpy as np

from .graph import MolecularGraph

__all__ = ["canonical_order", "canonical_ranks", "canonical_hash", "certificate"]


def _refine(colors: list[int], nbrs: list[list[tuple[int, int]]]) -> list[int]:
    """Refine a coloring until the number of color classes stops growing."""
    n = len(colors)
    n_classes = len(set(colors))
    while True:
        sigs = [
            (colors[i], tuple(sorted((order, colors[j]) for j, order in nbrs[i])))
            for i in range(n)
        ]
        table = {s: k for k, s in enumerate(sorted(set(sigs)))}
        new = [table[s] for s in sigs]
        if len(table) == n_classes:
            return new
        colors, n_classes = new, len(table)


def _initial_colors(g: MolecularGraph, nbrs) -> list[int]:
    types = g.atom_types
    inv = [
        (int(types[i]), len(nbrs[i]), sum(o for _, o in nbrs[i]))
        for i in range(g.n_atoms)
    ]
    table = {s: k for k, s in enumerate(sorted(set(inv)))}
    return [table[s] for s in inv]


def _certificate(order, types, B) -> tuple:
    o = np.asarray(order)
    sub = B[np.ix_(o, o)]
    iu = np.triu_indices(len(o), 1)
    return tuple(int(t) for t in types[o]) + tuple(int(x) for x in sub[iu])


def canonical_order(g: MolecularGraph) -> list[int]:
    """Atom indices listed in canonical order."""
    n = g.n_atoms
    if n == 0:
        return []
    B = g.bond_orders()
    np.fill_diagonal(B, 0)
    nbrs = [[(int(j), int(B[i, j])) for j in np.nonzero(B[i])[0]] for i in range(n)]
    types = g.atom_types
    best: list = [None, None]

    def search(colors):
        colors = _refine(colors, nbrs)
        if len(set(colors)) == n:
            order = sorted(range(n), key=colors.__getitem__)
            cert = _certificate(order, types, B)
            if best[0] is None or cert < best[0]:
                best[0], best[1] = cert, order
            return
        sizes: dict[int, int] = {}
        for c in colors:
            sizes[c] = sizes.get(c, 0) + 1
        target = min((s, c) for c, s in sizes.items() if s > 1)[1]
        for v in range(n):
            if colors[v] != target:
                continue
            split = [2 * c + (1 if (c == target and i != v) else 0)
                     for i, c in enumerate(colors)]
            search(split)

    search(_initial_colors(g, nbrs))
    return best[1]


def canonical_ranks(g: MolecularGraph) -> np.ndarray:
    """``ranks[i]`` is the canonical position of atom ``i``."""
    order = canonical_order(g)
    ranks = np.empty(len(order), dtype=int)
    ranks[np.asarray(order, dtype=int)] = np.arange(len(order))
    return ranks


def certificate(g: MolecularGraph) -> tuple:
    if g.n_atoms == 0:
        return ()
    B = g.bond_orders()
    np.fill_diagonal(B, 0)
    return _certificate(canonical_order(g), g.atom_types, B)


def canonical_hash(g: MolecularGraph) -> str:
    """Hex digest that collides exactly for isomorphic discrete graphs."""
    cert = certificate(g)
    text = f"{g.n_atoms}|{','.join(g.vocab.symbols)}|" + ",".join(map(str, cert))
    return hashlib.sha256(text.encode()).hexdigest()[:32]
