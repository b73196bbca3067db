"""Circular (Morgan-style) fingerprints and Tanimoto similarity."""
from __future__ import annotations

import hashlib
import struct

import numpy as np

from .graph import MolecularGraph

__all__ = ["fingerprint", "tanimoto", "bulk_tanimoto"]


def _h(*parts: int) -> int:
    data = struct.pack(f"<{len(parts)}q", *parts)
    return int.from_bytes(hashlib.blake2b(data, digest_size=8).digest(), "little") >> 1


def _ring_atoms(g: MolecularGraph) -> np.ndarray:
    # an atom is in a ring iff it has a bond that is not a bridge
    B = g.bond_orders() > 0
    np.fill_diagonal(B, False)
    n = g.n_atoms
    in_ring = np.zeros(n, dtype=bool)
    for i, j, _ in g.bonds():
        B[i, j] = B[j, i] = False
        # BFS from i without edge (i, j)
        seen = {i}
        frontier = [i]
        while frontier and j not in seen:
            nxt = []
            for u in frontier:
                for v in np.nonzero(B[u])[0]:
                    if v not in seen:
                        seen.add(int(v))
                        nxt.append(int(v))
            frontier = nxt
        B[i, j] = B[j, i] = True
        if j in seen:
            in_ring[i] = in_ring[j] = True
    return in_ring


def fingerprint(g: MolecularGraph, radius: int = 2, nbits: int = 1024) -> np.ndarray:
    """Boolean bit vector of hashed circular atom environments up to ``radius``."""
    n = g.n_atoms
    bits = np.zeros(nbits, dtype=bool)
    if n == 0:
        return bits
    B = g.bond_orders()
    np.fill_diagonal(B, 0)
    types = g.atom_types
    hs = g.implicit_hydrogens()
    ring = _ring_atoms(g)
    nbrs = [np.nonzero(B[i])[0] for i in range(n)]
    ids = [_h(int(types[i]), len(nbrs[i]), int(hs[i]), int(ring[i])) for i in range(n)]
    for ident in ids:
        bits[ident % nbits] = True
    for _ in range(radius):
        ids = [
            _h(ids[i], *sorted(_h(int(B[i, j]), ids[j]) for j in nbrs[i]))
            for i in range(n)
        ]
        for ident in ids:
            bits[ident % nbits] = True
    return bits


def tanimoto(f1, f2) -> float:
    """``|f1 & f2| / |f1 | f2|``; 1.0 when both vectors are empty."""
    f1 = np.asarray(f1, dtype=bool)
    f2 = np.asarray(f2, dtype=bool)
    if f1.shape != f2.shape:
        raise ValueError(f"fingerprint length mismatch: {f1.shape} vs {f2.shape}")
    union = np.count_nonzero(f1 | f2)
    if union == 0:
        return 1.0
    return np.count_nonzero(f1 & f2) / union


def bulk_tanimoto(f: np.ndarray, library: np.ndarray) -> np.ndarray:
    """Tanimoto of one fingerprint against every row of ``library``."""
    f = np.asarray(f, dtype=bool)
    library = np.asarray(library, dtype=bool)
    if library.ndim != 2 or library.shape[1] != f.shape[0]:
        raise ValueError("fingerprint length mismatch")
    inter = np.count_nonzero(library & f, axis=1)
    union = np.count_nonzero(library | f, axis=1)
    out = np.ones(len(library))
    nz = union > 0
    out[nz] = inter[nz] / union[nz]
    return out
