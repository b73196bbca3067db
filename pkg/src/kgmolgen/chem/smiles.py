"""SMILES reading and writing for small organic molecules.

Supported: organic-subset atoms present in the vocabulary, bracket atoms of
the form ``[Xh]`` (element plus optional hydrogen count), bonds ``- = # :``,
branches, ring closures ``1``-``9`` and ``%nn``, dot-disconnected fragments
and lowercase aromatic atoms (kekulized on input). Charges, isotopes and
stereochemistry are rejected.
"""
from __future__ import annotations

import re

import networkx as nx
import numpy as np

from .canon import canonical_ranks
from .graph import QM9_VOCAB, AtomVocabulary, MolecularGraph, validity_check

__all__ = ["SmilesError", "parse_smiles", "write_smiles"]

_BOND_SYMBOLS = {"-": 1, "=": 2, "#": 3, ":": "ar"}
_ORDER_SYMBOL = {1: "", 2: "=", 3: "#"}
_BRACKET = re.compile(r"^([A-Z][a-z]?|[a-z])(H(\d*))?$")


class SmilesError(ValueError):
    """Raised when a SMILES string cannot be parsed."""

    def __init__(self, message: str, position: int | None = None, smiles: str = ""):
        self.position = position
        where = f" at position {position}" if position is not None else ""
        super().__init__(f"{message}{where}: {smiles!r}")


class _Atom:
    __slots__ = ("symbol", "aromatic", "hcount", "pos")

    def __init__(self, symbol, aromatic, hcount, pos):
        self.symbol, self.aromatic, self.hcount, self.pos = symbol, aromatic, hcount, pos


def _lookup_symbol(token: str, vocab: AtomVocabulary, pos: int, s: str) -> tuple[str, bool]:
    aromatic = token.islower()
    symbol = token.capitalize() if aromatic else token
    if symbol not in vocab.symbols:
        raise SmilesError(f"unknown atom symbol {token!r}", pos, s)
    return symbol, aromatic


def parse_smiles(s: str, vocab: AtomVocabulary = QM9_VOCAB) -> MolecularGraph:
    """Parse a SMILES string into a discrete :class:`MolecularGraph`."""
    if not s or not s.strip():
        raise SmilesError("empty SMILES", 0, s)
    s = s.strip()
    atoms: list[_Atom] = []
    bonds: dict[tuple[int, int], object] = {}
    stack: list[int | None] = []
    rings: dict[int, tuple[int, object, int]] = {}
    prev: int | None = None
    pending: object = None
    i = 0

    def add_bond(a: int, b: int, order, pos: int):
        if a == b:
            raise SmilesError("self-bond", pos, s)
        key = (min(a, b), max(a, b))
        if key in bonds:
            raise SmilesError("duplicate bond", pos, s)
        if order is None:
            order = "ar" if atoms[a].aromatic and atoms[b].aromatic else 1
        bonds[key] = order

    while i < len(s):
        ch = s[i]
        if ch == "[":
            end = s.find("]", i)
            if end < 0:
                raise SmilesError("unclosed bracket atom", i, s)
            m = _BRACKET.match(s[i + 1:end])
            if not m:
                raise SmilesError(f"unsupported bracket atom {s[i:end + 1]!r}", i, s)
            symbol, aromatic = _lookup_symbol(m.group(1), vocab, i, s)
            hcount = int(m.group(3) or 1) if m.group(2) else 0
            atoms.append(_Atom(symbol, aromatic, hcount, i))
            idx = len(atoms) - 1
            if prev is not None:
                add_bond(prev, idx, pending, i)
            prev, pending = idx, None
            i = end + 1
            continue
        if ch.isalpha():
            two = s[i:i + 2]
            token = two if len(two) == 2 and two in vocab.symbols else ch
            symbol, aromatic = _lookup_symbol(token, vocab, i, s)
            atoms.append(_Atom(symbol, aromatic, None, i))
            idx = len(atoms) - 1
            if prev is not None:
                add_bond(prev, idx, pending, i)
            prev, pending = idx, None
            i += len(token)
            continue
        if ch in _BOND_SYMBOLS:
            if prev is None or pending is not None:
                raise SmilesError(f"misplaced bond symbol {ch!r}", i, s)
            pending = _BOND_SYMBOLS[ch]
            i += 1
            continue
        if ch == "(":
            if prev is None:
                raise SmilesError("branch before any atom", i, s)
            stack.append(prev)
            i += 1
            continue
        if ch == ")":
            if not stack:
                raise SmilesError("unmatched ')'", i, s)
            if pending is not None:
                raise SmilesError("dangling bond before ')'", i, s)
            prev = stack.pop()
            i += 1
            continue
        if ch == ".":
            if pending is not None:
                raise SmilesError("dangling bond before '.'", i, s)
            prev = None
            i += 1
            continue
        if ch.isdigit() or ch == "%":
            if prev is None:
                raise SmilesError("ring closure before any atom", i, s)
            if ch == "%":
                digits = s[i + 1:i + 3]
                if len(digits) != 2 or not digits.isdigit():
                    raise SmilesError("malformed %nn ring closure", i, s)
                num, width = int(digits), 3
            else:
                num, width = int(ch), 1
            if num in rings:
                other, order, _ = rings.pop(num)
                if order is not None and pending is not None and order != pending:
                    raise SmilesError("conflicting ring-closure bond orders", i, s)
                add_bond(other, prev, pending if pending is not None else order, i)
            else:
                rings[num] = (prev, pending, i)
            pending = None
            i += width
            continue
        raise SmilesError(f"unsupported character {ch!r}", i, s)

    if stack:
        raise SmilesError("unmatched '('", len(s), s)
    if rings:
        num, (_, _, pos) = next(iter(rings.items()))
        raise SmilesError(f"unclosed ring closure {num}", pos, s)
    if pending is not None:
        raise SmilesError("dangling bond at end", len(s), s)

    _kekulize(atoms, bonds, vocab, s)

    n = len(atoms)
    X = np.zeros((n, len(vocab)))
    A = np.zeros((n, n))
    for k, a in enumerate(atoms):
        X[k, vocab.index(a.symbol)] = 1.0
    for (a, b), order in bonds.items():
        A[a, b] = A[b, a] = order
    g = MolecularGraph(X, A, True, vocab)
    used = A.sum(axis=1)
    for k, a in enumerate(atoms):
        if used[k] + (a.hcount or 0) > vocab.valence(a.symbol):
            raise SmilesError(f"valence overflow on {a.symbol}", a.pos, s)
    return g


def _kekulize(atoms, bonds, vocab, s):
    """Replace aromatic bonds by alternating single/double bonds in place."""
    ar_edges = [k for k, v in bonds.items() if v == "ar"]
    if not ar_edges:
        if any(a.aromatic for a in atoms):
            for a in atoms:
                if a.aromatic:
                    raise SmilesError("aromatic atom outside an aromatic ring", a.pos, s)
        return
    used = np.zeros(len(atoms))
    for (a, b), v in bonds.items():
        w = 1 if v == "ar" else v
        used[a] += w
        used[b] += w
    needs = set()
    for k, a in enumerate(atoms):
        if a.aromatic and vocab.valence(a.symbol) - used[k] - (a.hcount or 0) >= 1:
            needs.add(k)
    G = nx.Graph()
    G.add_nodes_from(needs)
    G.add_edges_from((a, b) for a, b in ar_edges if a in needs and b in needs)
    matching = nx.max_weight_matching(G, maxcardinality=True)
    if 2 * len(matching) != len(needs):
        pos = min(atoms[k].pos for k in needs) if needs else 0
        raise SmilesError("cannot kekulize aromatic system", pos, s)
    doubles = {(min(a, b), max(a, b)) for a, b in matching}
    for key in ar_edges:
        bonds[key] = 2 if key in doubles else 1


def _ring_label(num: int) -> str:
    return str(num) if num < 10 else f"%{num:02d}"


def write_smiles(g: MolecularGraph) -> str:
    """Write a canonical (kekulized) SMILES string for a valid discrete graph."""
    report = validity_check(g)
    if not report.valid:
        raise ValueError(f"cannot write invalid graph: {'; '.join(report.violations)}")
    ranks = canonical_ranks(g)
    B = g.bond_orders()
    np.fill_diagonal(B, 0)
    symbols = g.symbols
    n = g.n_atoms
    nbrs = [sorted(np.nonzero(B[i])[0].tolist(), key=lambda j: ranks[j]) for i in range(n)]

    visited = [False] * n
    seen_edges: set[tuple[int, int]] = set()
    children: list[list[int]] = [[] for _ in range(n)]
    ring_events: list[list[tuple[tuple[int, int], bool]]] = [[] for _ in range(n)]

    def dfs(u: int):
        visited[u] = True
        for v in nbrs[u]:
            e = (min(u, v), max(u, v))
            if e in seen_edges:
                continue
            seen_edges.add(e)
            if visited[v]:
                ring_events[v].append((e, True))
                ring_events[u].append((e, False))
            else:
                children[u].append(v)
                dfs(v)

    roots = []
    for start in sorted(range(n), key=lambda i: ranks[i]):
        if not visited[start]:
            roots.append(start)
            dfs(start)

    free: list[int] = []
    next_num = [1]
    assigned: dict[tuple[int, int], int] = {}

    def take() -> int:
        if free:
            free.sort()
            return free.pop(0)
        num = next_num[0]
        next_num[0] += 1
        return num

    out: list[str] = []

    def emit(u: int):
        out.append(symbols[u])
        # closings first so their digits can be reused by openings
        for e, opening in ring_events[u]:
            if not opening:
                num = assigned.pop(e)
                out.append(_ring_label(num))
                free.append(num)
        for e, opening in ring_events[u]:
            if opening:
                num = take()
                assigned[e] = num
                out.append(_ORDER_SYMBOL[int(B[e])] + _ring_label(num))
        kids = children[u]
        for k, v in enumerate(kids):
            sym = _ORDER_SYMBOL[int(B[u, v])]
            if k < len(kids) - 1:
                out.append("(" + sym)
                emit(v)
                out.append(")")
            else:
                out.append(sym)
                emit(v)

    for k, r in enumerate(roots):
        if k:
            out.append(".")
        emit(r)
    return "".join(out)
