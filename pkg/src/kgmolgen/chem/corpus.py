"""Desk-scale molecule corpus.

The bundled ``data/corpus.smi`` is produced by :func:`generate_corpus` with
seed 0: random valence-respecting graphs over C/N/O/F with at most nine
heavy atoms, the QM9 size regime. Regenerate it with
``python -m kgmolgen.chem.corpus``.
"""
from __future__ import annotations

from importlib import resources
from pathlib import Path

import numpy as np

from .canon import canonical_hash
from .graph import QM9_VOCAB, AtomVocabulary, MolecularGraph, from_atoms, validity_check
from .smiles import SmilesError, parse_smiles, write_smiles

__all__ = ["random_molecule", "generate_corpus", "read_smiles_file", "bundled_corpus_path",
           "load_bundled_corpus"]

ATOM_WEIGHTS = {"C": 0.68, "N": 0.13, "O": 0.16, "F": 0.03}
SIZE_WEIGHTS = {4: 0.05, 5: 0.08, 6: 0.12, 7: 0.18, 8: 0.25, 9: 0.32}


def random_molecule(rng: np.random.Generator, n_atoms: int,
                    vocab: AtomVocabulary = QM9_VOCAB) -> MolecularGraph:
    symbols = list(ATOM_WEIGHTS)
    p = np.array(list(ATOM_WEIGHTS.values()))
    while True:
        atoms = list(rng.choice(symbols, size=n_atoms, p=p / p.sum()))
        # at most one fluorine per four atoms keeps the tree attachable
        if atoms.count("F") * 4 > n_atoms:
            continue
        cap = np.array([vocab.valence(a) for a in atoms])
        free = cap.copy()
        order = np.argsort([-c for c in cap], kind="stable")
        atoms = [atoms[k] for k in order]
        free = free[order]
        A = np.zeros((n_atoms, n_atoms), dtype=int)
        ok = True
        for k in range(1, n_atoms):
            hosts = [j for j in range(k) if free[j] > 0]
            if not hosts:
                ok = False
                break
            j = int(rng.choice(hosts))
            A[j, k] = A[k, j] = 1
            free[j] -= 1
            free[k] -= 1
        if not ok:
            continue
        # ring closures between atoms 2-5 bonds apart
        for _ in range(rng.poisson(0.9)):
            dist = _distances(A)
            cand = [(i, j) for i in range(n_atoms) for j in range(i + 1, n_atoms)
                    if free[i] > 0 and free[j] > 0 and 2 <= dist[i, j] <= 5]
            if not cand:
                break
            i, j = cand[int(rng.integers(len(cand)))]
            A[i, j] = A[j, i] = 1
            free[i] -= 1
            free[j] -= 1
        # bond upgrades
        edges = [(i, j) for i in range(n_atoms) for j in range(i + 1, n_atoms) if A[i, j]]
        rng.shuffle(edges)
        for i, j in edges:
            if free[i] > 0 and free[j] > 0 and rng.random() < 0.22:
                up = 2 if (free[i] > 1 and free[j] > 1 and rng.random() < 0.15) else 1
                A[i, j] += up
                A[j, i] += up
                free[i] -= up
                free[j] -= up
        bonds = [(i, j, int(A[i, j])) for i, j in zip(*np.nonzero(np.triu(A, 1)))]
        g = from_atoms(atoms, bonds, vocab)
        if validity_check(g).valid:
            return g


def _distances(A: np.ndarray) -> np.ndarray:
    from scipy.sparse.csgraph import shortest_path
    return shortest_path(A > 0, unweighted=True, directed=False)


def generate_corpus(n: int, seed: int = 0) -> list[str]:
    """``n`` distinct canonical SMILES of random small molecules."""
    rng = np.random.default_rng(seed)
    sizes = np.array(list(SIZE_WEIGHTS))
    probs = np.array(list(SIZE_WEIGHTS.values()))
    probs = probs / probs.sum()
    seen: set[str] = set()
    out: list[str] = []
    while len(out) < n:
        g = random_molecule(rng, int(rng.choice(sizes, p=probs)))
        h = canonical_hash(g)
        if h in seen:
            continue
        seen.add(h)
        out.append(write_smiles(g))
    return out


def read_smiles_file(path, vocab: AtomVocabulary = QM9_VOCAB, strict: bool = True):
    """Read one SMILES per line; blank and ``#`` lines are skipped.

    With ``strict=False`` unparseable lines yield ``None`` instead of raising.
    Returns a list of ``(line_number, smiles, graph_or_None)``.
    """
    rows = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        token = text.split()[0]
        try:
            g = parse_smiles(token, vocab)
        except SmilesError:
            if strict:
                raise
            g = None
        rows.append((lineno, token, g))
    return rows


def bundled_corpus_path() -> Path:
    return Path(str(resources.files("kgmolgen") / "data" / "corpus.smi"))


def load_bundled_corpus(limit: int | None = None) -> list[MolecularGraph]:
    rows = read_smiles_file(bundled_corpus_path())
    graphs = [g for _, _, g in rows]
    return graphs[:limit] if limit is not None else graphs


if __name__ == "__main__":
    smiles = generate_corpus(2000, seed=0)
    path = Path(__file__).resolve().parent.parent / "data" / "corpus.smi"
    header = "# synthetic QM9-like corpus: kgmolgen.chem.corpus.generate_corpus(2000, seed=0)\n"
    path.write_text(header + "\n".join(smiles) + "\n", encoding="utf-8")
    print(f"wrote {len(smiles)} molecules to {path}")
