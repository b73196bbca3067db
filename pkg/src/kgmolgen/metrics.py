"""Generation metrics computed from SMILES strings.

Schema of the metrics JSON (all percentages in [0, 100]):

``n``            number of SMILES lines considered
``n_valid``      lines that parse and pass the valence check
``validity``     100 * n_valid / n
``uniqueness``   100 * distinct canonical hashes among valid / n_valid
``novelty``      100 * valid molecules with max training Tanimoto < 0.4 / n_valid
``fcd``          always null
``fcd_reason``   why FCD is not computed
``invalid_lines`` 1-based line numbers that failed

Generated molecules that cannot be written (empty graphs) are stored as the
placeholder ``*``, which never parses and so counts as invalid.
"""
from __future__ import annotations

import logging

import numpy as np

from .chem.canon import canonical_hash
from .chem.corpus import read_smiles_file
from .chem.fingerprint import bulk_tanimoto, fingerprint
from .chem.graph import QM9_VOCAB, AtomVocabulary, MolecularGraph, validity_check
from .chem.smiles import SmilesError, parse_smiles, write_smiles

__all__ = ["INVALID_PLACEHOLDER", "NOVELTY_THRESHOLD", "molecule_to_line", "evaluate_smiles",
           "metrics_from_file", "training_fingerprints_from_file"]

log = logging.getLogger(__name__)

INVALID_PLACEHOLDER = "*"
NOVELTY_THRESHOLD = 0.4
FCD_REASON = "requires external pretrained network"


def molecule_to_line(g: MolecularGraph) -> str:
    if g.n_atoms == 0:
        return INVALID_PLACEHOLDER
    try:
        return write_smiles(g)
    except (SmilesError, ValueError):
        return INVALID_PLACEHOLDER


def evaluate_smiles(smiles, training_fps: np.ndarray, vocab: AtomVocabulary = QM9_VOCAB,
                    threshold: float = NOVELTY_THRESHOLD) -> dict:
    """Metrics for a sequence of SMILES strings (or ``(lineno, smiles)`` pairs)."""
    rows = [(i + 1, s) if isinstance(s, str) else s for i, s in enumerate(smiles)]
    valid = []
    invalid_lines = []
    for lineno, s in rows:
        try:
            g = parse_smiles(s, vocab)
        except SmilesError as exc:
            log.info("line %d: unparseable SMILES %r (%s)", lineno, s, exc)
            invalid_lines.append(lineno)
            continue
        if g.n_atoms == 0 or not validity_check(g).valid:
            invalid_lines.append(lineno)
            continue
        valid.append(g)
    n, nv = len(rows), len(valid)
    hashes = {canonical_hash(g) for g in valid}
    novel = 0
    if nv:
        for g in valid:
            sim = bulk_tanimoto(fingerprint(g, nbits=training_fps.shape[1]), training_fps).max() \
                if len(training_fps) else 0.0
            novel += int(sim < threshold)
    return {
        "n": n,
        "n_valid": nv,
        "validity": 100.0 * nv / n if n else 0.0,
        "uniqueness": 100.0 * len(hashes) / nv if nv else 0.0,
        "novelty": 100.0 * novel / nv if nv else 0.0,
        "fcd": None,
        "fcd_reason": FCD_REASON,
        "invalid_lines": invalid_lines,
    }


def _smiles_lines(path):
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            text = line.strip()
            if text and not text.startswith("#"):
                out.append((lineno, text.split()[0]))
    return out


def training_fingerprints_from_file(path, vocab: AtomVocabulary = QM9_VOCAB) -> np.ndarray:
    graphs = [g for _, _, g in read_smiles_file(path, vocab, strict=False) if g is not None]
    return np.stack([fingerprint(g) for g in graphs]) if graphs else np.zeros((0, 1024), bool)


def metrics_from_file(smiles_path, training_path, vocab: AtomVocabulary = QM9_VOCAB) -> dict:
    """Recompute metrics offline from a SMILES file and a training corpus file."""
    fps = training_fingerprints_from_file(training_path, vocab)
    return evaluate_smiles(_smiles_lines(smiles_path), fps, vocab)
