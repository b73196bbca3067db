from .canon import canonical_hash, canonical_order, canonical_ranks
from .fingerprint import bulk_tanimoto, fingerprint, tanimoto
from .graph import (QM9_VOCAB, AtomVocabulary, MolecularGraph, ValidityReport, decode,
                    encode, from_atoms, quantize, validity_check)
from .smiles import SmilesError, parse_smiles, write_smiles

__all__ = [
    "AtomVocabulary", "QM9_VOCAB", "MolecularGraph", "ValidityReport", "SmilesError",
    "parse_smiles", "write_smiles", "validity_check", "quantize", "encode", "decode",
    "from_atoms", "fingerprint", "tanimoto", "bulk_tanimoto", "canonical_hash",
    "canonical_order", "canonical_ranks",
]
