"""Small synthetic knowledge graphs with planted structure."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .store import KnowledgeGraph, LabelIndex, build_constraints

__all__ = ["planted_translation_kg", "typed_toy_kg", "drug_target_kg", "write_kg", "bundled_kg_dir",
           "read_drugs"]


def planted_translation_kg(n_chains: int = 25, n_levels: int = 6,
                           shifts=(1, 2, 3)) -> KnowledgeGraph:
    """Entities ``e{chain}_{level}``; relation ``shift_k`` links level l to l+k.

    With ``e = u_chain + level * v`` and ``r_k = k * v`` every triple is an
    exact translation, so TransE can represent the graph perfectly. The
    default sizes give 300 triples over 150 entities.
    """
    entities, relations = LabelIndex(), LabelIndex()
    for c in range(n_chains):
        for lvl in range(n_levels):
            entities.add(f"e{c}_{lvl}")
    rows = []
    for k in shifts:
        r = relations.add(f"shift_{k}")
        for c in range(n_chains):
            for lvl in range(n_levels - k):
                rows.append((entities.id(f"e{c}_{lvl}"), r, entities.id(f"e{c}_{lvl + k}")))
    cons = build_constraints(entities, relations, None, None)
    return KnowledgeGraph(entities, relations, np.array(rows), cons)


def typed_toy_kg(n_drugs: int = 2, n_proteins: int = 2, n_diseases: int = 1,
                 seed: int = 0, density: float = 0.5) -> KnowledgeGraph:
    """Tiny drug/protein/disease graph with typed relation signatures."""
    rng = np.random.default_rng(seed)
    entities, relations = LabelIndex(), LabelIndex()
    types = {}
    for prefix, count, tag in (("drug", n_drugs, "drug"), ("protein", n_proteins, "protein"),
                               ("disease", n_diseases, "disease")):
        for k in range(count):
            label = f"{prefix}{k}"
            entities.add(label)
            types[label] = tag
    sigs = {"targets": ("drug", "protein"), "treats": ("drug", "disease"),
            "associated_with": ("protein", "disease")}
    for rel in sigs:
        relations.add(rel)
    cons = build_constraints(entities, relations, types, sigs)
    rows = []
    for r in range(len(relations)):
        for s in np.nonzero(cons.subject_mask(r))[0]:
            for o in np.nonzero(cons.object_mask(r))[0]:
                if rng.random() < density:
                    rows.append((s, r, o))
    if not rows:
        s = int(np.nonzero(cons.subject_mask(0))[0][0])
        o = int(np.nonzero(cons.object_mask(0))[0][0])
        rows.append((s, 0, o))
    return KnowledgeGraph(entities, relations, np.array(rows), cons)


def drug_features(g) -> tuple[int, int, int]:
    """Coarse chemistry class bits used to plant drug-target structure."""
    sym = g.symbols
    has_n = int("N" in sym)
    has_o = int(sym.count("O") >= 2)
    n_bonds = len(g.bonds())
    has_ring = int(n_bonds - g.n_atoms + len(g.components()) > 0)
    return has_n, has_o, has_ring


def drug_target_kg(molecules, seed: int = 0, proteins_per_class: int = 2,
                   n_diseases: int = 6, noise: float = 0.05):
    """Biomedical-style KG whose drug-target edges follow drug chemistry.

    Each drug ``drug{k}`` is linked to ``molecules[k]``. A drug's chemistry
    class (nitrogen present, two or more oxygens, ring present) selects the
    protein family it ``targets``; proteins are ``associated_with`` diseases
    and drugs ``treat`` the diseases of their targets. Returns the triples as
    label tuples together with type and signature tables.
    """
    rng = np.random.default_rng(seed)
    n_classes = 8
    proteins = [f"protein{c}_{j}" for c in range(n_classes) for j in range(proteins_per_class)]
    diseases = [f"disease{d}" for d in range(n_diseases)]
    types = {p: "protein" for p in proteins} | {d: "disease" for d in diseases}
    triples: list[tuple[str, str, str]] = []
    protein_disease = {}
    for c in range(n_classes):
        d = diseases[c % n_diseases]
        for j in range(proteins_per_class):
            p = f"protein{c}_{j}"
            protein_disease[p] = d
            triples.append((p, "associated_with", d))
    for c in range(n_classes):
        for j in range(proteins_per_class - 1):
            triples.append((f"protein{c}_{j}", "interacts", f"protein{c}_{j + 1}"))
    drugs = []
    for k, g in enumerate(molecules):
        drug = f"drug{k}"
        drugs.append(drug)
        types[drug] = "drug"
        a, b, c = drug_features(g)
        cls = 4 * a + 2 * b + c
        targets = [f"protein{cls}_{j}" for j in range(proteins_per_class)]
        if rng.random() < noise:
            targets.append(proteins[int(rng.integers(len(proteins)))])
        for p in dict.fromkeys(targets):
            triples.append((drug, "targets", p))
        triples.append((drug, "treats", protein_disease[targets[0]]))
    sigs = {"targets": ("drug", "protein"), "treats": ("drug", "disease"),
            "associated_with": ("protein", "disease"), "interacts": ("protein", "protein")}
    return triples, types, sigs, drugs


def write_kg(directory, triples, types, sigs, drug_smiles: dict[str, str] | None = None):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    (d / "triples.tsv").write_text("".join(f"{s}\t{r}\t{o}\n" for s, r, o in triples))
    (d / "types.tsv").write_text("".join(f"{e}\t{t}\n" for e, t in types.items()))
    (d / "constraints.tsv").write_text("".join(f"{r}\t{a}\t{b}\n" for r, (a, b) in sigs.items()))
    if drug_smiles:
        (d / "drugs.tsv").write_text("".join(f"{k}\t{v}\n" for k, v in drug_smiles.items()))


def bundled_kg_dir() -> Path:
    from importlib import resources
    return Path(str(resources.files("kgmolgen") / "data" / "kg"))


def read_drugs(path) -> dict[str, str]:
    """``drug<TAB>SMILES`` lines as a dict."""
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip() and not line.startswith("#"):
            drug, smi = line.split("\t")[:2]
            out[drug.strip()] = smi.strip()
    return out


if __name__ == "__main__":
    from ..chem.corpus import bundled_corpus_path, read_smiles_file

    rows = read_smiles_file(bundled_corpus_path())[:200]
    mols = [g for _, _, g in rows]
    triples, types, sigs, drugs = drug_target_kg(mols, seed=0)
    out = Path(__file__).resolve().parent.parent / "data" / "kg"
    write_kg(out, triples, types, sigs, {d: s for d, (_, s, _) in zip(drugs, rows)})
    print(f"wrote {len(triples)} triples to {out}")
