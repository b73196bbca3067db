"""Knowledge graph loading, splitting, domain constraints and completion queries."""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple, Sequence

import numpy as np

__all__ = [
    "Triple",
    "LabelIndex",
    "DomainConstraintSet",
    "KnowledgeGraph",
    "KGParseError",
    "ConstraintViolation",
    "SplitResult",
    "load_triples",
    "read_types",
    "read_constraints",
    "split",
    "constraint_indicator",
    "complete_triple",
]

log = logging.getLogger(__name__)


class KGParseError(ValueError):
    def __init__(self, path, lineno: int, message: str):
        self.lineno = lineno
        super().__init__(f"{path}:{lineno}: {message}")


class ConstraintViolation(ValueError):
    pass


class Triple(NamedTuple):
    s: int
    r: int
    o: int


class LabelIndex:
    """Bidirectional map between string labels and dense ids ``0..n-1``."""

    def __init__(self, labels: Sequence[str] = ()):
        self._labels: list[str] = []
        self._ids: dict[str, int] = {}
        for label in labels:
            self.add(label)

    def add(self, label: str) -> int:
        idx = self._ids.get(label)
        if idx is None:
            idx = self._ids[label] = len(self._labels)
            self._labels.append(label)
        return idx

    def id(self, label: str) -> int:
        try:
            return self._ids[label]
        except KeyError:
            raise KeyError(f"unknown label {label!r}") from None

    def label(self, idx: int) -> str:
        return self._labels[idx]

    def __contains__(self, label) -> bool:
        return label in self._ids

    def __len__(self) -> int:
        return len(self._labels)

    def __iter__(self):
        return iter(self._labels)

    @property
    def labels(self) -> list[str]:
        return list(self._labels)


@dataclass
class DomainConstraintSet:
    """Per-relation subject/object entity-type restrictions.

    ``entity_types[e]`` is a type id (``-1`` for untyped). ``subject_types[r]``
    and ``object_types[r]`` are frozensets of allowed type ids, or ``None``
    when that slot is unconstrained.
    """

    type_names: list[str]
    entity_types: np.ndarray
    subject_types: list[frozenset | None]
    object_types: list[frozenset | None]

    @classmethod
    def unconstrained(cls, n_entities: int, n_relations: int) -> DomainConstraintSet:
        return cls([], np.full(n_entities, -1, dtype=int),
                   [None] * n_relations, [None] * n_relations)

    @property
    def is_trivial(self) -> bool:
        return all(x is None for x in self.subject_types + self.object_types)

    def _slot_mask(self, allowed) -> np.ndarray:
        if allowed is None:
            return np.ones(len(self.entity_types), dtype=bool)
        return np.isin(self.entity_types, list(allowed))

    def subject_mask(self, r: int) -> np.ndarray:
        """Boolean mask over entities allowed as subject of relation ``r``."""
        return self._slot_mask(self.subject_types[r])

    def object_mask(self, r: int) -> np.ndarray:
        return self._slot_mask(self.object_types[r])

    def contains(self, s, r, o):
        """Vectorized membership in ``K``; works on ints or integer arrays."""
        s, r, o = np.asarray(s), np.asarray(r), np.asarray(o)
        out = np.ones(np.broadcast(s, r, o).shape, dtype=bool)
        for rel in np.unique(r):
            sel = r == rel
            for allowed, ent in ((self.subject_types[rel], s), (self.object_types[rel], o)):
                if allowed is not None:
                    ok = np.isin(self.entity_types[np.broadcast_to(ent, out.shape)], list(allowed))
                    out &= ~sel | ok
        return out if out.ndim else bool(out)

    def type_of(self, e: int) -> str | None:
        t = int(self.entity_types[e])
        return None if t < 0 else self.type_names[t]


@dataclass
class KnowledgeGraph:
    entities: LabelIndex
    relations: LabelIndex
    triples: np.ndarray
    constraints: DomainConstraintSet
    rejected: list[tuple[str, str, str]] = field(default_factory=list)

    def __post_init__(self):
        self.triples = np.asarray(self.triples, dtype=np.int64).reshape(-1, 3)
        self.triples.setflags(write=False)
        self._keys = None

    @property
    def entity_count(self) -> int:
        return len(self.entities)

    @property
    def relation_count(self) -> int:
        return len(self.relations)

    def __len__(self) -> int:
        return len(self.triples)

    def __iter__(self):
        return (Triple(int(s), int(r), int(o)) for s, r, o in self.triples)

    def encode_keys(self, triples) -> np.ndarray:
        t = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
        E, R = self.entity_count, max(self.relation_count, 1)
        return (t[:, 0] * R + t[:, 1]) * E + t[:, 2]

    @property
    def keys(self) -> np.ndarray:
        if self._keys is None:
            self._keys = np.sort(self.encode_keys(self.triples))
        return self._keys

    def contains(self, triples) -> np.ndarray:
        k = self.encode_keys(triples)
        pos = np.searchsorted(self.keys, k)
        pos = np.minimum(pos, max(len(self.keys) - 1, 0))
        return (self.keys[pos] == k) if len(self.keys) else np.zeros(len(k), dtype=bool)

    def with_triples(self, triples) -> KnowledgeGraph:
        """A graph sharing this graph's dictionaries and constraints."""
        return KnowledgeGraph(self.entities, self.relations, triples, self.constraints)

    def triple(self, s: str, r: str, o: str) -> Triple:
        return Triple(self.entities.id(s), self.relations.id(r), self.entities.id(o))

    def dictionary_hash(self) -> str:
        h = hashlib.sha1()
        for label in self.entities:
            h.update(label.encode() + b"\x00")
        h.update(b"\x01")
        for label in self.relations:
            h.update(label.encode() + b"\x00")
        return h.hexdigest()[:16]


# -- file formats --------------------------------------------------------------

def _data_lines(path):
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        yield lineno, line.rstrip("\r\n")


def read_types(path) -> dict[str, str]:
    """Read ``entity_label<TAB>type_tag`` lines."""
    out = {}
    for lineno, line in _data_lines(path):
        fields = line.split("\t")
        if len(fields) != 2:
            raise KGParseError(path, lineno, f"expected 2 tab-separated fields, got {len(fields)}")
        out[fields[0]] = fields[1]
    return out


def read_constraints(path) -> dict[str, tuple[str, str]]:
    """Read ``relation<TAB>subject_type<TAB>object_type`` lines (``*`` = any).

    A slot may list several types separated by commas.
    """
    out = {}
    for lineno, line in _data_lines(path):
        fields = line.split("\t")
        if len(fields) != 3:
            raise KGParseError(path, lineno, f"expected 3 tab-separated fields, got {len(fields)}")
        out[fields[0]] = (fields[1], fields[2])
    return out


def build_constraints(entities: LabelIndex, relations: LabelIndex,
                      types: dict[str, str] | None,
                      signatures: dict[str, tuple[str, str]] | None) -> DomainConstraintSet:
    types = types or {}
    signatures = signatures or {}
    type_names = sorted(set(types.values()) | {
        t for sig in signatures.values() for slot in sig if slot != "*" for t in slot.split(",")})
    tid = {t: k for k, t in enumerate(type_names)}
    entity_types = np.full(len(entities), -1, dtype=int)
    for label, tag in types.items():
        if label not in entities:
            log.warning("typing file names unknown entity %r; ignored", label)
            continue
        entity_types[entities.id(label)] = tid[tag]
    subj: list[frozenset | None] = [None] * len(relations)
    obj: list[frozenset | None] = [None] * len(relations)
    for rel, (st, ot) in signatures.items():
        if rel not in relations:
            log.warning("constraint file names unknown relation %r; ignored", rel)
            continue
        r = relations.id(rel)
        subj[r] = None if st == "*" else frozenset(tid[t] for t in st.split(","))
        obj[r] = None if ot == "*" else frozenset(tid[t] for t in ot.split(","))
    return DomainConstraintSet(type_names, entity_types, subj, obj)


def load_triples(path, typing=None, constraints=None) -> KnowledgeGraph:
    """Load a tab-separated triple file into a :class:`KnowledgeGraph`.

    Ids are assigned in first-appearance order and duplicate lines are
    collapsed. When a constraint file is given, triples outside the
    constraint domain are dropped and listed in ``kg.rejected``.
    """
    entities, relations = LabelIndex(), LabelIndex()
    rows: list[tuple[int, int, int]] = []
    labels: list[tuple[str, str, str]] = []
    seen = set()
    n_lines = 0
    for lineno, line in _data_lines(path):
        fields = line.split("\t")
        if len(fields) != 3 or not all(f.strip() for f in fields):
            raise KGParseError(path, lineno, f"expected 3 tab-separated fields, got {len(fields)}")
        n_lines += 1
        s, r, o = (f.strip() for f in fields)
        t = (entities.add(s), relations.add(r), entities.add(o))
        if t in seen:
            continue
        seen.add(t)
        rows.append(t)
        labels.append((s, r, o))
    cons = build_constraints(
        entities, relations,
        read_types(typing) if typing else None,
        read_constraints(constraints) if constraints else None)
    rejected = []
    if rows and not cons.is_trivial:
        arr = np.array(rows)
        ok = cons.contains(arr[:, 0], arr[:, 1], arr[:, 2])
        rejected = [labels[k] for k in np.nonzero(~ok)[0]]
        rows = [t for t, keep in zip(rows, ok) if keep]
        if rejected:
            log.warning("rejected %d constraint-violating triples", len(rejected))
    log.info("loaded %d triples (%d lines), %d entities, %d relations",
             len(rows), n_lines, len(entities), len(relations))
    kg = KnowledgeGraph(entities, relations, np.array(rows, dtype=np.int64).reshape(-1, 3), cons)
    kg.rejected = rejected
    return kg


# -- operations ----------------------------------------------------------------

@dataclass
class SplitResult:
    train: KnowledgeGraph
    valid: KnowledgeGraph
    test: KnowledgeGraph
    reassigned: int

    def __iter__(self):
        return iter((self.train, self.valid, self.test))


def split(kg: KnowledgeGraph, train_frac: float, valid_frac: float, seed: int) -> SplitResult:
    """Seeded random train/valid/test partition of the triples.

    Valid/test triples mentioning an entity or relation absent from train are
    moved into train (repeated until stable); their number is reported.
    """
    if not (0 < train_frac < 1 and 0 < valid_frac < 1 and train_frac + valid_frac < 1):
        raise ValueError("fractions must lie in (0, 1) and sum to less than 1")
    n = len(kg)
    rng = np.random.default_rng(np.uint64(seed % 2**64))
    order = rng.permutation(n)
    n_valid = int(round(valid_frac * n))
    n_test = int(round((1.0 - train_frac - valid_frac) * n))
    n_train = n - n_valid - n_test
    T = kg.triples
    assign = np.zeros(n, dtype=int)
    assign[order[n_train:n_train + n_valid]] = 1
    assign[order[n_train + n_valid:]] = 2

    ent = np.zeros(kg.entity_count, dtype=bool)
    rel = np.zeros(kg.relation_count, dtype=bool)
    tr = T[assign == 0]
    ent[tr[:, 0]] = ent[tr[:, 2]] = True
    rel[tr[:, 1]] = True
    reassigned = 0
    changed = True
    while changed:
        changed = False
        for k in order:
            if assign[k] == 0:
                continue
            s, r, o = T[k]
            if not (ent[s] and ent[o] and rel[r]):
                assign[k] = 0
                ent[s] = ent[o] = rel[r] = True
                reassigned += 1
                changed = True
    parts = [T[np.sort(np.nonzero(assign == a)[0])] for a in range(3)]
    if len(parts[1]) == 0 or len(parts[2]) == 0:
        raise ValueError("split leaves the validation or test set empty")
    if reassigned:
        log.info("split: %d triples reassigned to train for coverage", reassigned)
    return SplitResult(*(kg.with_triples(p) for p in parts), reassigned)


def constraint_indicator(t, k: DomainConstraintSet) -> int:
    """1 if the triple lies in the constraint domain ``K``, else 0."""
    s, r, o = t
    return int(k.contains(int(s), int(r), int(o)))


Scorer = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


def complete_triple(kg: KnowledgeGraph, model: Scorer, pattern, top_k: int,
                    exclude_known: bool = False) -> list[tuple[int, float]]:
    """Rank entities for the blank slot of ``(None, r, o)`` or ``(s, r, None)``.

    ``model(s, r, o)`` scores integer arrays. Candidates outside the
    constraint domain are never returned. Ties are broken by ascending id.
    Pattern entries may be ids or labels.
    """
    s, r, o = pattern
    if (s is None) == (o is None):
        raise ValueError("pattern must have exactly one blank")
    if top_k <= 0:
        return []
    r = kg.relations.id(r) if isinstance(r, str) else int(r)
    cons = kg.constraints
    ids = np.arange(kg.entity_count)
    if s is None:
        o = kg.entities.id(o) if isinstance(o, str) else int(o)
        if not cons.object_mask(r)[o]:
            return []
        cand = ids[cons.subject_mask(r)]
        trip = np.stack([cand, np.full_like(cand, r), np.full_like(cand, o)], 1)
    else:
        s = kg.entities.id(s) if isinstance(s, str) else int(s)
        if not cons.subject_mask(r)[s]:
            return []
        cand = ids[cons.object_mask(r)]
        trip = np.stack([np.full_like(cand, s), np.full_like(cand, r), cand], 1)
    if exclude_known and len(cand):
        keep = ~kg.contains(trip)
        cand, trip = cand[keep], trip[keep]
    if not len(cand):
        return []
    scores = np.asarray(model(trip[:, 0], trip[:, 1], trip[:, 2]), dtype=float)
    order = np.lexsort((cand, -scores))[:top_k]
    return [(int(cand[i]), float(scores[i])) for i in order]
