import numpy as np
import pytest
import torch

from kgmolgen.kg.store import KnowledgeGraph, LabelIndex, build_constraints

torch.set_num_threads(1)

# criterion number -> (passed, detail), filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def make_kg(triples, types=None, sigs=None, extra_entities=()):
    """Build a graph from label triples (plus optional isolated entities)."""
    ents, rels = LabelIndex(), LabelIndex()
    rows = []
    for s, r, o in triples:
        rows.append((ents.add(s), rels.add(r), ents.add(o)))
    for e in extra_entities:
        ents.add(e)
    for r in (sigs or {}):
        rels.add(r)
    cons = build_constraints(ents, rels, types, sigs)
    return KnowledgeGraph(ents, rels, np.array(rows, dtype=np.int64).reshape(-1, 3), cons)


@pytest.fixture
def write_lines(tmp_path):
    def _write(name, lines):
        p = tmp_path / name
        p.write_text("".join(line + "\n" for line in lines))
        return p
    return _write


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, 13):
        if n in ACCEPTANCE:
            ok, detail = ACCEPTANCE[n]
            terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        else:
            terminalreporter.write_line(f"criterion {n:2d}: NOT RUN")
