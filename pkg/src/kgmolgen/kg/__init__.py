from .store import (ConstraintViolation, DomainConstraintSet, KGParseError, KnowledgeGraph,
                    LabelIndex, SplitResult, Triple, complete_triple, constraint_indicator,
                    load_triples, read_constraints, read_types, split)

__all__ = [
    "Triple", "LabelIndex", "DomainConstraintSet", "KnowledgeGraph", "KGParseError",
    "ConstraintViolation", "SplitResult", "load_triples", "read_types", "read_constraints",
    "split", "constraint_indicator", "complete_triple",
]
