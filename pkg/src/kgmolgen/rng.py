"""Named random substreams derived from one master seed."""
from __future__ import annotations

import zlib

import numpy as np
import torch

__all__ = ["seed_sequence", "numpy_stream", "torch_stream", "child_seeds"]


def seed_sequence(seed: int, name: str = "", *index: int) -> np.random.SeedSequence:
    key = (zlib.crc32(name.encode()),) + tuple(int(i) for i in index) if name else tuple(index)
    return np.random.SeedSequence(entropy=int(seed) % 2**64, spawn_key=key)


def numpy_stream(seed: int, name: str = "", *index: int) -> np.random.Generator:
    return np.random.default_rng(seed_sequence(seed, name, *index))


def torch_stream(seed: int, name: str = "", *index: int) -> torch.Generator:
    g = torch.Generator()
    g.manual_seed(int(seed_sequence(seed, name, *index).generate_state(1, np.uint64)[0] >> 1))
    return g


def child_seeds(seed: int, name: str, n: int) -> list[int]:
    ss = seed_sequence(seed, name)
    return [int(x >> 1) for x in ss.generate_state(n, np.uint64)] if n else []
