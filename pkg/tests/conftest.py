from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

from laserkv import KvTrace, ModelShape


def unit(vector) -> np.ndarray:
    arr = np.asarray(vector, dtype=np.float64)
    return (arr / np.linalg.norm(arr)).astype(np.float32)


def make_trace(keys, queries, values=None, needles=None, seed=0) -> KvTrace:
    """Build a trace from (T, L, H, d) float32 arrays, defaulting values."""
    keys = np.asarray(keys, dtype=np.float32)
    if values is None:
        values = np.ones_like(keys)
    shape = ModelShape(keys.shape[1], keys.shape[2], keys.shape[3])
    return KvTrace(
        shape=shape,
        num_tokens=keys.shape[0],
        keys=keys,
        values=np.asarray(values, dtype=np.float32),
        queries=np.asarray(queries, dtype=np.float32),
        needles=list(needles or []),
        seed=seed,
    )


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)
