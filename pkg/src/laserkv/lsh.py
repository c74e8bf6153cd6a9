"""Sign-random-projection (SimHash) tables and collision-probability scores.

Each hash function is K sign bits of random unit-norm projections; two vectors
at angle theta agree on a full K-bit code with probability (1 - theta/pi)^K.
The fraction of agreeing rounds is the collision score used for recall ranking.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import MAX_HASH_BITS, ModelShape
from .trace import KvTrace


@dataclass(eq=False)
class HashTableSet:
    """R hash functions of K sign bits each, independent per (layer, head)."""

    shape: ModelShape
    num_rounds: int
    bits_per_hash: int
    projections: np.ndarray  # (L, H, R, K, d) float64, unit-norm directions
    seed: int


@dataclass(frozen=True)
class CollisionScoreVector:
    """Mean collision fraction per candidate, aligned to candidate_positions."""

    scores: np.ndarray  # float64 in [0, 1]
    candidate_positions: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.scores) != len(self.candidate_positions):
            raise ValueError("scores and candidate_positions lengths differ")


def build_tables(
    shape: ModelShape, num_rounds: int, bits_per_hash: int, seed: int = 0
) -> HashTableSet:
    """Draw R*K unit-norm projection directions per (layer, head)."""
    if num_rounds < 1:
        raise ValueError(f"num_rounds must be >= 1, got {num_rounds}")
    if not 1 <= bits_per_hash <= MAX_HASH_BITS:
        raise ValueError(f"bits_per_hash must be in [1, {MAX_HASH_BITS}]")
    rng = np.random.Generator(np.random.Philox(key=seed))
    dims = (shape.num_layers, shape.num_heads, num_rounds, bits_per_hash, shape.head_dim)
    projections = rng.standard_normal(dims)
    norms = np.linalg.norm(projections, axis=-1, keepdims=True)
    norms[norms == 0.0] = 1.0
    projections /= norms
    return HashTableSet(
        shape=shape,
        num_rounds=num_rounds,
        bits_per_hash=bits_per_hash,
        projections=projections,
        seed=seed,
    )


def vector_codes(
    tables: HashTableSet, vectors: np.ndarray, layer: int, head: int
) -> np.ndarray:
    """K-bit codes for (n, d) vectors under every round of one (layer, head).

    Returns (n, R) uint64; bit j is set iff dot(vector, projection_j) >= 0
    (a zero dot product counts as positive). One code per candidate per round,
    so stored codes total exactly n * R per (layer, head).
    """
    directions = tables.projections[layer, head]  # (R, K, d)
    R, K, d = directions.shape
    flat = directions.reshape(R * K, d)
    signs = np.asarray(vectors, dtype=np.float64) @ flat.T >= 0.0  # (n, R*K)
    bits = signs.reshape(len(vectors), R, K).astype(np.uint64)
    weights = (np.uint64(1) << np.arange(K, dtype=np.uint64))
    return bits @ weights  # (n, R)


def hash_code(
    tables: HashTableSet, vector: np.ndarray, layer: int, head: int, round_index: int
) -> int:
    """K-bit code of a single vector for one hash round."""
    if not 0 <= round_index < tables.num_rounds:
        raise ValueError(f"round {round_index} out of range [0, {tables.num_rounds})")
    codes = vector_codes(tables, np.asarray(vector, dtype=np.float64)[None, :], layer, head)
    return int(codes[0, round_index])


def collision_scores(
    tables: HashTableSet,
    trace: KvTrace,
    candidates: list[int],
    query_representative: np.ndarray,
) -> CollisionScoreVector:
    """Fraction of rounds where a candidate key's full code equals the query
    representative's code, averaged over (layer, head) pairs.

    ``query_representative`` has shape (L, H, d).
    """
    if not candidates:
        raise ValueError("candidate set is empty")
    positions = np.asarray(candidates, dtype=np.int64)
    shape = tables.shape
    totals = np.zeros(len(candidates), dtype=np.float64)
    for layer in range(shape.num_layers):
        for head in range(shape.num_heads):
            key_codes = vector_codes(tables, trace.keys[positions, layer, head], layer, head)
            query_code = vector_codes(
                tables, query_representative[layer, head][None, :], layer, head
            )
            matches = key_codes == query_code  # broadcast over rounds
            totals += matches.mean(axis=1)
    totals /= shape.num_layers * shape.num_heads
    return CollisionScoreVector(scores=totals, candidate_positions=tuple(candidates))
