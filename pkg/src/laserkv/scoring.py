"""Exact attention scores aggregated across layers, heads, and query rows.

Per (layer, head, query row): scaled dot-product logits over the candidates,
causal mask, softmax, then the resulting probabilities are summed over all
rows. Accumulation runs in fixed (layer, head, row) order so the output is
bitwise deterministic regardless of how callers might shard the work.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .trace import KvTrace


@dataclass(frozen=True)
class ScoreVector:
    """Aggregate attention mass per candidate, aligned to candidate_positions."""

    scores: np.ndarray  # float64, one non-negative entry per candidate
    candidate_positions: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.scores) != len(self.candidate_positions):
            raise ValueError("scores and candidate_positions lengths differ")


def exact_scores(
    trace: KvTrace,
    candidates: list[int],
    query_rows: list[int],
) -> ScoreVector:
    """Sum post-softmax attention mass over every layer, head, and query row.

    Candidates at positions after a query row are masked out of that row.
    A query row with no unmasked candidate signals a malformed window.
    """
    if not candidates:
        raise ValueError("candidate set is empty")
    if not query_rows:
        raise ValueError("query_rows is empty")
    T = trace.num_tokens
    for position in candidates:
        if not 0 <= position < T:
            raise ValueError(f"candidate position {position} out of range")
    for row in query_rows:
        if not 0 <= row < T:
            raise ValueError(f"query row {row} out of range")

    positions = np.asarray(candidates, dtype=np.int64)
    shape = trace.shape
    scale = 1.0 / np.sqrt(shape.head_dim)
    totals = np.zeros(len(candidates), dtype=np.float64)

    for layer in range(shape.num_layers):
        for head in range(shape.num_heads):
            keys = trace.keys[positions, layer, head].astype(np.float64)
            for row in query_rows:
                query = trace.queries[row, layer, head].astype(np.float64)
                logits = keys @ query * scale
                unmasked = positions <= row
                if not unmasked.any():
                    raise ValueError(
                        f"query row {row} has no unmasked candidates "
                        "(malformed scoring window)"
                    )
                logits[~unmasked] = -np.inf
                logits -= logits[unmasked].max()
                probs = np.exp(logits)
                totals += probs / probs.sum()

    return ScoreVector(scores=totals, candidate_positions=tuple(candidates))
