"""Comparison policies sharing the block pipeline interface.

exact / lsh are the hybrid policy pinned at alpha = 1 / alpha = 0; window keeps
only anchors plus the local tail; recursive re-prunes a fixed-size summary each
block instead of accumulating, as a contrast arm for append-only retention.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

from .core import BudgetPlan
from .lsh import CollisionScoreVector
from .scoring import ScoreVector
from .selection import SelectionResult, exact_lsh_select, top_k_positions


class PolicyKind(enum.Enum):
    LASER_KV = "laser"
    EXACT_ONLY = "exact"
    LSH_ONLY = "lsh"
    SLIDING_WINDOW = "window"
    RECURSIVE_SUMMARY = "recursive"


@dataclass(frozen=True)
class PolicyHandle:
    """A selection policy plus its parameters.

    ``fixed_size`` applies to the recursive summary only; None defaults to the
    run's total budget (per-block budget times block count) so comparisons stay
    iso-memory. ``per_block_anchors`` re-reads anchors from every block instead
    of the sequence head.
    """

    kind: PolicyKind
    fixed_size: int | None = None
    per_block_anchors: bool = False

    def __post_init__(self) -> None:
        if self.fixed_size is not None:
            if self.kind is not PolicyKind.RECURSIVE_SUMMARY:
                raise ValueError("fixed_size only applies to the recursive policy")
            if self.fixed_size < 0:
                raise ValueError(f"fixed_size must be >= 0, got {self.fixed_size}")

    @classmethod
    def parse(cls, name: str, **kwargs) -> "PolicyHandle":
        try:
            kind = PolicyKind(name)
        except ValueError:
            valid = ", ".join(k.value for k in PolicyKind)
            raise ValueError(f"unknown policy {name!r}; expected one of: {valid}")
        return cls(kind=kind, **kwargs)

    def effective_alpha(self, configured: float) -> float:
        if self.kind is PolicyKind.EXACT_ONLY:
            return 1.0
        if self.kind is PolicyKind.LSH_ONLY:
            return 0.0
        return configured


def exact_only_select(
    exact: ScoreVector, collisions: CollisionScoreVector | None, b_long: int
) -> tuple[list[int], list[int]]:
    """Greedy heavy-hitter Top-K: the hybrid selector with alpha = 1."""
    return exact_lsh_select(exact, collisions, b_long, alpha=1.0)


def lsh_only_select(
    exact: ScoreVector, collisions: CollisionScoreVector, b_long: int
) -> tuple[list[int], list[int]]:
    """Pure collision-probability ranking: the hybrid selector with alpha = 0."""
    return exact_lsh_select(exact, collisions, b_long, alpha=0.0)


def sliding_window_select(
    plan: BudgetPlan, block_positions: list[int], *, admit_anchors: bool = True
) -> SelectionResult:
    """Attention sinks plus the recent tail; the recall budget goes unused."""
    block = sorted(block_positions)
    anchors = tuple(block[: plan.anchor]) if admit_anchors else ()
    taken = set(anchors)
    local = tuple(p for p in block[-plan.local :] if p not in taken) if plan.local else ()
    return SelectionResult(anchors=anchors, local_window=local)


def recursive_summary_select(
    summary_positions: list[int],
    block_positions: list[int],
    exact: ScoreVector,
    fixed_size: int,
) -> tuple[SelectionResult, list[int]]:
    """Re-prune the carried summary against the new block by exact score.

    Returns the new summary both as a SelectionResult (the block's whole
    selection, since the previous pool is replaced) and as the carried state.
    """
    if fixed_size < 0:
        raise ValueError(f"fixed_size must be >= 0, got {fixed_size}")
    candidates = sorted(set(summary_positions) | set(block_positions))
    scores = dict(zip(exact.candidate_positions, exact.scores))
    missing = [p for p in candidates if p not in scores]
    if missing:
        raise ValueError(f"positions missing from score vector: {missing}")
    kept = top_k_positions(candidates, scores, fixed_size)
    return SelectionResult(exact_picks=tuple(kept)), kept
