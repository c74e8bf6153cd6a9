"""Hybrid exact + LSH token selection and per-block set assembly.

The recall budget splits floor(alpha * B_long) : remainder between exact
attention Top-K and collision-score Top-K over the residual candidates. All
Top-K ties break toward the lower absolute position, so selections depend only
on (score, position), never on candidate arrival order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .core import BudgetPlan
from .lsh import CollisionScoreVector
from .scoring import ScoreVector


@dataclass(frozen=True)
class SelectionResult:
    """Positions chosen for one block, split by selection reason.

    The five lists are pairwise disjoint; second_chance holds look-back
    re-admissions that won a recall slot.
    """

    anchors: tuple[int, ...] = ()
    local_window: tuple[int, ...] = ()
    exact_picks: tuple[int, ...] = ()
    lsh_picks: tuple[int, ...] = ()
    second_chance: tuple[int, ...] = ()

    def all_positions(self) -> list[int]:
        return sorted(
            self.anchors + self.local_window + self.exact_picks
            + self.lsh_picks + self.second_chance
        )

    def total(self) -> int:
        return (
            len(self.anchors) + len(self.local_window) + len(self.exact_picks)
            + len(self.lsh_picks) + len(self.second_chance)
        )


def top_k_positions(positions: list[int], scores: dict[int, float], k: int) -> list[int]:
    """Top k positions by score, ties toward the lower position; sorted output."""
    if k <= 0:
        return []
    ranked = sorted(positions, key=lambda p: (-scores[p], p))
    return sorted(ranked[: min(k, len(ranked))])


def exact_lsh_select(
    exact: ScoreVector,
    collisions: CollisionScoreVector | None,
    b_long: int,
    alpha: float,
) -> tuple[list[int], list[int]]:
    """Fill a recall budget with exact-attention picks then LSH picks.

    exact_picks = top floor(alpha * b_long) candidates by exact score; the
    remaining slots go to the highest-collision residual candidates. When the
    candidate set is smaller than the budget everything is selected.

    ``collisions`` may be None only when the LSH share is provably empty.
    """
    if b_long < 0:
        raise ValueError(f"b_long must be >= 0, got {b_long}")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    if collisions is not None and collisions.candidate_positions != exact.candidate_positions:
        raise ValueError("exact and collision score vectors are misaligned")
    positions = list(exact.candidate_positions)
    k_exact = math.floor(alpha * b_long)
    k_lsh = b_long - k_exact

    exact_by_pos = dict(zip(positions, exact.scores))
    exact_picks = top_k_positions(positions, exact_by_pos, k_exact)

    if k_lsh == 0:
        return exact_picks, []
    if collisions is None:
        raise ValueError("collision scores required when the LSH share is non-empty")

    taken = set(exact_picks)
    residual = [p for p in positions if p not in taken]
    lsh_by_pos = dict(zip(positions, collisions.scores))
    lsh_picks = top_k_positions(residual, lsh_by_pos, k_lsh)
    return exact_picks, lsh_picks


def assemble_block_selection(
    block_candidates: list[int],
    prior_tail_candidates: list[int],
    plan: BudgetPlan,
    exact: ScoreVector,
    collisions: CollisionScoreVector | None,
    alpha: float,
    *,
    admit_anchors: bool = True,
    extra_recall: int = 0,
) -> SelectionResult:
    """Assemble the syntactic set plus recall picks for one block.

    Anchors are the first anchor-share positions of the block (callers pass
    the first block or, in per-block mode, every block); the local window is
    the block's tail. Recall picks come from exact_lsh_select over everything
    else, with look-back winners reported as second_chance. ``extra_recall``
    carries a reallocated anchor share on non-anchor blocks.
    """
    block = sorted(block_candidates)
    tail = sorted(prior_tail_candidates)
    overlap = set(block) & set(tail)
    if overlap:
        raise ValueError(f"block and look-back candidates overlap: {sorted(overlap)}")

    anchors = tuple(block[: plan.anchor]) if admit_anchors else ()
    taken = set(anchors)
    local = tuple(p for p in block[-plan.local :] if p not in taken) if plan.local else ()
    taken.update(local)

    recall_candidates = [p for p in block + tail if p not in taken]
    recall_budget = plan.recall + extra_recall
    exact_picks: list[int] = []
    lsh_picks: list[int] = []
    if recall_budget > 0 and recall_candidates:
        exact_sub, collisions_sub = _subset_scores(exact, collisions, recall_candidates)
        exact_picks, lsh_picks = exact_lsh_select(
            exact_sub, collisions_sub, recall_budget, alpha
        )

    tail_set = set(tail)
    second_chance = tuple(sorted(
        p for p in exact_picks + lsh_picks if p in tail_set
    ))
    return SelectionResult(
        anchors=anchors,
        local_window=local,
        exact_picks=tuple(p for p in exact_picks if p not in tail_set),
        lsh_picks=tuple(p for p in lsh_picks if p not in tail_set),
        second_chance=second_chance,
    )


def _subset_scores(
    exact: ScoreVector,
    collisions: CollisionScoreVector | None,
    keep: list[int],
) -> tuple[ScoreVector, CollisionScoreVector | None]:
    """Restrict aligned score vectors to a subset of candidate positions."""
    keep_set = set(keep)
    indices = [
        i for i, p in enumerate(exact.candidate_positions) if p in keep_set
    ]
    if len(indices) != len(keep_set):
        missing = keep_set - set(exact.candidate_positions)
        raise ValueError(f"positions missing from score vector: {sorted(missing)}")
    positions = tuple(exact.candidate_positions[i] for i in indices)
    exact_sub = ScoreVector(scores=exact.scores[indices], candidate_positions=positions)
    collisions_sub = None
    if collisions is not None:
        if collisions.candidate_positions != exact.candidate_positions:
            raise ValueError("exact and collision score vectors are misaligned")
        collisions_sub = CollisionScoreVector(
            scores=collisions.scores[indices], candidate_positions=positions
        )
    return exact_sub, collisions_sub
