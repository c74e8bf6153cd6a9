"""Accumulative block processing over a trace.

Blocks are consecutive slices of the trace. Each block is scored over a window
that includes the previous block's tail (look-back), the policy selects at most
the per-block budget, and selections are appended to a pool that never evicts.
The recursive-summary policy runs in a separate mode where the pool is replaced
each block; it exists as a contrast arm and is the only non-append-only path.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baselines import PolicyHandle, PolicyKind, recursive_summary_select, sliding_window_select
from .core import (
    CompressionConfig,
    SelectionReason,
    TokenEntry,
    ValidatedConfig,
    validate_config,
)
from .lsh import HashTableSet, build_tables, collision_scores
from .scoring import exact_scores
from .selection import SelectionResult, assemble_block_selection
from .trace import KvTrace


class PolicyContractError(RuntimeError):
    """A policy returned out-of-range or duplicate positions (policy bug)."""


class MemoryPool:
    """Append-only store of admitted tokens with O(1) membership checks."""

    def __init__(self) -> None:
        self.entries: list[TokenEntry] = []
        self.admitted_blocks = 0
        self._positions: set[int] = set()

    def __contains__(self, position: int) -> bool:
        return position in self._positions

    def __len__(self) -> int:
        return len(self.entries)

    def positions(self) -> set[int]:
        return set(self._positions)

    def admit_block(self, entries: list[TokenEntry]) -> None:
        for entry in entries:
            if entry.position in self._positions:
                raise PolicyContractError(
                    f"position {entry.position} admitted twice"
                )
            self._positions.add(entry.position)
            self.entries.append(entry)
        self.admitted_blocks += 1


@dataclass
class BlockReport:
    """Per-block accounting; selection is kept in-memory for replay checks
    and is not part of the serialized record."""

    block_id: int
    candidates: int
    admitted_anchor: int
    admitted_local: int
    admitted_exact: int
    admitted_lsh: int
    admitted_second_chance: int
    pool_size: int
    elapsed_us: int
    uncompressed: bool
    selection: SelectionResult = field(repr=False, default_factory=SelectionResult)

    def admitted_total(self) -> int:
        return (
            self.admitted_anchor + self.admitted_local + self.admitted_exact
            + self.admitted_lsh + self.admitted_second_chance
        )

    def to_json_dict(self) -> dict:
        return {
            "block_id": self.block_id,
            "candidates": self.candidates,
            "admitted_anchor": self.admitted_anchor,
            "admitted_local": self.admitted_local,
            "admitted_exact": self.admitted_exact,
            "admitted_lsh": self.admitted_lsh,
            "admitted_second_chance": self.admitted_second_chance,
            "pool_size": self.pool_size,
            "elapsed_us": self.elapsed_us,
            "uncompressed": self.uncompressed,
        }


def write_block_reports(reports: list[BlockReport], path: str | Path) -> None:
    """Emit one JSON object per block, one per line."""
    with open(path, "w") as fh:
        for report in reports:
            fh.write(json.dumps(report.to_json_dict()) + "\n")


def block_slices(total_tokens: int, block_size: int) -> list[tuple[int, int]]:
    """Consecutive [start, end) block bounds; the final block may be short."""
    return [
        (start, min(start + block_size, total_tokens))
        for start in range(0, total_tokens, block_size)
    ]


def _query_rows(start: int, end: int, scoring_window: int) -> list[int]:
    # Clamped to the current block so every row keeps at least one unmasked
    # candidate even when the whole look-back tail is already pooled.
    count = min(scoring_window, end - start)
    return list(range(end - count, end))


def _query_representative(trace: KvTrace, query_rows: list[int]) -> np.ndarray:
    """Mean of the scoring-window queries per (layer, head), unit-normalized."""
    stacked = trace.queries[np.asarray(query_rows, dtype=np.int64)].astype(np.float64)
    mean = stacked.mean(axis=0)  # (L, H, d)
    norms = np.linalg.norm(mean, axis=-1, keepdims=True)
    degenerate = norms[..., 0] < 1e-12
    if degenerate.any():
        # Probability-zero for continuous data; fall back to the last row.
        fallback = trace.queries[query_rows[-1]].astype(np.float64)
        mean[degenerate] = fallback[degenerate]
        norms = np.linalg.norm(mean, axis=-1, keepdims=True)
    return mean / norms


def _entries_for(
    trace: KvTrace, positions: tuple[int, ...], block_id: int, reason: SelectionReason
) -> list[TokenEntry]:
    return [
        TokenEntry(
            position=p,
            key=trace.keys[p].copy(),
            value=trace.values[p].copy(),
            block_id=block_id,
            reason=reason,
        )
        for p in positions
    ]


def _check_selection(
    sel: SelectionResult, candidates: set[int], pool: MemoryPool, budget: int
) -> None:
    positions = (
        list(sel.anchors) + list(sel.local_window) + list(sel.exact_picks)
        + list(sel.lsh_picks) + list(sel.second_chance)
    )
    if len(positions) != len(set(positions)):
        raise PolicyContractError("selection lists are not pairwise disjoint")
    for p in positions:
        if p not in candidates:
            raise PolicyContractError(f"selected position {p} is not a candidate")
        if p in pool:
            raise PolicyContractError(f"selected position {p} already pooled")
    if len(positions) > budget:
        raise PolicyContractError(
            f"selection of {len(positions)} exceeds block budget {budget}"
        )


def run_pipeline(
    trace: KvTrace,
    cfg: CompressionConfig,
    policy: PolicyHandle,
) -> tuple[MemoryPool, list[BlockReport]]:
    """Process the trace block by block and return the final pool and reports."""
    validated = validate_config(cfg, trace.shape, trace.num_tokens)
    if policy.kind is PolicyKind.RECURSIVE_SUMMARY:
        return _run_recursive(trace, validated, policy)
    return _run_accumulative(trace, validated, policy)


def _run_accumulative(
    trace: KvTrace, validated: ValidatedConfig, policy: PolicyHandle
) -> tuple[MemoryPool, list[BlockReport]]:
    cfg = validated.config
    plan = validated.plan
    pool = MemoryPool()
    reports: list[BlockReport] = []
    tables: HashTableSet | None = None

    for block_id, (start, end) in enumerate(
        block_slices(trace.num_tokens, cfg.block_size)
    ):
        t0 = time.perf_counter_ns()
        block_positions = list(range(start, end))
        # Tail reaches into the previous block only, so a token is a candidate
        # at most twice: in its own block and once more with look-back.
        tail_start = max(0, start - min(validated.lookback, cfg.block_size))
        tail_candidates = [p for p in range(tail_start, start) if p not in pool]
        candidates = tail_candidates + block_positions
        anchors_here = policy.per_block_anchors or block_id == 0
        extra_recall = 0 if anchors_here else plan.anchor
        recall_budget = plan.recall + extra_recall

        if policy.kind is PolicyKind.SLIDING_WINDOW or recall_budget == 0:
            sel = sliding_window_select(
                plan, block_positions, admit_anchors=anchors_here
            )
        else:
            query_rows = _query_rows(start, end, cfg.scoring_window)
            alpha = policy.effective_alpha(cfg.alpha)
            exact = exact_scores(trace, candidates, query_rows)
            collisions = None
            if recall_budget - math.floor(alpha * recall_budget) > 0:
                if tables is None:
                    tables = build_tables(
                        trace.shape, cfg.hash_rounds, cfg.hash_bits, cfg.rng_seed
                    )
                representative = _query_representative(trace, query_rows)
                collisions = collision_scores(tables, trace, candidates, representative)
            sel = assemble_block_selection(
                block_positions,
                tail_candidates,
                plan,
                exact,
                collisions,
                alpha,
                admit_anchors=anchors_here,
                extra_recall=extra_recall,
            )

        _check_selection(sel, set(candidates), pool, plan.total)
        entries = (
            _entries_for(trace, sel.anchors, block_id, SelectionReason.ANCHOR)
            + _entries_for(trace, sel.local_window, block_id, SelectionReason.LOCAL_WINDOW)
            + _entries_for(trace, sel.exact_picks, block_id, SelectionReason.EXACT_TOPK)
            + _entries_for(trace, sel.lsh_picks, block_id, SelectionReason.LSH_TOPK)
            + _entries_for(trace, sel.second_chance, block_id, SelectionReason.SECOND_CHANCE)
        )
        pool.admit_block(entries)
        reports.append(BlockReport(
            block_id=block_id,
            candidates=len(candidates),
            admitted_anchor=len(sel.anchors),
            admitted_local=len(sel.local_window),
            admitted_exact=len(sel.exact_picks),
            admitted_lsh=len(sel.lsh_picks),
            admitted_second_chance=len(sel.second_chance),
            pool_size=len(pool),
            elapsed_us=(time.perf_counter_ns() - t0) // 1000,
            uncompressed=sel.total() == len(candidates),
            selection=sel,
        ))
    return pool, reports


def _run_recursive(
    trace: KvTrace, validated: ValidatedConfig, policy: PolicyHandle
) -> tuple[MemoryPool, list[BlockReport]]:
    cfg = validated.config
    slices = block_slices(trace.num_tokens, cfg.block_size)
    fixed_size = policy.fixed_size
    if fixed_size is None:
        fixed_size = validated.budget * len(slices)

    summary: list[int] = []
    pool = MemoryPool()
    reports: list[BlockReport] = []
    for block_id, (start, end) in enumerate(slices):
        t0 = time.perf_counter_ns()
        block_positions = list(range(start, end))
        candidates = sorted(set(summary) | set(block_positions))
        if fixed_size == 0:
            sel, summary = SelectionResult(), []
        else:
            query_rows = _query_rows(start, end, cfg.scoring_window)
            exact = exact_scores(trace, candidates, query_rows)
            sel, summary = recursive_summary_select(
                summary, block_positions, exact, fixed_size
            )
        pool = MemoryPool()  # replaced, not appended
        pool.admit_block(
            _entries_for(trace, sel.exact_picks, block_id, SelectionReason.EXACT_TOPK)
        )
        reports.append(BlockReport(
            block_id=block_id,
            candidates=len(candidates),
            admitted_anchor=0,
            admitted_local=0,
            admitted_exact=len(sel.exact_picks),
            admitted_lsh=0,
            admitted_second_chance=0,
            pool_size=len(pool),
            elapsed_us=(time.perf_counter_ns() - t0) // 1000,
            uncompressed=sel.total() == len(candidates),
            selection=sel,
        ))
    return pool, reports


def final_cache_view(pool: MemoryPool) -> dict[int, TokenEntry]:
    """Pool entries keyed and ordered by absolute position."""
    return {e.position: e for e in sorted(pool.entries, key=lambda e: e.position)}


def pools_identical(a: MemoryPool, b: MemoryPool) -> bool:
    """Bitwise equality of two pools, including tensors and provenance."""
    if len(a) != len(b):
        return False
    for left, right in zip(a.entries, b.entries):
        if (left.position, left.block_id, left.reason) != (
            right.position, right.block_id, right.reason
        ):
            return False
        if left.key.tobytes() != right.key.tobytes():
            return False
        if left.value.tobytes() != right.value.tobytes():
            return False
    return True
