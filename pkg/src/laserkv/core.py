"""Domain types, configuration, and budget arithmetic.

All token accounting is pure integer arithmetic. The per-block budget is the
compression-ratio-scaled harmonic mean of block size and total context length,
and the protection divisor n splits it into anchor / local-window / recall
shares.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, fields, replace
from fractions import Fraction
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

MAX_SEED = 2**64 - 1
MAX_HASH_BITS = 64  # codes are packed into a single uint64


class SelectionReason(enum.Enum):
    """Why a token was admitted to the memory pool."""

    ANCHOR = "anchor"
    LOCAL_WINDOW = "local_window"
    EXACT_TOPK = "exact_topk"
    LSH_TOPK = "lsh_topk"
    SECOND_CHANCE = "second_chance"


@dataclass(frozen=True)
class ModelShape:
    """Tensor geometry of a trace: layers x heads x head dimension."""

    num_layers: int
    num_heads: int
    head_dim: int

    def __post_init__(self) -> None:
        if min(self.num_layers, self.num_heads, self.head_dim) < 1:
            raise ValueError(f"all shape fields must be >= 1, got {self}")


@dataclass(frozen=True)
class CompressionConfig:
    """Knobs for one compression run.

    ``lookback`` is the previous-block tail length re-scored with the current
    block; ``None`` resolves to the local-window share at validation time.
    ``scoring_window`` is the number of trailing query rows used for scoring.
    """

    block_size: int = 4096
    compression_ratio: float = 0.25
    protection_divisor: int = 4
    alpha: float = 0.75
    hash_rounds: int = 64
    hash_bits: int = 8
    lookback: int | None = None
    scoring_window: int = 16
    rng_seed: int = 0

    @classmethod
    def from_mapping(cls, mapping: dict[str, str]) -> "CompressionConfig":
        """Build a config from flat string key=value pairs (file or CLI)."""
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(mapping) - known)
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(unknown)}")
        kwargs: dict[str, object] = {}
        for key, raw in mapping.items():
            if key in ("compression_ratio", "alpha"):
                kwargs[key] = float(raw)
            elif key == "lookback":
                kwargs[key] = None if raw in ("", "auto", "none") else int(raw, 10)
            else:
                kwargs[key] = int(raw, 10)
        return cls(**kwargs)

    def override(self, **kwargs) -> "CompressionConfig":
        return replace(self, **{k: v for k, v in kwargs.items() if v is not None})


@dataclass(frozen=True)
class BudgetPlan:
    """Partition of a per-block budget under the protection divisor."""

    total: int
    anchor: int
    local: int
    recall: int

    def __post_init__(self) -> None:
        if self.anchor + self.local + self.recall != self.total:
            raise ValueError("budget shares must sum to the total")


@dataclass(eq=False)
class TokenEntry:
    """One admitted cache token: per-(layer, head) key/value plus provenance."""

    position: int
    key: np.ndarray    # (L, H, d) float32
    value: np.ndarray  # (L, H, d) float32
    block_id: int
    reason: SelectionReason


@dataclass(frozen=True)
class ConfigIssue:
    code: str
    message: str


class ConfigValidationError(ValueError):
    """Raised with the complete list of violated config constraints."""

    def __init__(self, issues: list[ConfigIssue]):
        self.issues = issues
        self.codes = [i.code for i in issues]
        super().__init__("; ".join(f"{i.code}: {i.message}" for i in issues))


@dataclass(frozen=True)
class ValidatedConfig:
    """A config checked against a model shape and context length, with the
    derived per-block budget plan attached."""

    config: CompressionConfig
    shape: ModelShape
    total_tokens: int
    budget: int
    plan: BudgetPlan
    lookback: int  # resolved tail length


def effective_budget(ratio: float, block_size: int, total_tokens: int) -> int:
    """Per-block token budget: floor of ratio-scaled harmonic mean of the
    block size and the total context length.

    Evaluated in exact rational arithmetic so the floor matches the real-valued
    expression for the given (binary) ratio, symmetric in its two lengths.
    """
    if not 0.0 < ratio <= 1.0:
        raise ValueError(f"ratio must be in (0, 1], got {ratio}")
    if block_size < 1 or total_tokens < 1:
        raise ValueError("block_size and total_tokens must be >= 1")
    value = Fraction(2) * Fraction(ratio) * block_size * total_tokens
    return math.floor(value / (block_size + total_tokens))


def partition_budget(budget: int, divisor: int) -> BudgetPlan:
    """Split a budget into anchor = local = floor(B/n) with the remainder,
    including the rounding residue, flowing to the recall share."""
    if divisor < 2:
        raise ValueError(f"protection divisor must be >= 2, got {divisor}")
    if budget < 0:
        raise ValueError(f"budget must be >= 0, got {budget}")
    share = budget // divisor
    recall = budget - 2 * share
    if recall == 0 and budget > 0:
        log.warning(
            "recall budget is zero for B=%d, n=%d; policy degenerates to "
            "anchors + local window", budget, divisor,
        )
    return BudgetPlan(total=budget, anchor=share, local=share, recall=recall)


def validate_config(
    cfg: CompressionConfig, shape: ModelShape, total_tokens: int
) -> ValidatedConfig:
    """Check every config invariant and attach the derived budget plan.

    Raises ConfigValidationError carrying the complete list of violations,
    each with a stable machine-readable code.
    """
    issues: list[ConfigIssue] = []

    def bad(code: str, message: str) -> None:
        issues.append(ConfigIssue(code, message))

    if cfg.protection_divisor < 2:
        bad("DivisorTooSmall", f"protection_divisor={cfg.protection_divisor}, need >= 2")
    if not 0.0 <= cfg.alpha <= 1.0:
        bad("AlphaOutOfRange", f"alpha={cfg.alpha}, need [0, 1]")
    if not 0.0 < cfg.compression_ratio <= 1.0:
        bad("RatioOutOfRange", f"compression_ratio={cfg.compression_ratio}, need (0, 1]")
    if cfg.block_size < max(1, cfg.protection_divisor):
        bad("BlockSizeTooSmall",
            f"block_size={cfg.block_size}, need >= protection_divisor")
    if cfg.hash_rounds < 1:
        bad("HashRoundsTooSmall", f"hash_rounds={cfg.hash_rounds}, need >= 1")
    if cfg.hash_bits < 1:
        bad("HashBitsTooSmall", f"hash_bits={cfg.hash_bits}, need >= 1")
    elif cfg.hash_bits > MAX_HASH_BITS:
        bad("HashBitsTooLarge", f"hash_bits={cfg.hash_bits}, need <= {MAX_HASH_BITS}")
    if cfg.scoring_window < 1:
        bad("ScoringWindowTooSmall", f"scoring_window={cfg.scoring_window}, need >= 1")
    if cfg.lookback is not None and cfg.lookback < 0:
        bad("LookbackNegative", f"lookback={cfg.lookback}, need >= 0")
    if not 0 <= cfg.rng_seed <= MAX_SEED:
        bad("SeedOutOfRange", f"rng_seed={cfg.rng_seed}, need unsigned 64-bit")
    if total_tokens < 1:
        bad("ContextTooSmall", f"total_tokens={total_tokens}, need >= 1")

    if issues:
        raise ConfigValidationError(issues)

    budget = effective_budget(cfg.compression_ratio, cfg.block_size, total_tokens)
    plan = partition_budget(budget, cfg.protection_divisor)
    lookback = plan.local if cfg.lookback is None else cfg.lookback
    return ValidatedConfig(
        config=cfg,
        shape=shape,
        total_tokens=total_tokens,
        budget=budget,
        plan=plan,
        lookback=lookback,
    )


def load_config_file(path: str | Path) -> dict[str, str]:
    """Parse a flat key=value config file; '#' starts a comment line."""
    mapping: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, value = stripped.partition("=")
        mapping[key.strip()] = value.strip()
    return mapping
