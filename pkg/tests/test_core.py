from __future__ import annotations

import math
from fractions import Fraction

import numpy as np
import pytest

from laserkv import (
    CompressionConfig,
    ConfigValidationError,
    ModelShape,
    effective_budget,
    partition_budget,
    validate_config,
)
from laserkv.core import load_config_file

# Frozen oracle table: floor(2 * r * s * l / (s + l)) evaluated in exact
# rational arithmetic over the binary value of r.
BUDGET_TABLE = [
    (0.25, 4096, 16384, 1638),
    (0.25, 4096, 4096, 1024),
    (1.0, 1, 1, 1),
    (0.25, 4096, 65536, 1927),
    (0.25, 4096, 131072, 1985),
    (0.25, 1024, 16384, 481),
    (0.5, 4096, 16384, 3276),
    (0.75, 4096, 16384, 4915),
    (1.0, 4096, 16384, 6553),
    (0.1, 4096, 16384, 655),
    (0.25, 16384, 4096, 1638),
    (0.3, 1000, 3000, 449),
    (0.33, 512, 8192, 318),
    (0.25, 1, 1000000, 0),
    (0.2, 7, 13, 1),
    (0.9, 100, 100, 90),
    (0.25, 4096, 8192, 1365),
    (0.25, 2048, 16384, 910),
    (0.6, 333, 999, 299),
    (1.0, 4096, 4096, 4096),
    (0.05, 4096, 1048576, 408),
    (0.45, 12345, 67890, 9401),
]


@pytest.mark.parametrize("ratio,block,total,expected", BUDGET_TABLE)
def test_effective_budget_frozen_table(ratio, block, total, expected):
    assert effective_budget(ratio, block, total) == expected


def test_effective_budget_symmetry(rng):
    for _ in range(200):
        ratio = float(rng.uniform(0.01, 1.0))
        a = int(rng.integers(1, 10**6))
        b = int(rng.integers(1, 10**6))
        assert effective_budget(ratio, a, b) == effective_budget(ratio, b, a)


def test_effective_budget_equal_lengths_is_scaled_size(rng):
    for _ in range(200):
        ratio = float(rng.uniform(0.01, 1.0))
        size = int(rng.integers(1, 10**6))
        assert effective_budget(ratio, size, size) == math.floor(Fraction(ratio) * size)


def test_effective_budget_monotone(rng):
    for _ in range(200):
        ratio = float(rng.uniform(0.01, 0.99))
        block = int(rng.integers(1, 10**5))
        total = int(rng.integers(1, 10**5))
        base = effective_budget(ratio, block, total)
        assert effective_budget(min(1.0, ratio + 0.01), block, total) >= base
        assert effective_budget(ratio, block + 1, total) >= base
        assert effective_budget(ratio, block, total + 1) >= base


def test_effective_budget_rejects_bad_inputs():
    with pytest.raises(ValueError):
        effective_budget(0.0, 16, 16)
    with pytest.raises(ValueError):
        effective_budget(1.5, 16, 16)
    with pytest.raises(ValueError):
        effective_budget(0.5, 0, 16)


def test_partition_hand_examples():
    plan = partition_budget(1638, 4)
    assert (plan.anchor, plan.local, plan.recall) == (409, 409, 820)
    empty = partition_budget(0, 4)
    assert (empty.anchor, empty.local, empty.recall) == (0, 0, 0)
    plan = partition_budget(7, 2)
    assert (plan.anchor, plan.local, plan.recall) == (3, 3, 1)


def test_partition_identity_random(rng):
    for _ in range(10_000):
        budget = int(rng.integers(0, 10**9))
        divisor = int(rng.integers(2, 128))
        plan = partition_budget(budget, divisor)
        assert plan.anchor == plan.local == budget // divisor
        assert plan.anchor >= 0 and plan.recall >= 0
        assert plan.anchor + plan.local + plan.recall == budget


def test_partition_rejects_small_divisor():
    with pytest.raises(ValueError):
        partition_budget(10, 1)


def test_partition_zero_recall_warns(caplog):
    import logging

    with caplog.at_level(logging.WARNING, logger="laserkv.core"):
        plan = partition_budget(4, 2)
    assert plan.recall == 0
    assert any("recall budget is zero" in r.message for r in caplog.records)


def test_validate_config_ok_attaches_plan():
    cfg = CompressionConfig(block_size=64, compression_ratio=0.25)
    validated = validate_config(cfg, ModelShape(2, 2, 8), 4096)
    assert validated.budget == effective_budget(0.25, 64, 4096)
    assert validated.plan.total == validated.budget
    assert validated.lookback == validated.plan.local  # auto default


def test_validate_config_reports_all_violations():
    cfg = CompressionConfig(
        block_size=0,
        compression_ratio=2.0,
        protection_divisor=1,
        alpha=1.5,
        hash_rounds=0,
        hash_bits=0,
        lookback=-3,
        scoring_window=0,
        rng_seed=-1,
    )
    with pytest.raises(ConfigValidationError) as excinfo:
        validate_config(cfg, ModelShape(1, 1, 4), 0)
    codes = set(excinfo.value.codes)
    assert codes == {
        "DivisorTooSmall", "AlphaOutOfRange", "RatioOutOfRange",
        "BlockSizeTooSmall", "HashRoundsTooSmall", "HashBitsTooSmall",
        "LookbackNegative", "ScoringWindowTooSmall", "SeedOutOfRange",
        "ContextTooSmall",
    }


@pytest.mark.parametrize("field,value,code", [
    ("protection_divisor", 1, "DivisorTooSmall"),
    ("alpha", 1.5, "AlphaOutOfRange"),
    ("alpha", -0.1, "AlphaOutOfRange"),
    ("compression_ratio", 0.0, "RatioOutOfRange"),
    ("hash_bits", 65, "HashBitsTooLarge"),
])
def test_validate_config_single_codes(field, value, code):
    cfg = CompressionConfig(**{field: value})
    with pytest.raises(ConfigValidationError) as excinfo:
        validate_config(cfg, ModelShape(2, 2, 8), 4096)
    assert excinfo.value.codes == [code]


def test_model_shape_rejects_nonpositive():
    with pytest.raises(ValueError):
        ModelShape(0, 2, 8)


def test_config_file_roundtrip(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(
        "# compression settings\n"
        "block_size=128\n"
        "compression_ratio=0.5\n"
        "protection_divisor=8\n"
        "alpha=0.25\n"
        "lookback=auto\n"
        "rng_seed=42\n"
    )
    cfg = CompressionConfig.from_mapping(load_config_file(path))
    assert cfg.block_size == 128
    assert cfg.compression_ratio == 0.5
    assert cfg.protection_divisor == 8
    assert cfg.alpha == 0.25
    assert cfg.lookback is None
    assert cfg.rng_seed == 42


def test_config_file_rejects_unknown_keys(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("not_a_field=1\n")
    with pytest.raises(ValueError, match="not_a_field"):
        CompressionConfig.from_mapping(load_config_file(path))
