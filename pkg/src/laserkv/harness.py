"""Experiment driver: sweeps, retrieval metrics, and machine-readable reports.

Needle retention and oracle overlap are mechanism-level proxies measured
against the probe query (the trace's final-token query); neither is a model
accuracy number. Rows are deterministic given the spec seed, so wall-time
measurements are kept out of the serialized schema and live only in the
per-block JSONL reports.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

from .baselines import PolicyHandle
from .core import CompressionConfig, ModelShape, validate_config
from .pipeline import BlockReport, MemoryPool, run_pipeline
from .scoring import exact_scores
from .selection import top_k_positions
from .trace import KvTrace, generate_trace

METRICS_SCHEMA = "laserkv-metrics-v1"

CSV_COLUMNS = [
    "schema", "policy", "config_index", "repetition", "trace_seed", "run_seed",
    "tokens", "num_layers", "num_heads", "head_dim",
    "block_size", "ratio", "divisor", "alpha", "hash_rounds", "hash_bits",
    "lookback", "scoring_window",
    "budget", "anchor_budget", "local_budget", "recall_budget",
    "num_blocks", "uncompressed_blocks", "pool_size", "achieved_compression",
    "needles_total", "needles_retained", "needle_retention", "oracle_overlap",
    "status", "error",
]

_MASK64 = (1 << 64) - 1


def mix64(value: int) -> int:
    """splitmix64 finalizer; the stream-splitting primitive for run seeds."""
    value = (value + 0x9E3779B97F4A7C15) & _MASK64
    value = ((value ^ (value >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    value = ((value ^ (value >> 27)) * 0x94D049BB133111EB) & _MASK64
    return value ^ (value >> 31)


def derive_seed(base: int, *parts: int) -> int:
    """Deterministically fold stream labels into a base seed."""
    acc = mix64(base)
    for part in parts:
        acc = mix64(acc ^ mix64(part))
    return acc


@dataclass(frozen=True)
class ExperimentSpec:
    """A sweep: trace parameters x config grid x policies x repetitions."""

    shape: ModelShape
    tokens: int
    needles: tuple[tuple[int, float, str], ...]
    seed: int
    repetitions: int
    policies: tuple[str, ...]
    ratios: tuple[float, ...] = (0.25,)
    divisors: tuple[int, ...] = (4,)
    alphas: tuple[float, ...] = (0.75,)
    hash_rounds: tuple[int, ...] = (64,)
    hash_bits: tuple[int, ...] = (8,)
    block_sizes: tuple[int, ...] = (4096,)
    scoring_window: int = 16
    lookback: int | None = None
    recursive_fixed_size: int | None = None
    per_block_anchors: bool = False
    out_csv: str | None = None
    out_json: str | None = None

    def __post_init__(self) -> None:
        for name in ("policies", "ratios", "divisors", "alphas",
                     "hash_rounds", "hash_bits", "block_sizes"):
            if not getattr(self, name):
                raise ValueError(f"sweep list {name} is empty")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")

    def configs(self) -> list[CompressionConfig]:
        """Cross-product of the sweep lists, in declaration order."""
        grid = []
        for block_size in self.block_sizes:
            for ratio in self.ratios:
                for divisor in self.divisors:
                    for alpha in self.alphas:
                        for rounds in self.hash_rounds:
                            for bits in self.hash_bits:
                                grid.append(CompressionConfig(
                                    block_size=block_size,
                                    compression_ratio=ratio,
                                    protection_divisor=divisor,
                                    alpha=alpha,
                                    hash_rounds=rounds,
                                    hash_bits=bits,
                                    lookback=self.lookback,
                                    scoring_window=self.scoring_window,
                                ))
        return grid


@dataclass
class MetricsRow:
    """One run's metrics; block_elapsed_us is in-memory only (not serialized,
    so identical sweeps serialize to identical bytes)."""

    policy: str
    config_index: int
    repetition: int
    trace_seed: int
    run_seed: int
    tokens: int
    num_layers: int
    num_heads: int
    head_dim: int
    block_size: int
    ratio: float
    divisor: int
    alpha: float
    hash_rounds: int
    hash_bits: int
    lookback: int
    scoring_window: int
    budget: int
    anchor_budget: int
    local_budget: int
    recall_budget: int
    num_blocks: int
    uncompressed_blocks: int
    pool_size: int
    achieved_compression: float
    needles_total: int
    needles_retained: int
    needle_retention: float
    oracle_overlap: float
    status: str = "ok"
    error: str = ""
    block_elapsed_us: list[int] = field(default_factory=list)

    def to_record(self) -> dict:
        record = {"schema": METRICS_SCHEMA}
        for column in CSV_COLUMNS[1:]:
            record[column] = getattr(self, column)
        return record


def needle_retention(pool: MemoryPool, trace: KvTrace) -> tuple[int, int, float]:
    """(planted, retained, fraction); vacuously 1.0 with nothing planted."""
    total = len(trace.needles)
    if total == 0:
        return 0, 0, 1.0
    retained = sum(1 for n in trace.needles if n.position in pool)
    return total, retained, retained / total


def compute_oracle_overlap(pool: MemoryPool, trace: KvTrace) -> float:
    """Agreement with the full-context exact-attention reference.

    All tokens are ranked by exact score against the probe query with no
    blocking; the overlap of pool positions with the top-|pool| oracle set is
    divided by |pool|.
    """
    size = len(pool)
    if size == 0:
        return 1.0
    everything = list(range(trace.num_tokens))
    ranked = exact_scores(trace, everything, [trace.num_tokens - 1])
    by_position = dict(zip(ranked.candidate_positions, ranked.scores))
    oracle_set = set(top_k_positions(everything, by_position, size))
    return len(pool.positions() & oracle_set) / size


def run_single(
    trace: KvTrace,
    cfg: CompressionConfig,
    policy: PolicyHandle,
    *,
    policy_name: str,
    config_index: int,
    repetition: int,
) -> tuple[MetricsRow, list[BlockReport]]:
    """Run one policy on one trace and compute its metrics row."""
    validated = validate_config(cfg, trace.shape, trace.num_tokens)
    pool, reports = run_pipeline(trace, cfg, policy)
    planted, retained, retention = needle_retention(pool, trace)
    row = MetricsRow(
        policy=policy_name,
        config_index=config_index,
        repetition=repetition,
        trace_seed=trace.seed,
        run_seed=cfg.rng_seed,
        tokens=trace.num_tokens,
        num_layers=trace.shape.num_layers,
        num_heads=trace.shape.num_heads,
        head_dim=trace.shape.head_dim,
        block_size=cfg.block_size,
        ratio=cfg.compression_ratio,
        divisor=cfg.protection_divisor,
        alpha=cfg.alpha,
        hash_rounds=cfg.hash_rounds,
        hash_bits=cfg.hash_bits,
        lookback=validated.lookback,
        scoring_window=cfg.scoring_window,
        budget=validated.budget,
        anchor_budget=validated.plan.anchor,
        local_budget=validated.plan.local,
        recall_budget=validated.plan.recall,
        num_blocks=len(reports),
        uncompressed_blocks=sum(1 for r in reports if r.uncompressed),
        pool_size=len(pool),
        achieved_compression=len(pool) / trace.num_tokens,
        needles_total=planted,
        needles_retained=retained,
        needle_retention=retention,
        oracle_overlap=compute_oracle_overlap(pool, trace),
        block_elapsed_us=[r.elapsed_us for r in reports],
    )
    return row, reports


def _failure_row(
    spec: ExperimentSpec, cfg: CompressionConfig, policy_name: str,
    config_index: int, repetition: int, trace_seed: int, error: Exception,
) -> MetricsRow:
    return MetricsRow(
        policy=policy_name,
        config_index=config_index,
        repetition=repetition,
        trace_seed=trace_seed,
        run_seed=cfg.rng_seed,
        tokens=spec.tokens,
        num_layers=spec.shape.num_layers,
        num_heads=spec.shape.num_heads,
        head_dim=spec.shape.head_dim,
        block_size=cfg.block_size,
        ratio=cfg.compression_ratio,
        divisor=cfg.protection_divisor,
        alpha=cfg.alpha,
        hash_rounds=cfg.hash_rounds,
        hash_bits=cfg.hash_bits,
        lookback=-1,
        scoring_window=cfg.scoring_window,
        budget=0, anchor_budget=0, local_budget=0, recall_budget=0,
        num_blocks=0, uncompressed_blocks=0, pool_size=0,
        achieved_compression=0.0,
        needles_total=len(spec.needles), needles_retained=0,
        needle_retention=0.0, oracle_overlap=0.0,
        status="failed",
        error=f"{type(error).__name__}: {error}",
    )


def run_experiment(spec: ExperimentSpec) -> list[MetricsRow]:
    """Run the full sweep; rows are ordered (policy, config index, repetition).

    Per-run failures are recorded as failed rows instead of aborting; callers
    should exit nonzero when any row has status != ok.
    """
    configs = spec.configs()
    rows: list[MetricsRow] = []
    for policy_name in spec.policies:
        policy = PolicyHandle.parse(
            policy_name,
            fixed_size=spec.recursive_fixed_size if policy_name == "recursive" else None,
            per_block_anchors=spec.per_block_anchors,
        )
        for config_index, base_cfg in enumerate(configs):
            for repetition in range(spec.repetitions):
                trace_seed = derive_seed(spec.seed, repetition, 0)
                run_seed = derive_seed(spec.seed, repetition, 1)
                cfg = replace(base_cfg, rng_seed=run_seed)
                try:
                    trace = generate_trace(
                        spec.shape, spec.tokens, list(spec.needles), trace_seed
                    )
                    row, _ = run_single(
                        trace, cfg, policy,
                        policy_name=policy_name,
                        config_index=config_index,
                        repetition=repetition,
                    )
                except Exception as exc:  # recorded, not raised
                    row = _failure_row(
                        spec, cfg, policy_name, config_index, repetition,
                        trace_seed, exc,
                    )
                rows.append(row)
    if spec.out_csv:
        write_metrics_csv(rows, spec.out_csv)
    if spec.out_json:
        write_metrics_json(rows, spec.out_json)
    return rows


def _format_cell(value) -> str:
    if isinstance(value, float):
        return repr(value)  # shortest round-trip form
    return str(value)


def write_metrics_csv(rows: list[MetricsRow], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            record = row.to_record()
            writer.writerow([_format_cell(record[c]) for c in CSV_COLUMNS])


def write_metrics_json(rows: list[MetricsRow], path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump([row.to_record() for row in rows], fh, indent=2)
        fh.write("\n")


def read_metrics_csv(path: str | Path) -> list[dict]:
    """Parse a metrics CSV back into typed records."""
    int_columns = {
        "config_index", "repetition", "trace_seed", "run_seed", "tokens",
        "num_layers", "num_heads", "head_dim", "block_size", "divisor",
        "hash_rounds", "hash_bits", "lookback", "scoring_window", "budget",
        "anchor_budget", "local_budget", "recall_budget", "num_blocks",
        "uncompressed_blocks", "pool_size", "needles_total", "needles_retained",
    }
    float_columns = {
        "ratio", "alpha", "achieved_compression", "needle_retention",
        "oracle_overlap",
    }
    records = []
    with open(path, newline="") as fh:
        for raw in csv.DictReader(fh):
            record: dict = {}
            for key, value in raw.items():
                if key in int_columns:
                    record[key] = int(value)
                elif key in float_columns:
                    record[key] = float(value)
                else:
                    record[key] = value
            records.append(record)
    return records


SUMMARY_COLUMNS = [
    "policy", "config_index", "block_size", "ratio", "divisor", "alpha",
    "hash_rounds", "hash_bits", "runs", "failed",
    "mean_needle_retention", "std_needle_retention",
    "mean_oracle_overlap", "std_oracle_overlap",
    "mean_achieved_compression", "mean_pool_size",
]


def summarize_records(records: list[dict]) -> list[dict]:
    """Aggregate metric records over repetitions, per (policy, config)."""
    import statistics

    groups: dict[tuple, list[dict]] = {}
    for record in records:
        groups.setdefault((record["policy"], record["config_index"]), []).append(record)

    summaries = []
    for (policy, config_index), members in sorted(groups.items()):
        ok = [m for m in members if m.get("status", "ok") == "ok"]
        sample = ok[0] if ok else members[0]

        def agg(column: str, fn) -> float:
            return fn([float(m[column]) for m in ok]) if ok else 0.0

        summaries.append({
            "policy": policy,
            "config_index": config_index,
            "block_size": sample["block_size"],
            "ratio": sample["ratio"],
            "divisor": sample["divisor"],
            "alpha": sample["alpha"],
            "hash_rounds": sample["hash_rounds"],
            "hash_bits": sample["hash_bits"],
            "runs": len(members),
            "failed": len(members) - len(ok),
            "mean_needle_retention": agg("needle_retention", statistics.fmean),
            "std_needle_retention": agg("needle_retention", statistics.pstdev),
            "mean_oracle_overlap": agg("oracle_overlap", statistics.fmean),
            "std_oracle_overlap": agg("oracle_overlap", statistics.pstdev),
            "mean_achieved_compression": agg("achieved_compression", statistics.fmean),
            "mean_pool_size": agg("pool_size", statistics.fmean),
        })
    return summaries


def write_summary_csv(summaries: list[dict], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_COLUMNS)
        for summary in summaries:
            writer.writerow([_format_cell(summary[c]) for c in SUMMARY_COLUMNS])


def format_summary_table(summaries: list[dict]) -> str:
    """Fixed-width text table of the headline columns."""
    headers = ["policy", "cfg", "ratio", "divisor", "alpha", "runs",
               "retention", "overlap", "compression"]
    rows = [[
        s["policy"], str(s["config_index"]), f"{s['ratio']:g}", str(s["divisor"]),
        f"{s['alpha']:g}", str(s["runs"]),
        f"{s['mean_needle_retention']:.3f}" + ("" if s["runs"] < 2 else f" ±{s['std_needle_retention']:.3f}"),
        f"{s['mean_oracle_overlap']:.3f}",
        f"{s['mean_achieved_compression']:.3f}",
    ] for s in summaries]
    widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h)
              for i, h in enumerate(headers)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(headers, widths))]
    for row in rows:
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)))
    return "\n".join(lines)


def _parse_list(raw: str, kind) -> tuple:
    return tuple(kind(part.strip()) for part in raw.split(",") if part.strip())


def _parse_needles(raw: str) -> tuple[tuple[int, float, str], ...]:
    needles = []
    for part in raw.split(","):
        part = part.strip()
        if not part:
            continue
        pieces = part.split(":")
        label = pieces[2] if len(pieces) > 2 else ""
        needles.append((int(pieces[0]), float(pieces[1]), label))
    return tuple(needles)


def load_experiment_spec(path: str | Path) -> ExperimentSpec:
    """Build an ExperimentSpec from a flat key=value file.

    List-valued keys (policies, ratio, divisor, alpha, hash_rounds, hash_bits,
    block_size) are comma-separated; needles are position:cosine[:label].
    """
    from .core import load_config_file

    mapping = load_config_file(path)

    def pop(key: str, default=None) -> str | None:
        return mapping.pop(key, default)

    try:
        spec = ExperimentSpec(
            shape=ModelShape(
                num_layers=int(pop("layers", "2")),
                num_heads=int(pop("heads", "2")),
                head_dim=int(pop("head_dim", "64")),
            ),
            tokens=int(pop("tokens", "4096")),
            needles=_parse_needles(pop("needles", "")),
            seed=int(pop("seed", "0")),
            repetitions=int(pop("repetitions", "1")),
            policies=_parse_list(pop("policies", "laser"), str),
            ratios=_parse_list(pop("ratio", "0.25"), float),
            divisors=_parse_list(pop("divisor", "4"), int),
            alphas=_parse_list(pop("alpha", "0.75"), float),
            hash_rounds=_parse_list(pop("hash_rounds", "64"), int),
            hash_bits=_parse_list(pop("hash_bits", "8"), int),
            block_sizes=_parse_list(pop("block_size", "4096"), int),
            scoring_window=int(pop("scoring_window", "16")),
            lookback=(lambda raw: None if raw in (None, "", "auto", "none")
                      else int(raw))(pop("lookback")),
            recursive_fixed_size=(lambda raw: None if raw is None
                                  else int(raw))(pop("recursive_fixed_size")),
            per_block_anchors=pop("per_block_anchors", "0") in ("1", "true", "yes"),
            out_csv=pop("out_csv"),
            out_json=pop("out_json"),
        )
    except (TypeError, ValueError) as exc:
        raise ValueError(f"{path}: {exc}") from exc
    if mapping:
        raise ValueError(f"{path}: unknown keys: {', '.join(sorted(mapping))}")
    return spec
