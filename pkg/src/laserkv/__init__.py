"""Accumulative block-wise KV-cache compression.

A per-block budget (the compression-ratio-scaled harmonic mean of block size
and context length) is split by a protection divisor into attention-sink
anchors, a local window, and a recall share filled by a hybrid of exact
attention Top-K and SimHash collision Top-K. Selected tokens are appended to a
pool that never evicts. Baseline policies (pure exact, pure LSH, sliding
window, recursive fixed-size summary) share the same pipeline and budgets.
"""

from .baselines import (
    PolicyHandle,
    PolicyKind,
    exact_only_select,
    lsh_only_select,
    recursive_summary_select,
    sliding_window_select,
)
from .core import (
    BudgetPlan,
    CompressionConfig,
    ConfigValidationError,
    ModelShape,
    SelectionReason,
    TokenEntry,
    ValidatedConfig,
    effective_budget,
    partition_budget,
    validate_config,
)
from .harness import (
    ExperimentSpec,
    MetricsRow,
    compute_oracle_overlap,
    load_experiment_spec,
    needle_retention,
    run_experiment,
    run_single,
)
from .lsh import CollisionScoreVector, HashTableSet, build_tables, collision_scores, hash_code
from .pipeline import (
    BlockReport,
    MemoryPool,
    PolicyContractError,
    final_cache_view,
    pools_identical,
    run_pipeline,
    write_block_reports,
)
from .scoring import ScoreVector, exact_scores
from .selection import SelectionResult, assemble_block_selection, exact_lsh_select
from .trace import (
    KvTrace,
    NeedleAnnotation,
    TraceCorruptError,
    UnsupportedVersionError,
    generate_trace,
    load_trace,
    save_trace,
)

__version__ = "0.1.0"
