"""Command line entry points.

Subcommands: gen-trace, run, sweep, report.
Exit codes: 0 success, 1 run failure, 2 invalid config.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .baselines import PolicyHandle
from .core import (
    CompressionConfig,
    ConfigValidationError,
    ModelShape,
    load_config_file,
)
from .harness import (
    load_experiment_spec,
    read_metrics_csv,
    run_experiment,
    run_single,
    summarize_records,
    format_summary_table,
    write_metrics_csv,
    write_summary_csv,
)
from .pipeline import write_block_reports
from .trace import (
    TraceCorruptError,
    UnsupportedVersionError,
    generate_trace,
    load_trace,
    save_trace,
)

EXIT_OK = 0
EXIT_RUN_FAILURE = 1
EXIT_INVALID_CONFIG = 2


def _parse_needle(raw: str) -> tuple[int, float, str]:
    pieces = raw.split(":")
    if len(pieces) < 2:
        raise argparse.ArgumentTypeError(
            f"expected position:cosine[:label], got {raw!r}"
        )
    label = pieces[2] if len(pieces) > 2 else ""
    return int(pieces[0]), float(pieces[1]), label


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="flat key=value config file")
    parser.add_argument("--block-size", type=int, dest="block_size")
    parser.add_argument("--ratio", type=float, dest="compression_ratio")
    parser.add_argument("--divisor", type=int, dest="protection_divisor")
    parser.add_argument("--alpha", type=float)
    parser.add_argument("--hash-rounds", type=int, dest="hash_rounds")
    parser.add_argument("--hash-bits", type=int, dest="hash_bits")
    parser.add_argument("--lookback", type=int)
    parser.add_argument("--scoring-window", type=int, dest="scoring_window")
    parser.add_argument("--seed", type=int, dest="rng_seed")


def _build_config(args: argparse.Namespace) -> CompressionConfig:
    cfg = CompressionConfig()
    if args.config is not None:
        cfg = CompressionConfig.from_mapping(load_config_file(args.config))
    overrides = {
        name: getattr(args, name)
        for name in ("block_size", "compression_ratio", "protection_divisor",
                     "alpha", "hash_rounds", "hash_bits", "lookback",
                     "scoring_window", "rng_seed")
        if getattr(args, name, None) is not None
    }
    return cfg.override(**overrides)


def _cmd_gen_trace(args: argparse.Namespace) -> int:
    shape = ModelShape(args.layers, args.heads, args.head_dim)
    trace = generate_trace(shape, args.tokens, args.needle, seed=args.seed)
    save_trace(trace, args.out)
    print(f"wrote {args.out}: T={args.tokens} L={args.layers} H={args.heads} "
          f"d={args.head_dim} needles={len(trace.needles)} seed={args.seed}")
    return EXIT_OK


def _cmd_run(args: argparse.Namespace) -> int:
    cfg = _build_config(args)
    policy = PolicyHandle.parse(
        args.policy,
        fixed_size=args.fixed_size if args.policy == "recursive" else None,
        per_block_anchors=args.per_block_anchors,
    )
    trace = load_trace(args.trace)
    row, reports = run_single(
        trace, cfg, policy, policy_name=args.policy, config_index=0, repetition=0
    )
    if args.block_report:
        write_block_reports(reports, args.block_report)
    if args.csv:
        write_metrics_csv([row], args.csv)
    print(json.dumps(row.to_record(), indent=2))
    return EXIT_OK


def _cmd_sweep(args: argparse.Namespace) -> int:
    spec = load_experiment_spec(args.spec)
    if args.out_csv or args.out_json:
        from dataclasses import replace
        spec = replace(
            spec,
            out_csv=str(args.out_csv) if args.out_csv else spec.out_csv,
            out_json=str(args.out_json) if args.out_json else spec.out_json,
        )
    rows = run_experiment(spec)
    failed = [r for r in rows if r.status != "ok"]
    print(f"{len(rows)} runs, {len(failed)} failed"
          + (f"; csv: {spec.out_csv}" if spec.out_csv else "")
          + (f"; json: {spec.out_json}" if spec.out_json else ""))
    for row in failed:
        print(f"  failed: policy={row.policy} config={row.config_index} "
              f"rep={row.repetition}: {row.error}", file=sys.stderr)
    return EXIT_RUN_FAILURE if failed else EXIT_OK


def _cmd_report(args: argparse.Namespace) -> int:
    records: list[dict] = []
    for path in args.csv:
        records.extend(read_metrics_csv(path))
    if not records:
        print("no rows found in the input CSVs", file=sys.stderr)
        return EXIT_RUN_FAILURE
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    summaries = summarize_records(records)
    summary_path = out_dir / "summary.csv"
    write_summary_csv(summaries, summary_path)
    print(format_summary_table(summaries))
    print(f"\nsummary: {summary_path}")
    if not args.no_figures:
        from .figures import render_figures

        for figure in render_figures(records, out_dir):
            print(f"figure: {figure}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="laserkv",
        description="Block-wise KV-cache compression with hybrid exact + LSH "
                    "token selection, plus baseline policies and a sweep harness.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-trace", help="generate a synthetic trace file")
    gen.add_argument("--tokens", type=int, required=True)
    gen.add_argument("--layers", type=int, default=2)
    gen.add_argument("--heads", type=int, default=2)
    gen.add_argument("--head-dim", type=int, dest="head_dim", default=64)
    gen.add_argument("--needle", action="append", type=_parse_needle, default=[],
                     metavar="POS:COSINE[:LABEL]",
                     help="plant a needle key at the given cosine to the probe query")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", type=Path, required=True)
    gen.set_defaults(func=_cmd_gen_trace)

    run = sub.add_parser("run", help="run one policy + config on a trace")
    run.add_argument("--trace", type=Path, required=True)
    run.add_argument("--policy", default="laser",
                     choices=["laser", "exact", "lsh", "window", "recursive"])
    run.add_argument("--fixed-size", type=int, dest="fixed_size",
                     help="summary size for the recursive policy")
    run.add_argument("--per-block-anchors", action="store_true",
                     dest="per_block_anchors")
    run.add_argument("--block-report", type=Path, dest="block_report",
                     help="write per-block JSONL reports here")
    run.add_argument("--csv", type=Path, help="append the metrics row to a CSV")
    _add_config_flags(run)
    run.set_defaults(func=_cmd_run)

    sweep = sub.add_parser("sweep", help="run an experiment spec file")
    sweep.add_argument("--spec", type=Path, required=True)
    sweep.add_argument("--out-csv", type=Path, dest="out_csv")
    sweep.add_argument("--out-json", type=Path, dest="out_json")
    sweep.set_defaults(func=_cmd_sweep)

    report = sub.add_parser("report",
                            help="aggregate metrics CSVs into summary tables and figures")
    report.add_argument("--csv", type=Path, action="append", required=True,
                        help="metrics CSV (repeatable)")
    report.add_argument("--out-dir", type=Path, dest="out_dir", default=Path("reports"))
    report.add_argument("--no-figures", action="store_true", dest="no_figures")
    report.set_defaults(func=_cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigValidationError as exc:
        for issue in exc.issues:
            print(f"config error [{issue.code}]: {issue.message}", file=sys.stderr)
        return EXIT_INVALID_CONFIG
    except (TraceCorruptError, UnsupportedVersionError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUN_FAILURE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID_CONFIG


if __name__ == "__main__":
    sys.exit(main())
