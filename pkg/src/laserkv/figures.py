"""Figure rendering for the report path. File output only (Agg backend)."""

from __future__ import annotations

import statistics
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

_POLICY_ORDER = ["laser", "exact", "lsh", "window", "recursive"]


def _by_policy(records: list[dict], metric: str) -> dict[str, list[float]]:
    grouped: dict[str, list[float]] = defaultdict(list)
    for record in records:
        if record.get("status", "ok") == "ok":
            grouped[record["policy"]].append(float(record[metric]))
    return grouped


def _policy_names(grouped: dict[str, list[float]]) -> list[str]:
    known = [p for p in _POLICY_ORDER if p in grouped]
    extra = sorted(set(grouped) - set(known))
    return known + extra


def _bar_by_policy(records: list[dict], metric: str, title: str, path: Path) -> None:
    grouped = _by_policy(records, metric)
    names = _policy_names(grouped)
    means = [statistics.fmean(grouped[p]) for p in names]
    errors = [statistics.pstdev(grouped[p]) for p in names]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(names, means, yerr=errors, capsize=4, color="#4878cf")
    ax.set_ylabel(metric.replace("_", " "))
    ax.set_ylim(0, 1.05)
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def _retention_vs_alpha(records: list[dict], path: Path) -> bool:
    points: dict[str, dict[float, list[float]]] = defaultdict(lambda: defaultdict(list))
    for record in records:
        if record.get("status", "ok") == "ok":
            points[record["policy"]][float(record["alpha"])].append(
                float(record["needle_retention"])
            )
    alphas = sorted({a for series in points.values() for a in series})
    if len(alphas) < 2:
        return False
    fig, ax = plt.subplots(figsize=(6, 4))
    for policy in _policy_names(points):
        series = points[policy]
        xs = sorted(series)
        ys = [statistics.fmean(series[a]) for a in xs]
        ax.plot(xs, ys, marker="o", label=policy)
    ax.set_xlabel("alpha (exact share of the recall budget)")
    ax.set_ylabel("needle retention")
    ax.set_ylim(0, 1.05)
    ax.legend()
    ax.set_title("Retention across the exact/LSH mix")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return True


def _compression_scatter(records: list[dict], path: Path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    grouped: dict[str, list[tuple[float, float]]] = defaultdict(list)
    for record in records:
        if record.get("status", "ok") == "ok":
            grouped[record["policy"]].append(
                (float(record["achieved_compression"]), float(record["needle_retention"]))
            )
    for policy in _policy_names(grouped):
        xs, ys = zip(*grouped[policy])
        ax.scatter(xs, ys, label=policy, alpha=0.7, s=18)
    ax.set_xlabel("achieved compression (pool size / tokens)")
    ax.set_ylabel("needle retention")
    ax.legend()
    ax.set_title("Retention against achieved compression")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_figures(records: list[dict], out_dir: str | Path) -> list[Path]:
    """Render the standard report figures; returns the files written."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    usable = [r for r in records if r.get("status", "ok") == "ok"]
    if not usable:
        return []
    written = []
    for metric, title, name in [
        ("needle_retention", "Needle retention by policy", "needle_retention.png"),
        ("oracle_overlap", "Full-attention overlap by policy", "oracle_overlap.png"),
    ]:
        path = out / name
        _bar_by_policy(usable, metric, title, path)
        written.append(path)
    path = out / "compression_tradeoff.png"
    _compression_scatter(usable, path)
    written.append(path)
    path = out / "retention_vs_alpha.png"
    if _retention_vs_alpha(usable, path):
        written.append(path)
    return written
