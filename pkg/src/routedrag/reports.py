"""Routing-distribution and cost reports.

The routing report buckets logged decisions by the queried document's page
count and shows the share of each retrieval mode per bucket, optionally side
by side with a second log (routed versus forced runs). The cost report
renders a ledger grouped by stage as two tables, tokens and money, with
absolute and relative savings against a named baseline.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .ledger import CostReport
from .linker import MODES

DEFAULT_BUCKETS = "1-10,11-20,21-50,51+"


@dataclass(frozen=True)
class PageBucket:
    lo: int
    hi: int | None  # None means open-ended

    @property
    def label(self) -> str:
        return f"{self.lo}+" if self.hi is None else f"{self.lo}-{self.hi}"

    def contains(self, pages: int) -> bool:
        return pages >= self.lo and (self.hi is None or pages <= self.hi)


def parse_buckets(spec: str) -> list[PageBucket]:
    buckets = []
    for part in spec.split(","):
        part = part.strip()
        if not part:
            continue
        if part.endswith("+"):
            buckets.append(PageBucket(lo=int(part[:-1]), hi=None))
        else:
            lo, _, hi = part.partition("-")
            buckets.append(PageBucket(lo=int(lo), hi=int(hi or lo)))
    if not buckets:
        raise ValueError(f"no buckets in spec {spec!r}")
    return buckets


def load_decision_log(path: str | Path) -> tuple[list[dict], int]:
    """Parse a decisions JSONL file; malformed lines are skipped and counted."""
    rows: list[dict] = []
    skipped = 0
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        try:
            row = json.loads(line)
            if "mode" not in row or "doc_pages" not in row:
                raise KeyError("mode/doc_pages")
            rows.append(row)
        except (ValueError, KeyError):
            skipped += 1
    return rows, skipped


@dataclass
class BucketStat:
    bucket: PageBucket
    counts: dict = field(default_factory=dict)

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    @property
    def proportions(self) -> dict:
        total = self.total
        return {mode: n / total for mode, n in sorted(self.counts.items())}


@dataclass
class RoutingDistribution:
    buckets: list[BucketStat]
    skipped_lines: int = 0

    def to_json_dict(self) -> dict:
        return {
            "skipped_lines": self.skipped_lines,
            "buckets": [
                {
                    "bucket": stat.bucket.label,
                    "counts": dict(sorted(stat.counts.items())),
                    "proportions": stat.proportions,
                }
                for stat in self.buckets
            ],
        }

    def proportion(self, bucket_label: str, mode: str) -> float:
        for stat in self.buckets:
            if stat.bucket.label == bucket_label:
                return stat.proportions.get(mode, 0.0)
        return 0.0

    def render_table(self) -> str:
        header = f"{'pages':<10}" + "".join(f"{m:>14}" for m in MODES) + f"{'n':>8}"
        lines = [header]
        for stat in self.buckets:
            props = stat.proportions
            lines.append(
                f"{stat.bucket.label:<10}"
                + "".join(f"{props.get(m, 0.0):>14.1%}" for m in MODES)
                + f"{stat.total:>8}"
            )
        if self.skipped_lines:
            lines.append(f"(skipped {self.skipped_lines} malformed lines)")
        return "\n".join(lines)


def routing_distribution(
    rows: list[dict], buckets: list[PageBucket], *, skipped: int = 0
) -> RoutingDistribution:
    """Bucket decisions by document page count; empty buckets are omitted."""
    stats = [BucketStat(bucket=b) for b in buckets]
    for row in rows:
        pages = int(row["doc_pages"])
        for stat in stats:
            if stat.bucket.contains(pages):
                mode = row["mode"]
                stat.counts[mode] = stat.counts.get(mode, 0) + 1
                break
    return RoutingDistribution(
        buckets=[s for s in stats if s.total > 0], skipped_lines=skipped
    )


def render_comparison(
    left: RoutingDistribution,
    right: RoutingDistribution,
    left_label: str = "run A",
    right_label: str = "run B",
    mode: str = "hypergraph",
) -> str:
    """Side-by-side share of one mode per bucket across two logs."""
    labels = [s.bucket.label for s in left.buckets]
    for stat in right.buckets:
        if stat.bucket.label not in labels:
            labels.append(stat.bucket.label)
    lines = [f"{'pages':<10}{left_label:>16}{right_label:>16}   ({mode} share)"]
    for label in labels:
        lines.append(
            f"{label:<10}"
            f"{left.proportion(label, mode):>16.1%}"
            f"{right.proportion(label, mode):>16.1%}"
        )
    return "\n".join(lines)


def _fmt_tokens(n: int) -> str:
    return f"{n / 1000:.1f}k" if n >= 1000 else str(n)


def render_cost_tables(report: CostReport) -> str:
    """Two-table layout: token counts and monetary cost per group."""
    groups = sorted(set(report.groups) | set(report.baseline_groups))
    width = max([len(g) for g in groups] + [12]) + 2

    def row(label: str, cells: list[str]) -> str:
        return f"{label:<{width}}" + "".join(f"{c:>16}" for c in cells)

    out = ["== tokens =="]
    out.append(row("pipeline", groups + ["total"]))
    if report.baseline_label is not None:
        base_cells = [
            _fmt_tokens(report.baseline_groups[g].total_tokens)
            if g in report.baseline_groups
            else "-"
            for g in groups
        ]
        out.append(
            row(report.baseline_label, base_cells + [_fmt_tokens(report.baseline_total_tokens)])
        )
    run_cells = [
        _fmt_tokens(report.groups[g].total_tokens) if g in report.groups else "-"
        for g in groups
    ]
    out.append(row(report.label, run_cells + [_fmt_tokens(report.total_tokens)]))
    if report.savings_total is not None:
        abs_cells = [
            _fmt_tokens(report.savings_by_group[g].tokens_abs) if g in report.savings_by_group else "-"
            for g in groups
        ]
        out.append(row("savings (abs.)", abs_cells + [_fmt_tokens(report.savings_total.tokens_abs)]))
        rel_cells = [
            f"{report.savings_by_group[g].tokens_rel:.1%}"
            if g in report.savings_by_group and report.savings_by_group[g].tokens_rel is not None
            else "-"
            for g in groups
        ]
        total_rel = (
            f"{report.savings_total.tokens_rel:.1%}"
            if report.savings_total.tokens_rel is not None
            else "-"
        )
        out.append(row("savings (rel.)", rel_cells + [total_rel]))

    out.append("")
    out.append("== money ==")
    out.append(row("pipeline", groups + ["total"]))
    if report.baseline_label is not None:
        base_cells = [
            f"{report.baseline_groups[g].cost:.4f}" if g in report.baseline_groups else "-"
            for g in groups
        ]
        out.append(row(report.baseline_label, base_cells + [f"{report.baseline_total_cost:.4f}"]))
    run_cells = [
        f"{report.groups[g].cost:.4f}" if g in report.groups else "-" for g in groups
    ]
    out.append(row(report.label, run_cells + [f"{report.total_cost:.4f}"]))
    if report.savings_total is not None:
        abs_cells = [
            f"{report.savings_by_group[g].cost_abs:.4f}" if g in report.savings_by_group else "-"
            for g in groups
        ]
        out.append(row("savings (abs.)", abs_cells + [f"{report.savings_total.cost_abs:.4f}"]))
        rel_cells = [
            f"{report.savings_by_group[g].cost_rel:.1%}"
            if g in report.savings_by_group and report.savings_by_group[g].cost_rel is not None
            else "-"
            for g in groups
        ]
        total_rel = (
            f"{report.savings_total.cost_rel:.1%}"
            if report.savings_total.cost_rel is not None
            else "-"
        )
        out.append(row("savings (rel.)", rel_cells + [total_rel]))
    return "\n".join(out)
