"""Token and monetary cost accounting.

Every model invocation becomes one ledger entry carrying the token usage the
endpoint reported. Reports group entries by stage (or model), price them via
a per-model (prompt, completion) price table, and can express absolute and
relative savings against a named baseline ledger. Money is computed with
Decimal so that scaling every price by k scales every cost by exactly k.
"""
from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from decimal import Decimal
from pathlib import Path

from .errors import PriceUnknown

STAGES = ("routing", "extraction", "embedding", "image_description", "summary")

_PER_1K = Decimal(1000)


@dataclass(frozen=True)
class ModelCall:
    """One completed model invocation.

    prompt_tokens + completion_tokens is the call's total token count; the
    stage tag is assigned by the caller before dispatch.
    """

    role: str
    stage: str
    model_name: str
    response: str
    prompt_tokens: int
    completion_tokens: int
    fingerprint: str = ""

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f"unknown stage tag {self.stage!r}")
        if self.prompt_tokens < 0 or self.completion_tokens < 0:
            raise ValueError("token counts must be non-negative")

    @property
    def total_tokens(self) -> int:
        return self.prompt_tokens + self.completion_tokens

    def summary_dict(self) -> dict:
        return {
            "role": self.role,
            "stage": self.stage,
            "model_name": self.model_name,
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
            "fingerprint": self.fingerprint,
        }


def entry_cost(call: ModelCall, prices: dict[str, tuple[Decimal, Decimal]]) -> Decimal:
    try:
        prompt_price, completion_price = prices[call.model_name]
    except KeyError:
        raise PriceUnknown(f"no price for model {call.model_name!r}") from None
    return (
        Decimal(call.prompt_tokens) * prompt_price
        + Decimal(call.completion_tokens) * completion_price
    ) / _PER_1K


class CostLedger:
    """Append-only, thread-safe record of model calls."""

    def __init__(self, entries: list[ModelCall] | None = None):
        self._entries: list[ModelCall] = list(entries or [])
        self._lock = threading.Lock()

    def append(self, call: ModelCall) -> None:
        with self._lock:
            self._entries.append(call)

    @property
    def entries(self) -> tuple[ModelCall, ...]:
        with self._lock:
            return tuple(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    @property
    def total_tokens(self) -> int:
        return sum(e.total_tokens for e in self.entries)

    def tokens_by_stage(self) -> dict[str, dict[str, int]]:
        out: dict[str, dict[str, int]] = {}
        for e in self.entries:
            row = out.setdefault(
                e.stage, {"prompt_tokens": 0, "completion_tokens": 0, "total_tokens": 0}
            )
            row["prompt_tokens"] += e.prompt_tokens
            row["completion_tokens"] += e.completion_tokens
            row["total_tokens"] += e.total_tokens
        return out

    def total_cost(self, prices: dict[str, tuple[Decimal, Decimal]]) -> Decimal:
        return sum((entry_cost(e, prices) for e in self.entries), Decimal(0))

    def save(self, path: str | Path) -> None:
        payload = {"entries": [e.summary_dict() for e in self.entries]}
        Path(path).write_text(
            json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )

    @classmethod
    def load(cls, path: str | Path) -> "CostLedger":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        entries = [
            ModelCall(
                role=row.get("role", ""),
                stage=row["stage"],
                model_name=row["model_name"],
                response="",
                prompt_tokens=int(row["prompt_tokens"]),
                completion_tokens=int(row["completion_tokens"]),
                fingerprint=row.get("fingerprint", ""),
            )
            for row in payload["entries"]
        ]
        return cls(entries)


@dataclass
class GroupStat:
    prompt_tokens: int = 0
    completion_tokens: int = 0
    cost: Decimal = Decimal(0)

    @property
    def total_tokens(self) -> int:
        return self.prompt_tokens + self.completion_tokens


@dataclass
class Savings:
    """Absolute and relative savings of a run versus its baseline."""

    tokens_abs: int
    tokens_rel: float | None
    cost_abs: Decimal
    cost_rel: float | None


@dataclass
class CostReport:
    label: str
    groups: dict[str, GroupStat]
    total_tokens: int
    total_cost: Decimal
    group_by: str = "stage"
    baseline_label: str | None = None
    baseline_groups: dict[str, GroupStat] = field(default_factory=dict)
    baseline_total_tokens: int = 0
    baseline_total_cost: Decimal = Decimal(0)
    savings_by_group: dict[str, Savings] = field(default_factory=dict)
    savings_total: Savings | None = None

    def to_json_dict(self) -> dict:
        def stat(s: GroupStat) -> dict:
            return {
                "prompt_tokens": s.prompt_tokens,
                "completion_tokens": s.completion_tokens,
                "total_tokens": s.total_tokens,
                "cost": float(s.cost),
            }

        out = {
            "label": self.label,
            "group_by": self.group_by,
            "groups": {k: stat(v) for k, v in sorted(self.groups.items())},
            "total_tokens": self.total_tokens,
            "total_cost": float(self.total_cost),
        }
        if self.baseline_label is not None:
            out["baseline"] = {
                "label": self.baseline_label,
                "groups": {k: stat(v) for k, v in sorted(self.baseline_groups.items())},
                "total_tokens": self.baseline_total_tokens,
                "total_cost": float(self.baseline_total_cost),
            }
            out["savings"] = {
                key: {
                    "tokens_abs": s.tokens_abs,
                    "tokens_rel": s.tokens_rel,
                    "cost_abs": float(s.cost_abs),
                    "cost_rel": s.cost_rel,
                }
                for key, s in sorted(self.savings_by_group.items())
            }
            if self.savings_total is not None:
                out["savings"]["total"] = {
                    "tokens_abs": self.savings_total.tokens_abs,
                    "tokens_rel": self.savings_total.tokens_rel,
                    "cost_abs": float(self.savings_total.cost_abs),
                    "cost_rel": self.savings_total.cost_rel,
                }
        return out


def _group(ledger: CostLedger, prices, group_by: str) -> dict[str, GroupStat]:
    groups: dict[str, GroupStat] = {}
    for e in ledger.entries:
        key = e.stage if group_by == "stage" else e.model_name
        stat = groups.setdefault(key, GroupStat())
        stat.prompt_tokens += e.prompt_tokens
        stat.completion_tokens += e.completion_tokens
        stat.cost += entry_cost(e, prices)
    return groups


def _rel(saved_tokens: int, baseline: int) -> float | None:
    return None if baseline == 0 else saved_tokens / baseline


def _rel_cost(saved: Decimal, baseline: Decimal) -> float | None:
    return None if baseline == 0 else float(saved / baseline)


def ledger_report(
    ledger: CostLedger,
    prices: dict[str, tuple[Decimal, Decimal]],
    *,
    group_by: str = "stage",
    baseline: CostLedger | None = None,
    label: str = "run",
    baseline_label: str = "baseline",
) -> CostReport:
    """Group a ledger, price it, and compare it against an optional baseline.

    Relative savings are (baseline_total - this_total) / baseline_total and
    are reported as absent (None) when the baseline quantity is zero.
    """
    if group_by not in ("stage", "model"):
        raise ValueError(f"group_by must be 'stage' or 'model', got {group_by!r}")
    groups = _group(ledger, prices, group_by)
    report = CostReport(
        label=label,
        groups=groups,
        total_tokens=sum(s.total_tokens for s in groups.values()),
        total_cost=sum((s.cost for s in groups.values()), Decimal(0)),
        group_by=group_by,
    )
    if baseline is None:
        return report

    base_groups = _group(baseline, prices, group_by)
    report.baseline_label = baseline_label
    report.baseline_groups = base_groups
    report.baseline_total_tokens = sum(s.total_tokens for s in base_groups.values())
    report.baseline_total_cost = sum(
        (s.cost for s in base_groups.values()), Decimal(0)
    )
    for key in sorted(set(groups) | set(base_groups)):
        run = groups.get(key, GroupStat())
        base = base_groups.get(key, GroupStat())
        report.savings_by_group[key] = Savings(
            tokens_abs=base.total_tokens - run.total_tokens,
            tokens_rel=_rel(base.total_tokens - run.total_tokens, base.total_tokens),
            cost_abs=base.cost - run.cost,
            cost_rel=_rel_cost(base.cost - run.cost, base.cost),
        )
    report.savings_total = Savings(
        tokens_abs=report.baseline_total_tokens - report.total_tokens,
        tokens_rel=_rel(
            report.baseline_total_tokens - report.total_tokens,
            report.baseline_total_tokens,
        ),
        cost_abs=report.baseline_total_cost - report.total_cost,
        cost_rel=_rel_cost(
            report.baseline_total_cost - report.total_cost, report.baseline_total_cost
        ),
    )
    return report
