"""Benchmark evaluation: adapters, judges, accuracy and abstention scoring.

Benchmark items live in a JSON-lines format; adapters map external dataset
layouts into it and validate their tag vocabularies. Items whose gold answer
is the UNANSWERABLE marker are scored correct exactly when the engine
abstains; a substantive answer to such an item is incorrect, and an
abstention on an answerable item is incorrect, which is what the abstention
precision/recall figures measure.
"""
from __future__ import annotations

import json
import re
import string
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from . import prompts
from .errors import SchemaError
from .gateway import ModelGateway, Prompt

UNANSWERABLE = "UNANSWERABLE"

JUDGES = ("exact", "normalized", "model")


@dataclass(frozen=True)
class BenchmarkItem:
    item_id: str
    doc_id: str
    question: str
    gold_answer: str
    tags: dict = field(default_factory=dict)

    @property
    def unanswerable(self) -> bool:
        return self.gold_answer == UNANSWERABLE


def load_benchmark(path: str | Path) -> list[BenchmarkItem]:
    """Generic adapter: one JSON object per line with the item fields."""
    items = []
    for i, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines()):
        if not line.strip():
            continue
        row = json.loads(line)
        try:
            items.append(
                BenchmarkItem(
                    item_id=str(row.get("item_id", f"item-{i:04d}")),
                    doc_id=str(row["doc_id"]),
                    question=str(row["question"]),
                    gold_answer=str(row["gold_answer"]),
                    tags={str(k): str(v) for k, v in row.get("tags", {}).items()},
                )
            )
        except KeyError as exc:
            raise SchemaError(f"benchmark line {i}: missing field {exc}") from exc
    return items


DOCBENCH_TAGS = {
    "domain": {"academia", "finance", "government", "law", "news"},
    "type": {"text_only", "multimodal", "unanswerable"},
}

MMLONGBENCH_TAGS = {
    "location": {"single_page", "multi_page", "unanswerable"},
    "format": {"chart_table", "text", "layout", "figure"},
}


def _validated(tags: dict, vocab: dict, line: int) -> dict:
    for dim, value in tags.items():
        if dim not in vocab:
            raise SchemaError(f"line {line}: unknown tag dimension {dim!r}")
        if value not in vocab[dim]:
            raise SchemaError(f"line {line}: unknown {dim} tag {value!r}")
    return tags


def adapt_docbench(path: str | Path) -> list[BenchmarkItem]:
    """Map a DocBench-style file (question/answer/domain/type) to items."""
    items = []
    for i, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines()):
        if not line.strip():
            continue
        row = json.loads(line)
        gold = row.get("answer", "")
        if str(row.get("type", "")).casefold() == "unanswerable" or not gold:
            gold = UNANSWERABLE
        tags = {
            k: str(row[k]).casefold() for k in ("domain", "type") if row.get(k)
        }
        items.append(
            BenchmarkItem(
                item_id=str(row.get("id", f"docbench-{i:04d}")),
                doc_id=str(row["doc_id"]),
                question=str(row["question"]),
                gold_answer=str(gold),
                tags=_validated(tags, DOCBENCH_TAGS, i),
            )
        )
    return items


def adapt_mmlongbench(path: str | Path) -> list[BenchmarkItem]:
    """Map an MMLongBench-style file (question/answer/location/format)."""
    items = []
    for i, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines()):
        if not line.strip():
            continue
        row = json.loads(line)
        gold = row.get("answer", "")
        if str(gold).casefold() in ("", "not answerable", "unanswerable"):
            gold = UNANSWERABLE
        tags = {
            k: str(row[k]).casefold() for k in ("location", "format") if row.get(k)
        }
        items.append(
            BenchmarkItem(
                item_id=str(row.get("id", f"mmlb-{i:04d}")),
                doc_id=str(row["doc_id"]),
                question=str(row["question"]),
                gold_answer=str(gold),
                tags=_validated(tags, MMLONGBENCH_TAGS, i),
            )
        )
    return items


# -- judges --------------------------------------------------------------------

_PUNCT_TABLE = str.maketrans("", "", string.punctuation)
_NUMBER = re.compile(r"^-?\d+(?:\.\d+)?$")


def _fold(text: str) -> str:
    return " ".join(text.casefold().translate(_PUNCT_TABLE).split())


def judge_exact(answer: str, gold: str) -> bool:
    return answer.strip() == gold.strip()


def judge_normalized(answer: str, gold: str) -> bool:
    """Case/punctuation folding plus 1e-6 tolerance on parseable numbers."""
    if judge_exact(answer, gold):
        return True
    a, g = answer.strip(), gold.strip()
    if _NUMBER.match(a) and _NUMBER.match(g):
        return abs(float(a) - float(g)) <= 1e-6
    return _fold(a) == _fold(g)


class ModelJudge:
    """Grades via a separate gateway so judge calls stay out of pipeline costs."""

    def __init__(self, gateway: ModelGateway):
        self.gateway = gateway

    def __call__(self, question: str, answer: str, gold: str) -> bool:
        call = self.gateway.complete(
            "reasoning_llm",
            Prompt(
                system=prompts.MODEL_JUDGE_SYSTEM,
                user=prompts.MODEL_JUDGE_USER.format(
                    question=question, gold=gold, answer=answer
                ),
            ),
            "summary",
        )
        return call.response.strip().upper().startswith("CORRECT")


# -- evaluation ------------------------------------------------------------------


@dataclass
class ItemResult:
    item_id: str
    question: str
    gold_answer: str
    answer: str
    correct: bool
    abstained: bool
    complexity: str
    mode: str
    tags: dict
    missing_doc: bool = False
    tokens_by_stage: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return dict(vars(self))


@dataclass
class EvalReport:
    total: int
    correct: int
    per_tag: dict
    abstention_precision: float | None
    abstention_recall: float | None
    items: list[ItemResult]

    @property
    def overall_accuracy(self) -> float:
        return self.correct / self.total if self.total else 0.0

    def to_json_dict(self) -> dict:
        return {
            "total": self.total,
            "correct": self.correct,
            "overall_accuracy": self.overall_accuracy,
            "per_tag": self.per_tag,
            "abstention_precision": self.abstention_precision,
            "abstention_recall": self.abstention_recall,
            "items": [item.to_json_dict() for item in self.items],
        }

    def render_table(self) -> str:
        lines = [
            f"items: {self.total}  correct: {self.correct}  "
            f"accuracy: {self.overall_accuracy:.2%}"
        ]
        for dim in sorted(self.per_tag):
            lines.append(f"[{dim}]")
            for tag in sorted(self.per_tag[dim]):
                cell = self.per_tag[dim][tag]
                lines.append(
                    f"  {tag:<16} {cell['correct']}/{cell['total']}"
                    f"  ({cell['accuracy']:.2%})"
                )
        if self.abstention_precision is not None:
            lines.append(f"abstention precision: {self.abstention_precision:.2%}")
        if self.abstention_recall is not None:
            lines.append(f"abstention recall: {self.abstention_recall:.2%}")
        return "\n".join(lines)


def score_item(item: BenchmarkItem, answer_text: str, abstained: bool, judge) -> bool:
    if item.unanswerable:
        return abstained
    if abstained:
        return False
    return judge(item.question, answer_text, item.gold_answer) if callable(judge) else False


def evaluate(
    engine,
    items: list[BenchmarkItem],
    judge: str = "normalized",
    *,
    workers: int = 1,
    model_judge: ModelJudge | None = None,
    mode_override: str | None = None,
) -> EvalReport:
    """Answer and score every item; assemble the accuracy report."""
    if judge not in JUDGES:
        raise ValueError(f"judge must be one of {JUDGES}, got {judge!r}")
    if judge == "model":
        if model_judge is None:
            raise ValueError("model judge requested but no ModelJudge provided")
        judge_fn = lambda q, a, g: model_judge(q, a, g)  # noqa: E731
    elif judge == "exact":
        judge_fn = lambda q, a, g: judge_exact(a, g)  # noqa: E731
    else:
        judge_fn = lambda q, a, g: judge_normalized(a, g)  # noqa: E731

    def run_one(item: BenchmarkItem) -> ItemResult:
        if item.doc_id and not engine.store.has_doc(item.doc_id):
            return ItemResult(
                item_id=item.item_id,
                question=item.question,
                gold_answer=item.gold_answer,
                answer="",
                correct=False,
                abstained=False,
                complexity="",
                mode="",
                tags=dict(item.tags),
                missing_doc=True,
            )
        ans = engine.answer(
            item.question,
            doc_id=item.doc_id or None,
            mode_override=mode_override,
        )
        return ItemResult(
            item_id=item.item_id,
            question=item.question,
            gold_answer=item.gold_answer,
            answer=ans.text,
            correct=score_item(item, ans.text, ans.abstained, judge_fn),
            abstained=ans.abstained,
            complexity=ans.complexity,
            mode=ans.mode,
            tags=dict(item.tags),
            tokens_by_stage=ans.tokens_by_stage,
        )

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_one, items))
    else:
        results = [run_one(item) for item in items]

    per_tag: dict = {}
    for item, result in zip(items, results):
        for dim, tag in item.tags.items():
            cell = per_tag.setdefault(dim, {}).setdefault(
                tag, {"correct": 0, "total": 0, "accuracy": 0.0}
            )
            cell["total"] += 1
            cell["correct"] += int(result.correct)
    for dim in per_tag:
        for tag, cell in per_tag[dim].items():
            cell["accuracy"] = cell["correct"] / cell["total"]

    true_pos = sum(1 for i, r in zip(items, results) if r.abstained and i.unanswerable)
    abstained_n = sum(1 for r in results if r.abstained)
    unanswerable_n = sum(1 for i in items if i.unanswerable)
    precision = true_pos / abstained_n if abstained_n else None
    recall = true_pos / unanswerable_n if unanswerable_n else None

    return EvalReport(
        total=len(results),
        correct=sum(r.correct for r in results),
        per_tag=per_tag,
        abstention_precision=precision,
        abstention_recall=recall,
        items=results,
    )
