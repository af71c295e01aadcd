"""Decoupled perception and reasoning.

Visual assets surfaced by retrieval are textualized by the small vision
model, one query-conditioned call per asset; the reasoning model then sees a
single unified context (visual texts, retrieved material, query intent) and
synthesizes the answer under the path-specific instruction, exactly one
synthesis call per query. The reasoning role never receives image bytes and
the perception role never sees the instruction templates, which keeps the
two stages auditable in the gateway request log.

Every instruction carries an abstention clause; an answer matching the
declared insufficiency phrase is machine-detected as an abstention.
"""
from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from . import prompts
from .config import PipelineSettings
from .corpus import CorpusStore
from .errors import AssetMissing, GatewayError
from .gateway import ModelGateway, Prompt
from .ledger import CostLedger
from .linker import AssetRef, DataLinker, RetrievalContext
from .router import (
    QueryRouter,
    RoutingDecision,
    append_decision_log,
    decision_log_line,
    forced_decision,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class VisualDescription:
    """Textualized visual evidence for one asset."""

    text: str
    storage_path: str
    page: int
    caption: str
    prompt_used: str
    degraded: bool = False

    def to_json_dict(self) -> dict:
        return dict(vars(self))


@dataclass
class UnifiedContext:
    """Everything the reasoning model sees: visual texts, retrieval, intent."""

    visual_texts: list[VisualDescription]
    retrieved: RetrievalContext
    intent: str
    instruction_key: str

    def to_json_dict(self) -> dict:
        return {
            "visual_texts": [v.to_json_dict() for v in self.visual_texts],
            "retrieved": self.retrieved.to_json_dict(),
            "intent": self.intent,
            "instruction_key": self.instruction_key,
        }

    @classmethod
    def from_json_dict(cls, row: dict) -> "UnifiedContext":
        return cls(
            visual_texts=[VisualDescription(**v) for v in row["visual_texts"]],
            retrieved=RetrievalContext.from_json_dict(row["retrieved"]),
            intent=row["intent"],
            instruction_key=row["instruction_key"],
        )


@dataclass
class Answer:
    query: str
    text: str
    complexity: str
    abstained: bool
    citations: list[tuple[str, int, str]]
    tokens_by_stage: dict[str, dict[str, int]]
    mode: str = ""
    forced: bool = False
    sub_queries: tuple[str, ...] = ()
    ledger_slice: CostLedger = field(default_factory=CostLedger)

    def record(self) -> dict:
        """The answer record wire format."""
        return {
            "query": self.query,
            "answer": self.text,
            "complexity": self.complexity,
            "abstained": self.abstained,
            "citations": [list(c) for c in self.citations],
            "tokens_by_stage": self.tokens_by_stage,
        }


def build_instruction(instruction_key: str) -> str:
    """Verbatim path-specific template plus the abstention clause."""
    template = prompts.INSTRUCTION_TEMPLATES[instruction_key]
    return f"{template}\n{prompts.ABSTAIN_CLAUSE}"


def detect_abstention(response: str) -> bool:
    stripped = response.strip()
    if stripped == prompts.ABSTAIN_PHRASE:
        return True
    first_line = stripped.splitlines()[0].strip() if stripped else ""
    return first_line == prompts.ABSTAIN_PHRASE


def render_context(context: UnifiedContext) -> str:
    """Deterministic rendering: intent, visual texts, facts, chunks, neighbors."""
    lines = [f"Query intent: {context.intent}"]
    for vd in context.visual_texts:
        caption = vd.caption or "no caption"
        lines.append(f"[Visual evidence | page {vd.page} | {caption}]")
        lines.append(vd.text if vd.text else caption)
    if context.retrieved.entity_facts:
        lines.append("Known facts:")
        lines.extend(f"- {fact}" for fact in context.retrieved.entity_facts)
    if context.retrieved.chunks:
        lines.append("Passages:")
        for chunk in context.retrieved.chunks:
            lines.append(f"[{chunk.doc_id} {chunk.chunk_id}]")
            lines.append(chunk.text)
    if context.retrieved.neighbor_context:
        lines.append("Adjacent context:")
        lines.extend(context.retrieved.neighbor_context)
    return "\n".join(lines)


def merge_contexts(
    query: str, mode: str, contexts: list[RetrievalContext]
) -> RetrievalContext:
    """Concatenate per-sub-query contexts with ordered deduplication."""
    merged = RetrievalContext(query=query, mode=mode)
    seen_chunks: set[str] = set()
    seen_facts: set[str] = set()
    seen_assets: set[tuple[str, str]] = set()
    seen_neighbors: set[str] = set()
    record_ids: set[str] = set()
    for ctx in contexts:
        record_ids |= ctx.record_ids
        merged.rerank_degraded = merged.rerank_degraded or ctx.rerank_degraded
        for chunk in ctx.chunks:
            if chunk.chunk_id not in seen_chunks:
                seen_chunks.add(chunk.chunk_id)
                merged.chunks.append(chunk)
        for fact in ctx.entity_facts:
            if fact not in seen_facts:
                seen_facts.add(fact)
                merged.entity_facts.append(fact)
        for ref in ctx.asset_refs:
            key = (ref.doc_id, ref.block_id)
            if key not in seen_assets:
                seen_assets.add(key)
                merged.asset_refs.append(ref)
        for text in ctx.neighbor_context:
            if text not in seen_neighbors:
                seen_neighbors.add(text)
                merged.neighbor_context.append(text)
    merged.record_ids = frozenset(record_ids)
    return merged


class AnswerEngine:
    """End-to-end composition: route, retrieve, perceive, pack, reason."""

    def __init__(
        self,
        gateway: ModelGateway,
        linker: DataLinker,
        router: QueryRouter,
        store: CorpusStore,
        settings: PipelineSettings | None = None,
        *,
        decision_log_path: str | Path | None = None,
    ):
        self.gateway = gateway
        self.linker = linker
        self.router = router
        self.store = store
        self.settings = settings or PipelineSettings()
        self.decision_log_path = decision_log_path

    # -- perception ---------------------------------------------------------

    def _perceive_one(
        self, ref: AssetRef, query: str, ledger: CostLedger | None
    ) -> VisualDescription:
        user = prompts.PERCEPTION_USER.format(
            query=query, caption=ref.caption or "none"
        )
        try:
            path = self.store.resolve_asset(ref.doc_id, ref.storage_path)
            call = self.gateway.complete(
                "perception_vlm",
                Prompt(
                    system=prompts.ASSET_DESCRIPTION_SYSTEM,
                    user=user,
                    images=(str(path),),
                ),
                "image_description",
                ledger=ledger,
            )
            return VisualDescription(
                text=call.response,
                storage_path=ref.storage_path,
                page=ref.page,
                caption=ref.caption,
                prompt_used=user,
            )
        except (AssetMissing, GatewayError) as exc:
            logger.warning("perception degraded for %s: %s", ref.storage_path, exc)
            return VisualDescription(
                text="",
                storage_path=ref.storage_path,
                page=ref.page,
                caption=ref.caption,
                prompt_used=user,
                degraded=True,
            )

    def perceive(
        self,
        asset_refs: list[AssetRef],
        query: str,
        *,
        ledger: CostLedger | None = None,
    ) -> list[VisualDescription]:
        """One query-conditioned description per asset, in asset order."""
        if not asset_refs:
            return []
        workers = max(1, self.settings.perception_workers)
        if workers == 1 or len(asset_refs) == 1:
            return [self._perceive_one(ref, query, ledger) for ref in asset_refs]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(
                pool.map(lambda ref: self._perceive_one(ref, query, ledger), asset_refs)
            )

    # -- reasoning ----------------------------------------------------------

    def reason(
        self,
        context: UnifiedContext,
        query: str,
        *,
        ledger: CostLedger | None = None,
    ) -> tuple[str, bool]:
        """The single synthesis call; returns (answer_text, abstained)."""
        call = self.gateway.complete(
            "reasoning_llm",
            Prompt(
                system=build_instruction(context.instruction_key),
                user=prompts.REASON_USER_TEMPLATE.format(
                    context=render_context(context), query=query
                ),
            ),
            "summary",
            ledger=ledger,
        )
        return call.response, detect_abstention(call.response)

    # -- composition ----------------------------------------------------------

    def answer(
        self,
        query: str,
        *,
        doc_id: str | None = None,
        mode_override: str | None = None,
        debug_dir: str | Path | None = None,
    ) -> Answer:
        query_ledger = CostLedger()
        if mode_override is not None:
            decision = forced_decision(mode_override)
        else:
            decision = self.router.route(query, ledger=query_ledger)
        self._log_decision(decision, query, doc_id)

        queries = list(decision.sub_queries) or [query]
        contexts = [
            self.linker.retrieve(
                q,
                decision.retrieval_mode,
                doc_id=doc_id,
                ledger=query_ledger,
            )
            for q in queries
        ]
        merged = merge_contexts(query, decision.retrieval_mode, contexts)
        packed = self.linker.pack_context(merged, self.settings.context_budget)
        visuals = self.perceive(packed.asset_refs, query, ledger=query_ledger)
        context = UnifiedContext(
            visual_texts=visuals,
            retrieved=packed,
            intent=decision.features.intent,
            instruction_key=decision.instruction_key,
        )
        if debug_dir is not None:
            self._dump_context(debug_dir, query, context)
        text, abstained = self.reason(context, query, ledger=query_ledger)

        tokens_by_stage = {
            stage: dict(stats)
            for stage, stats in sorted(query_ledger.tokens_by_stage().items())
        }
        return Answer(
            query=query,
            text=text,
            complexity=decision.complexity.value,
            abstained=abstained,
            citations=self._citations(context),
            tokens_by_stage=tokens_by_stage,
            mode=decision.retrieval_mode,
            forced=decision.forced,
            sub_queries=decision.sub_queries,
            ledger_slice=query_ledger,
        )

    # -- helpers ----------------------------------------------------------------

    def _log_decision(
        self, decision: RoutingDecision, query: str, doc_id: str | None
    ) -> None:
        if self.decision_log_path is None:
            return
        pages = self.store.page_count(doc_id) if doc_id else 0
        append_decision_log(
            self.decision_log_path, decision_log_line(decision, query, pages)
        )

    def _citations(self, context: UnifiedContext) -> list[tuple[str, int, str]]:
        """Provenance triples (doc, page, block) for the packed context."""
        seen: set[tuple[str, int, str]] = set()
        out: list[tuple[str, int, str]] = []

        def add(doc: str, page: int, block: str) -> None:
            key = (doc, page, block)
            if key not in seen:
                seen.add(key)
                out.append(key)

        for chunk in context.retrieved.chunks:
            stored = self.store.get_chunk(chunk.chunk_id)
            if stored is None or not stored.source_block_ids:
                continue
            first = stored.source_block_ids[0]
            block = self.store.blocks.get((chunk.doc_id, first))
            if block is not None:
                add(chunk.doc_id, block.page, first)
        for ref in context.retrieved.asset_refs:
            add(ref.doc_id, ref.page, ref.block_id)
        return out

    @staticmethod
    def _dump_context(
        debug_dir: str | Path, query: str, context: UnifiedContext
    ) -> Path:
        debug_dir = Path(debug_dir)
        debug_dir.mkdir(parents=True, exist_ok=True)
        name = hashlib.sha256(query.encode("utf-8")).hexdigest()[:16]
        path = debug_dir / f"context-{name}.json"
        path.write_text(
            json.dumps(context.to_json_dict(), indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )
        return path
