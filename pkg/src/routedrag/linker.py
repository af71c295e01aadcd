"""Hybrid retrieval: vector hits, graph expansion, hyperedge closure.

Three modes with strictly growing reach over the same corpus and query:

* vector_local: the chunk-stream Top-K only (chunks and asset texts).
* graph: vector_local plus Top-K entity/relation hits, expanded one hop
  along relations, with provenance chunks of the expanded entities appended.
* hypergraph: graph plus, for every hit entity, all hyperedges containing
  it; each hyperedge pulls its full member set and its source chunk.

Hypergraph assembly replays the graph assembly verbatim before adding the
closure, so the retrieved record-id sets are subsets by construction. Asset
references pulled into a context always bring adjacent same-page text along
(the bounding-box/page bridge back into the source layout).
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

from .config import PipelineSettings
from .corpus import CorpusStore, entity_record_id, relation_record_id
from .errors import ConfigError
from .gateway import ModelGateway
from .ingest import ContentBlock
from .kb import KnowledgeGraph
from .ledger import CostLedger
from .tokens import count_tokens
from .vindex import VectorIndex

MODES = ("vector_local", "graph", "hypergraph")


@dataclass(frozen=True)
class ChunkExcerpt:
    chunk_id: str
    doc_id: str
    text: str
    score: float

    def to_json_dict(self) -> dict:
        return dict(vars(self))


@dataclass(frozen=True)
class AssetRef:
    storage_path: str
    caption: str
    page: int
    doc_id: str
    block_id: str

    def to_json_dict(self) -> dict:
        return dict(vars(self))


@dataclass
class RetrievalContext:
    query: str
    mode: str
    chunks: list[ChunkExcerpt] = field(default_factory=list)
    entity_facts: list[str] = field(default_factory=list)
    asset_refs: list[AssetRef] = field(default_factory=list)
    neighbor_context: list[str] = field(default_factory=list)
    record_ids: frozenset[str] = frozenset()
    token_budget_used: int = 0
    rerank_degraded: bool = False

    def to_json_dict(self) -> dict:
        return {
            "query": self.query,
            "mode": self.mode,
            "chunks": [c.to_json_dict() for c in self.chunks],
            "entity_facts": list(self.entity_facts),
            "asset_refs": [a.to_json_dict() for a in self.asset_refs],
            "neighbor_context": list(self.neighbor_context),
            "record_ids": sorted(self.record_ids),
            "token_budget_used": self.token_budget_used,
            "rerank_degraded": self.rerank_degraded,
        }

    @classmethod
    def from_json_dict(cls, row: dict) -> "RetrievalContext":
        return cls(
            query=row["query"],
            mode=row["mode"],
            chunks=[ChunkExcerpt(**c) for c in row["chunks"]],
            entity_facts=list(row["entity_facts"]),
            asset_refs=[AssetRef(**a) for a in row["asset_refs"]],
            neighbor_context=list(row["neighbor_context"]),
            record_ids=frozenset(row["record_ids"]),
            token_budget_used=row["token_budget_used"],
            rerank_degraded=row["rerank_degraded"],
        )


def _render_entity_fact(graph: KnowledgeGraph, name: str) -> str:
    ent = graph.entities[name]
    label = f"{ent.name} ({ent.entity_type})" if ent.entity_type else ent.name
    first = ent.descriptions[0] if ent.descriptions else ""
    return f"{label}: {first}" if first else label


def _render_relation_fact(rel) -> str:
    base = f"{rel.head} {rel.predicate} {rel.tail}"
    first = rel.descriptions[0] if rel.descriptions else ""
    return f"{base}: {first}" if first else base


class DataLinker:
    """Assembles retrieval contexts from the index, graph, and source layout."""

    def __init__(
        self,
        graph: KnowledgeGraph,
        index: VectorIndex,
        store: CorpusStore,
        gateway: ModelGateway,
        settings: PipelineSettings | None = None,
    ):
        self.graph = graph
        self.index = index
        self.store = store
        self.gateway = gateway
        self.settings = settings or PipelineSettings()

    # -- retrieval ----------------------------------------------------------

    def retrieve(
        self,
        query: str,
        mode: str,
        k_entities: int | None = None,
        k_chunks: int | None = None,
        *,
        doc_id: str | None = None,
        ledger: CostLedger | None = None,
    ) -> RetrievalContext:
        if mode not in MODES:
            raise ConfigError(f"unknown retrieval mode {mode!r}")
        k_e = k_entities or self.settings.k_entities
        k_c = k_chunks or self.settings.k_chunks
        if len(self.index) == 0:
            return RetrievalContext(query=query, mode=mode)

        ctx = RetrievalContext(query=query, mode=mode)
        record_ids: set[str] = set()
        seen_chunks: set[str] = set()
        seen_assets: set[str] = set()
        token_load = 0

        stream_hits, degraded = self.index.search_then_rerank(
            query,
            k_c,
            k_c,
            self.gateway,
            kinds=("chunk", "asset_text"),
            doc_id=doc_id,
            ledger=ledger,
        )
        ctx.rerank_degraded = degraded
        for rid, score in stream_hits.hits:
            rec = self.index.get(rid)
            record_ids.add(rid)
            if rec.kind == "chunk":
                if rec.record_id in seen_chunks:
                    continue
                seen_chunks.add(rec.record_id)
                ctx.chunks.append(
                    ChunkExcerpt(
                        chunk_id=rec.record_id,
                        doc_id=rec.attrs["doc_id"],
                        text=rec.payload_text,
                        score=score,
                    )
                )
                token_load += count_tokens(rec.payload_text)
            else:
                self._collect_asset(rec.attrs, ctx, seen_assets)

        if mode in ("graph", "hypergraph"):
            hit_entity_names = self._expand_graph(
                query, ctx, record_ids, seen_chunks, seen_assets, k_e, k_c,
                doc_id, ledger, token_load,
            )
            if mode == "hypergraph":
                self._expand_hyperedges(
                    hit_entity_names, ctx, record_ids, seen_chunks, k_c
                )

        self._bridge_neighbors(ctx)
        ctx.record_ids = frozenset(record_ids)
        return ctx

    def _expand_graph(
        self,
        query: str,
        ctx: RetrievalContext,
        record_ids: set[str],
        seen_chunks: set[str],
        seen_assets: set[str],
        k_e: int,
        k_c: int,
        doc_id: str | None,
        ledger: CostLedger | None,
        token_load: int,
    ) -> list[str]:
        """One-hop expansion; returns hit entity names for hyperedge closure."""
        entity_hits, degraded = self.index.search_then_rerank(
            query,
            k_e,
            k_e,
            self.gateway,
            kinds=("entity", "relation"),
            doc_id=doc_id,
            ledger=ledger,
        )
        ctx.rerank_degraded = ctx.rerank_degraded or degraded
        hit_names: list[str] = []
        expanded: list[str] = []
        seen_facts: set[str] = set()

        def add_fact(line: str) -> None:
            if line not in seen_facts:
                seen_facts.add(line)
                ctx.entity_facts.append(line)

        for rid, _score in entity_hits.hits:
            rec = self.index.get(rid)
            record_ids.add(rid)
            if rec.kind == "entity":
                name = rec.attrs["name"]
                if name not in self.graph.entities:
                    continue
                hit_names.append(name)
                expanded.append(name)
                add_fact(_render_entity_fact(self.graph, name))
                if rec.attrs.get("storage_path"):
                    self._collect_asset(rec.attrs, ctx, seen_assets)
                for rel in self.graph.neighbors(name):
                    add_fact(_render_relation_fact(rel))
                    record_ids.add(relation_record_id(*rel.key))
                    other = rel.tail if rel.head == name else rel.head
                    if other not in expanded:
                        expanded.append(other)
                        record_ids.add(entity_record_id(other))
            else:  # relation record hit
                head, tail = rec.attrs["head"], rec.attrs["tail"]
                rel = self.graph.relations.get((head, rec.attrs["predicate"], tail))
                if rel is not None:
                    add_fact(_render_relation_fact(rel))
                for name in (head, tail):
                    if name in self.graph.entities and name not in expanded:
                        expanded.append(name)
                        record_ids.add(entity_record_id(name))

        self._append_provenance_chunks(
            expanded, ctx, record_ids, seen_chunks, k_c, token_load
        )
        return hit_names

    def _append_provenance_chunks(
        self,
        entity_names: list[str],
        ctx: RetrievalContext,
        record_ids: set[str],
        seen_chunks: set[str],
        k_c: int,
        token_load: int,
    ) -> None:
        budget = self.settings.context_budget
        for name in entity_names:
            ent = self.graph.entities.get(name)
            if ent is None:
                continue
            for _doc, ref in sorted(ent.provenance):
                if len(ctx.chunks) >= k_c:
                    return
                chunk = self.store.get_chunk(ref)
                if chunk is None or chunk.chunk_id in seen_chunks:
                    continue
                cost = count_tokens(chunk.text)
                if token_load + cost > budget:
                    return
                token_load += cost
                seen_chunks.add(chunk.chunk_id)
                record_ids.add(chunk.chunk_id)
                ctx.chunks.append(
                    ChunkExcerpt(
                        chunk_id=chunk.chunk_id,
                        doc_id=chunk.doc_id,
                        text=chunk.text,
                        score=0.0,
                    )
                )

    def _expand_hyperedges(
        self,
        hit_entity_names: list[str],
        ctx: RetrievalContext,
        record_ids: set[str],
        seen_chunks: set[str],
        k_c: int,
    ) -> None:
        seen_edges: set = set()
        budget = self.settings.context_budget
        token_load = sum(count_tokens(c.text) for c in ctx.chunks)
        for name in hit_entity_names:
            for edge in self.graph.hyperedges_with(name):
                if edge.key in seen_edges:
                    continue
                seen_edges.add(edge.key)
                members = sorted(edge.members)
                line = f"co-occurring: {' + '.join(members)} (weight {edge.weight:g})"
                if line not in ctx.entity_facts:
                    ctx.entity_facts.append(line)
                for member in members:
                    record_ids.add(entity_record_id(member))
                    fact = _render_entity_fact(self.graph, member)
                    if fact not in ctx.entity_facts:
                        ctx.entity_facts.append(fact)
                chunk = self.store.get_chunk(edge.source_chunk_id)
                if (
                    chunk is not None
                    and chunk.chunk_id not in seen_chunks
                    and len(ctx.chunks) < k_c
                ):
                    cost = count_tokens(chunk.text)
                    if token_load + cost <= budget:
                        token_load += cost
                        seen_chunks.add(chunk.chunk_id)
                        record_ids.add(chunk.chunk_id)
                        ctx.chunks.append(
                            ChunkExcerpt(
                                chunk_id=chunk.chunk_id,
                                doc_id=chunk.doc_id,
                                text=chunk.text,
                                score=0.0,
                            )
                        )

    def _collect_asset(self, attrs: dict, ctx: RetrievalContext, seen: set) -> None:
        key = (attrs.get("doc_id"), attrs.get("block_id"))
        if not attrs.get("storage_path") or key in seen:
            return
        seen.add(key)
        ctx.asset_refs.append(
            AssetRef(
                storage_path=attrs["storage_path"],
                caption=attrs.get("caption", ""),
                page=int(attrs.get("page", 1)),
                doc_id=attrs["doc_id"],
                block_id=attrs["block_id"],
            )
        )

    def _bridge_neighbors(self, ctx: RetrievalContext) -> None:
        """Every asset reference brings adjacent source text with it."""
        seen: set[str] = set()
        for ref in ctx.asset_refs:
            for text in self.fetch_neighbor_context(
                ref.doc_id, ref.block_id, self.settings.neighbor_radius
            ):
                if text not in seen:
                    seen.add(text)
                    ctx.neighbor_context.append(text)

    # -- neighbor context -----------------------------------------------------

    def fetch_neighbor_context(
        self, doc_id: str, block_id: str, radius: int = 1
    ) -> list[str]:
        """The radius nearest text blocks above and below on the same page.

        When a side has fewer than radius on-page candidates, the deficit is
        filled from adjacent reading-order positions, spilling across pages.
        """
        block = self.store.get_block(doc_id, block_id)
        if radius <= 0:
            return []
        ordered = [
            b for b in self.store.ordered_blocks(doc_id) if b.is_textual
        ]
        center = (block.bbox[1] + block.bbox[3]) / 2.0

        def vdist(other: ContentBlock) -> float:
            return abs((other.bbox[1] + other.bbox[3]) / 2.0 - center)

        same_page = [
            b for b in ordered if b.page == block.page and b.block_id != block.block_id
        ]
        above = sorted(
            (b for b in same_page if (b.bbox[1] + b.bbox[3]) / 2.0 <= center),
            key=vdist,
        )[:radius]
        below = sorted(
            (b for b in same_page if (b.bbox[1] + b.bbox[3]) / 2.0 > center),
            key=vdist,
        )[:radius]

        picked = {b.block_id for b in above + below}
        all_blocks = self.store.ordered_blocks(doc_id)
        position = next(
            (i for i, b in enumerate(all_blocks) if b.block_id == block.block_id), 0
        )
        if len(above) < radius:
            for b in reversed(all_blocks[:position]):
                if len(above) >= radius:
                    break
                if b.is_textual and b.block_id not in picked:
                    picked.add(b.block_id)
                    above.append(b)
        if len(below) < radius:
            for b in all_blocks[position + 1 :]:
                if len(below) >= radius:
                    break
                if b.is_textual and b.block_id not in picked:
                    picked.add(b.block_id)
                    below.append(b)

        chosen_ids = {b.block_id for b in above + below}
        return [b.content for b in all_blocks if b.block_id in chosen_ids]

    # -- packing ----------------------------------------------------------------

    def pack_context(
        self,
        context: RetrievalContext,
        budget_tokens: int,
        counter=count_tokens,
    ) -> RetrievalContext:
        """Admit items in priority order until the counter would exceed budget.

        Priority: reranked chunks, then entity facts, then neighbor context.
        Partial items are never admitted; admission stops at the first item
        that would overflow.
        """
        if budget_tokens <= 0:
            raise ValueError("budget_tokens must be positive")
        used = 0
        kept_chunks: list[ChunkExcerpt] = []
        kept_facts: list[str] = []
        kept_neighbors: list[str] = []

        def admit(items, keep, text_of):
            nonlocal used
            for item in items:
                cost = counter(text_of(item))
                if used + cost > budget_tokens:
                    return False
                used += cost
                keep.append(item)
            return True

        if admit(context.chunks, kept_chunks, lambda c: c.text):
            if admit(context.entity_facts, kept_facts, lambda f: f):
                admit(context.neighbor_context, kept_neighbors, lambda t: t)
        return replace(
            context,
            chunks=kept_chunks,
            entity_facts=kept_facts,
            neighbor_context=kept_neighbors,
            token_budget_used=used,
        )
