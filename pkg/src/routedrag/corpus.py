"""Corpus store and build orchestration.

A corpus directory holds the normalized block file, the chunk file, the
graph (entities/relations/hyperedges), the vector index, and a manifest of
per-document stats. Re-ingesting a doc_id removes and replaces only that
document's records, so ingestion is idempotent per document.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import PipelineSettings
from .errors import AssetMissing, BlockNotFound, DescriptionUnavailable, ExtractionEmpty
from .gateway import ModelGateway
from .ingest import (
    AssetRepository,
    Chunk,
    ContentBlock,
    chunk_stream,
    parse_layout,
    read_jsonl,
    serialize_text,
    write_jsonl,
)
from .kb import (
    AugmentedAssetText,
    Entity,
    KnowledgeBaseBuilder,
    KnowledgeGraph,
    build_hyperedges,
)
from .ledger import CostLedger
from .vindex import EmbeddingRecord, VectorIndex

logger = logging.getLogger(__name__)


def entity_record_id(name: str) -> str:
    return f"ent::{name}"


def relation_record_id(head: str, predicate: str, tail: str) -> str:
    return f"rel::{head}|{predicate}|{tail}"


def asset_record_id(doc_id: str, block_id: str) -> str:
    return f"asset::{doc_id}::{block_id}"


def entity_payload(ent: Entity) -> str:
    label = f"{ent.name} ({ent.entity_type})" if ent.entity_type else ent.name
    return f"{label}: {ent.description}" if ent.description else label


def relation_payload(rel) -> str:
    base = f"{rel.head} {rel.predicate} {rel.tail}"
    return f"{base}: {rel.description}" if rel.description else base


@dataclass
class DocumentStats:
    doc_id: str
    pages: int
    blocks: int
    chunks: int
    assets: int
    entities: int
    relations: int
    hyperedges: int
    degraded_assets: int = 0

    def to_json_dict(self) -> dict:
        return dict(vars(self))


class CorpusStore:
    """In-memory view of a corpus directory, loadable and saveable."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.blocks: dict[tuple[str, str], ContentBlock] = {}
        self.block_order: dict[str, list[str]] = {}
        self.chunks: dict[str, Chunk] = {}
        self.doc_chunks: dict[str, list[str]] = {}
        self.asset_roots: dict[str, str] = {}
        self.asset_texts: dict[tuple[str, str], AugmentedAssetText] = {}
        self.pages: dict[str, int] = {}

    # -- lookups ------------------------------------------------------------

    @property
    def doc_ids(self) -> list[str]:
        return sorted(self.block_order)

    def has_doc(self, doc_id: str) -> bool:
        return doc_id in self.block_order

    def get_block(self, doc_id: str, block_id: str) -> ContentBlock:
        try:
            return self.blocks[(doc_id, block_id)]
        except KeyError:
            raise BlockNotFound(f"{doc_id}/{block_id}") from None

    def get_chunk(self, chunk_id: str) -> Chunk | None:
        return self.chunks.get(chunk_id)

    def ordered_blocks(self, doc_id: str) -> list[ContentBlock]:
        return [self.blocks[(doc_id, bid)] for bid in self.block_order.get(doc_id, [])]

    def page_count(self, doc_id: str) -> int:
        return self.pages.get(doc_id, 0)

    def repo_for(self, doc_id: str) -> AssetRepository:
        root = Path(self.asset_roots.get(doc_id, self.root))
        repo = AssetRepository(root=root)
        for block in self.ordered_blocks(doc_id):
            if block.storage_path:
                repo.register(block.storage_path, strict=False)
        return repo

    def resolve_asset(self, doc_id: str, storage_path: str) -> Path:
        root = Path(self.asset_roots.get(doc_id, self.root))
        target = root / storage_path
        if not target.is_file():
            raise AssetMissing(f"asset not found for {doc_id}: {storage_path}")
        return target

    # -- mutation -----------------------------------------------------------

    def add_document(
        self,
        doc_id: str,
        blocks: list[ContentBlock],
        chunks: list[Chunk],
        asset_root: str | Path,
        asset_texts: list[AugmentedAssetText],
    ) -> None:
        self.remove_document(doc_id)
        self.block_order[doc_id] = [b.block_id for b in blocks]
        for block in blocks:
            self.blocks[(doc_id, block.block_id)] = block
        self.doc_chunks[doc_id] = [c.chunk_id for c in chunks]
        for chunk in chunks:
            self.chunks[chunk.chunk_id] = chunk
        self.asset_roots[doc_id] = str(asset_root)
        for at in asset_texts:
            self.asset_texts[(doc_id, at.block_id)] = at
        self.pages[doc_id] = max((b.page for b in blocks), default=0)

    def remove_document(self, doc_id: str) -> None:
        for bid in self.block_order.pop(doc_id, []):
            self.blocks.pop((doc_id, bid), None)
        for cid in self.doc_chunks.pop(doc_id, []):
            self.chunks.pop(cid, None)
        self.asset_roots.pop(doc_id, None)
        self.pages.pop(doc_id, None)
        for key in [k for k in self.asset_texts if k[0] == doc_id]:
            del self.asset_texts[key]

    # -- persistence ----------------------------------------------------------

    def save(self) -> None:
        self.root.mkdir(parents=True, exist_ok=True)
        block_rows = [
            self.blocks[(doc, bid)].to_json_dict()
            for doc in self.doc_ids
            for bid in self.block_order[doc]
        ]
        write_jsonl(self.root / "blocks.jsonl", block_rows)
        chunk_rows = [
            self.chunks[cid].to_json_dict()
            for doc in self.doc_ids
            for cid in self.doc_chunks.get(doc, [])
        ]
        write_jsonl(self.root / "chunks.jsonl", chunk_rows)
        asset_rows = [
            {
                "doc_id": at.doc_id,
                "block_id": at.block_id,
                "caption": at.caption,
                "description": at.description,
                "degraded": at.degraded,
            }
            for key, at in sorted(self.asset_texts.items())
        ]
        write_jsonl(self.root / "asset_texts.jsonl", asset_rows)
        manifest = {
            doc: {
                "pages": self.pages.get(doc, 0),
                "asset_root": self.asset_roots.get(doc, ""),
                "blocks": len(self.block_order.get(doc, [])),
                "chunks": len(self.doc_chunks.get(doc, [])),
            }
            for doc in self.doc_ids
        }
        write_jsonl(
            self.root / "manifest.jsonl",
            [{"doc_id": doc, **info} for doc, info in sorted(manifest.items())],
        )

    @classmethod
    def load(cls, root: str | Path) -> "CorpusStore":
        store = cls(root)
        root = Path(root)
        if not (root / "manifest.jsonl").exists():
            return store
        for row in read_jsonl(root / "manifest.jsonl"):
            store.block_order[row["doc_id"]] = []
            store.doc_chunks[row["doc_id"]] = []
            store.asset_roots[row["doc_id"]] = row["asset_root"]
            store.pages[row["doc_id"]] = row["pages"]
        for row in read_jsonl(root / "blocks.jsonl"):
            block = ContentBlock.from_json_dict(row)
            store.blocks[(block.doc_id, block.block_id)] = block
            store.block_order[block.doc_id].append(block.block_id)
        for row in read_jsonl(root / "chunks.jsonl"):
            chunk = Chunk.from_json_dict(row)
            store.chunks[chunk.chunk_id] = chunk
            store.doc_chunks[chunk.doc_id].append(chunk.chunk_id)
        asset_path = root / "asset_texts.jsonl"
        if asset_path.exists():
            for row in read_jsonl(asset_path):
                at = AugmentedAssetText(
                    doc_id=row["doc_id"],
                    block_id=row["block_id"],
                    caption=row["caption"],
                    description=row["description"],
                    degraded=row["degraded"],
                )
                store.asset_texts[(at.doc_id, at.block_id)] = at
        return store


def _first_asset_provenance(ent: Entity, store: CorpusStore) -> ContentBlock | None:
    for doc_id, ref in sorted(ent.provenance):
        block = store.blocks.get((doc_id, ref))
        if block is not None and block.storage_path:
            return block
    return None


def _entity_index_records(
    names: list[str],
    graph: KnowledgeGraph,
    store: CorpusStore,
    gateway: ModelGateway,
    ledger: CostLedger | None,
) -> list[EmbeddingRecord]:
    names = [n for n in sorted(set(names)) if n in graph.entities]
    if not names:
        return []
    payloads = [entity_payload(graph.entities[n]) for n in names]
    vectors = gateway.embed(payloads, ledger=ledger)
    records = []
    for name, payload, vec in zip(names, payloads, vectors):
        ent = graph.entities[name]
        attrs: dict = {
            "name": name,
            "doc_ids": sorted({doc for doc, _ in ent.provenance}),
        }
        asset_block = _first_asset_provenance(ent, store)
        if asset_block is not None:
            attrs.update(
                storage_path=asset_block.storage_path,
                bbox=list(asset_block.bbox),
                page=asset_block.page,
                block_id=asset_block.block_id,
                doc_id=asset_block.doc_id,
                caption=asset_block.content,
            )
        records.append(
            EmbeddingRecord(
                record_id=entity_record_id(name),
                kind="entity",
                vector=np.asarray(vec),
                payload_text=payload,
                attrs=attrs,
            )
        )
    return records


def ingest_document(
    store: CorpusStore,
    graph: KnowledgeGraph,
    index: VectorIndex,
    gateway: ModelGateway,
    layout,
    asset_root: str | Path,
    doc_id: str,
    settings: PipelineSettings,
    *,
    strict: bool = True,
    ledger: CostLedger | None = None,
) -> DocumentStats:
    """Full per-document build: parse, describe, extract, merge, index."""
    blocks, repo = parse_layout(layout, asset_root, doc_id, strict=strict)
    stream = serialize_text(blocks)
    chunks = chunk_stream(stream, doc_id, settings.window, settings.overlap)
    builder = KnowledgeBaseBuilder(
        gateway, judge_rounds=settings.judge_rounds, ledger=ledger
    )

    # replace semantics: wipe any previous records for this doc first
    if store.has_doc(doc_id):
        _remove_doc_records(store, graph, index, doc_id)

    asset_texts: list[AugmentedAssetText] = []
    degraded = 0
    for block in blocks:
        if not block.storage_path:
            continue
        try:
            asset_texts.append(builder.describe_asset(block, repo))
        except (DescriptionUnavailable, AssetMissing) as exc:
            logger.warning("asset %s indexed by caption alone: %s", block.block_id, exc)
            degraded += 1
            asset_texts.append(
                AugmentedAssetText(
                    doc_id=doc_id,
                    block_id=block.block_id,
                    caption=block.content,
                    description="",
                    degraded=True,
                )
            )

    new_entities: list = []
    new_relations: list = []
    new_hyperedges: list = []
    for chunk in chunks:
        try:
            extraction = builder.extract_validated(chunk.text, (doc_id, chunk.chunk_id))
        except ExtractionEmpty:
            continue
        new_entities.extend(extraction.entities)
        new_relations.extend(extraction.relations)
        new_hyperedges.extend(
            build_hyperedges(
                chunk.chunk_id, doc_id, extraction.entities, extraction.relations
            )
        )
    for at in asset_texts:
        if not at.combined.strip():
            continue
        try:
            extraction = builder.extract_validated(at.combined, (doc_id, at.block_id))
        except ExtractionEmpty:
            continue
        new_entities.extend(extraction.entities)
        new_relations.extend(extraction.relations)

    graph.merge_entities(new_entities)
    graph.add_relations(new_relations)
    graph.add_hyperedges(new_hyperedges)
    store.add_document(doc_id, blocks, chunks, asset_root, asset_texts)

    records: list[EmbeddingRecord] = []
    if chunks:
        vectors = gateway.embed([c.text for c in chunks], ledger=ledger)
        for chunk, vec in zip(chunks, vectors):
            first_block = store.get_block(doc_id, chunk.source_block_ids[0])
            records.append(
                EmbeddingRecord(
                    record_id=chunk.chunk_id,
                    kind="chunk",
                    vector=np.asarray(vec),
                    payload_text=chunk.text,
                    attrs={
                        "doc_id": doc_id,
                        "chunk_id": chunk.chunk_id,
                        "page": first_block.page,
                        "token_span": list(chunk.token_span),
                    },
                )
            )
    indexable_assets = [at for at in asset_texts if at.combined.strip()]
    if indexable_assets:
        vectors = gateway.embed([at.combined for at in indexable_assets], ledger=ledger)
        for at, vec in zip(indexable_assets, vectors):
            block = store.get_block(doc_id, at.block_id)
            records.append(
                EmbeddingRecord(
                    record_id=asset_record_id(doc_id, at.block_id),
                    kind="asset_text",
                    vector=np.asarray(vec),
                    payload_text=at.combined,
                    attrs={
                        "doc_id": doc_id,
                        "block_id": at.block_id,
                        "storage_path": block.storage_path,
                        "bbox": list(block.bbox),
                        "page": block.page,
                        "caption": at.caption,
                        "degraded": at.degraded,
                    },
                )
            )
    touched_entities = sorted({e.name for e in new_entities})
    records.extend(
        _entity_index_records(touched_entities, graph, store, gateway, ledger)
    )
    touched_relations = sorted({r.key for r in new_relations})
    rel_payloads = [
        relation_payload(graph.relations[key])
        for key in touched_relations
        if key in graph.relations
    ]
    if rel_payloads:
        keys = [k for k in touched_relations if k in graph.relations]
        vectors = gateway.embed(rel_payloads, ledger=ledger)
        for key, payload, vec in zip(keys, rel_payloads, vectors):
            rel = graph.relations[key]
            records.append(
                EmbeddingRecord(
                    record_id=relation_record_id(*key),
                    kind="relation",
                    vector=np.asarray(vec),
                    payload_text=payload,
                    attrs={
                        "head": rel.head,
                        "predicate": rel.predicate,
                        "tail": rel.tail,
                        "doc_ids": sorted({doc for doc, _ in rel.provenance}),
                    },
                )
            )
    if records:
        index.index(records)

    return DocumentStats(
        doc_id=doc_id,
        pages=store.page_count(doc_id),
        blocks=len(blocks),
        chunks=len(chunks),
        assets=len(asset_texts),
        entities=len({e.name for e in new_entities}),
        relations=len({r.key for r in new_relations}),
        hyperedges=len(new_hyperedges),
        degraded_assets=degraded,
    )


def _remove_doc_records(
    store: CorpusStore, graph: KnowledgeGraph, index: VectorIndex, doc_id: str
) -> None:
    stale = [cid for cid in store.doc_chunks.get(doc_id, [])]
    stale += [
        asset_record_id(doc_id, at.block_id)
        for (d, _), at in store.asset_texts.items()
        if d == doc_id
    ]
    before = set(graph.entities)
    before_rel = set(graph.relations)
    graph.remove_doc(doc_id)
    stale += [entity_record_id(n) for n in before - set(graph.entities)]
    stale += [relation_record_id(*k) for k in before_rel - set(graph.relations)]
    index.remove(stale)
    store.remove_document(doc_id)
