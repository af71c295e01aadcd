"""Complexity-routed multimodal document QA.

Layout-parsed documents are ingested into a hybrid graph/vector knowledge
base; each query is routed by difficulty to a retrieval path (plain vector,
one-hop graph, or hyperedge closure); visual evidence is textualized by a
small vision model before a text-only model synthesizes the answer.
"""

from .config import AppConfig, ModelEndpoint, PipelineSettings, load_config
from .corpus import CorpusStore, ingest_document
from .engine import Answer, AnswerEngine, UnifiedContext, VisualDescription
from .evalharness import BenchmarkItem, EvalReport, evaluate, load_benchmark
from .gateway import FixtureCassette, ModelGateway, Prompt
from .ingest import AssetRepository, Chunk, ContentBlock, chunk_stream, parse_layout, serialize_text
from .kb import Entity, Hyperedge, KnowledgeBaseBuilder, KnowledgeGraph, Relation
from .ledger import CostLedger, CostReport, ModelCall, ledger_report
from .linker import AssetRef, DataLinker, RetrievalContext
from .router import Complexity, QueryFeatures, QueryRouter, RoutingDecision, classify
from .vindex import EmbeddingRecord, TopKResult, VectorIndex

__version__ = "0.1.0"

__all__ = [
    "AppConfig",
    "Answer",
    "AnswerEngine",
    "AssetRef",
    "AssetRepository",
    "BenchmarkItem",
    "Chunk",
    "Complexity",
    "ContentBlock",
    "CorpusStore",
    "CostLedger",
    "CostReport",
    "DataLinker",
    "EmbeddingRecord",
    "Entity",
    "EvalReport",
    "FixtureCassette",
    "Hyperedge",
    "KnowledgeBaseBuilder",
    "KnowledgeGraph",
    "ModelCall",
    "ModelEndpoint",
    "ModelGateway",
    "PipelineSettings",
    "Prompt",
    "QueryFeatures",
    "QueryRouter",
    "Relation",
    "RetrievalContext",
    "RoutingDecision",
    "TopKResult",
    "UnifiedContext",
    "VectorIndex",
    "VisualDescription",
    "chunk_stream",
    "classify",
    "evaluate",
    "ingest_document",
    "ledger_report",
    "load_benchmark",
    "load_config",
    "parse_layout",
    "serialize_text",
]
