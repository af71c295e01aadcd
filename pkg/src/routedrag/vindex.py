"""Dense embedding store with exact Top-K cosine retrieval.

Search is an exhaustive scan over unit-normalized float64 vectors; corpora at
this scale are small and exactness is what the replay tests need. Ties break
by record id ascending so results are fully deterministic. Writers swap in a
fresh snapshot atomically, so searches running during an index batch see the
pre-batch state.
"""
from __future__ import annotations

import json
import struct
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionError
from .gateway import ModelGateway, RerankResult
from .ledger import CostLedger

_MAGIC = b"RRVIDX01"

KINDS = ("entity", "relation", "chunk", "asset_text")


@dataclass(eq=False)
class EmbeddingRecord:
    """One embedded item with its retrieval attributes.

    attrs carries whatever applies: storage_path, bbox, page, doc_id,
    chunk_id, block_id, caption, name, doc_ids.
    """

    record_id: str
    kind: str
    vector: np.ndarray
    payload_text: str
    attrs: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown record kind {self.kind!r}")


@dataclass(frozen=True)
class TopKResult:
    hits: tuple[tuple[str, float], ...]
    k_requested: int

    @property
    def k_returned(self) -> int:
        return len(self.hits)

    @property
    def record_ids(self) -> tuple[str, ...]:
        return tuple(rid for rid, _ in self.hits)


def unit(vector) -> np.ndarray:
    v = np.asarray(vector, dtype=np.float64)
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        raise ValueError("cannot normalize a zero vector")
    return v / norm


class _Snapshot:
    def __init__(self, records: dict[str, EmbeddingRecord]):
        self.ids = sorted(records)
        self.records = records
        if self.ids:
            self.matrix = np.stack([records[rid].vector for rid in self.ids])
            self.ids_array = np.array(self.ids)
        else:
            self.matrix = np.zeros((0, 0))
            self.ids_array = np.array([], dtype=str)


class VectorIndex:
    def __init__(self, dim: int):
        if dim < 1:
            raise DimensionError(f"dimension must be positive, got {dim}")
        self.dim = dim
        self._records: dict[str, EmbeddingRecord] = {}
        self._lock = threading.Lock()
        self._snapshot = _Snapshot({})

    def __len__(self) -> int:
        return len(self._records)

    def __contains__(self, record_id: str) -> bool:
        return record_id in self._records

    def get(self, record_id: str) -> EmbeddingRecord:
        return self._records[record_id]

    def index(self, records: list[EmbeddingRecord]) -> None:
        """Add records, renormalizing vectors; an existing id is replaced."""
        prepared = []
        for rec in records:
            v = np.asarray(rec.vector, dtype=np.float64)
            if v.shape != (self.dim,):
                raise DimensionError(
                    f"record {rec.record_id!r} has dimension {v.shape[-1] if v.ndim else 0}, "
                    f"index wants {self.dim}"
                )
            prepared.append(
                EmbeddingRecord(
                    record_id=rec.record_id,
                    kind=rec.kind,
                    vector=unit(v),
                    payload_text=rec.payload_text,
                    attrs=dict(rec.attrs),
                )
            )
        with self._lock:
            for rec in prepared:
                self._records[rec.record_id] = rec
            self._snapshot = _Snapshot(dict(self._records))

    def remove(self, record_ids) -> None:
        with self._lock:
            for rid in record_ids:
                self._records.pop(rid, None)
            self._snapshot = _Snapshot(dict(self._records))

    @staticmethod
    def _doc_match(rec: EmbeddingRecord, doc_id: str) -> bool:
        if rec.attrs.get("doc_id") == doc_id:
            return True
        return doc_id in rec.attrs.get("doc_ids", ())

    def search(
        self,
        query_vector,
        k: int,
        *,
        kinds=None,
        doc_id: str | None = None,
    ) -> TopKResult:
        """Exact cosine Top-K over records passing the filters."""
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        q = np.asarray(query_vector, dtype=np.float64)
        if q.shape != (self.dim,):
            raise DimensionError(f"query has dimension {q.shape}, index wants {self.dim}")
        snap = self._snapshot
        if not snap.ids:
            return TopKResult(hits=(), k_requested=k)

        mask = np.ones(len(snap.ids), dtype=bool)
        if kinds is not None:
            allowed = set(kinds)
            mask &= np.array([snap.records[rid].kind in allowed for rid in snap.ids])
        if doc_id is not None:
            mask &= np.array(
                [self._doc_match(snap.records[rid], doc_id) for rid in snap.ids]
            )
        if not mask.any():
            return TopKResult(hits=(), k_requested=k)

        scores = snap.matrix[mask] @ unit(q)
        ids = snap.ids_array[mask]
        order = np.lexsort((ids, -scores))[:k]
        hits = tuple((str(ids[i]), float(scores[i])) for i in order)
        return TopKResult(hits=hits, k_requested=k)

    def search_then_rerank(
        self,
        query_text: str,
        k_recall: int,
        k_final: int,
        gateway: ModelGateway,
        *,
        kinds=None,
        doc_id: str | None = None,
        stage: str = "embedding",
        ledger: CostLedger | None = None,
    ) -> tuple[TopKResult, bool]:
        """Embed the query, recall k_recall, rerank payloads, cut to k_final.

        Returns (result, degraded); on reranker degradation the cosine order
        is kept.
        """
        if k_final > k_recall:
            raise ValueError("k_final must not exceed k_recall")
        query_vec = gateway.embed([query_text], stage=stage, ledger=ledger)[0]
        recalled = self.search(query_vec, k_recall, kinds=kinds, doc_id=doc_id)
        if not recalled.hits:
            return recalled, False
        payloads = [self._records[rid].payload_text for rid, _ in recalled.hits]
        result: RerankResult = gateway.rerank(
            query_text, payloads, stage=stage, ledger=ledger
        )
        if result.degraded:
            return (
                TopKResult(hits=recalled.hits[:k_final], k_requested=k_final),
                True,
            )
        reordered = tuple(
            (recalled.hits[idx][0], score) for idx, score in result.ranking
        )[:k_final]
        return TopKResult(hits=reordered, k_requested=k_final), False

    # -- persistence -------------------------------------------------------

    def save(self, base_path: str | Path) -> None:
        """Write packed vectors plus a JSON attribute sidecar."""
        base = Path(base_path)
        base.parent.mkdir(parents=True, exist_ok=True)
        snap = self._snapshot
        with open(base.with_suffix(".vec"), "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<II", self.dim, len(snap.ids)))
            if snap.ids:
                fh.write(np.ascontiguousarray(snap.matrix, dtype="<f8").tobytes())
        sidecar = {
            "dim": self.dim,
            "records": [
                {
                    "record_id": rid,
                    "kind": snap.records[rid].kind,
                    "payload_text": snap.records[rid].payload_text,
                    "attrs": snap.records[rid].attrs,
                }
                for rid in snap.ids
            ],
        }
        base.with_suffix(".attrs.json").write_text(
            json.dumps(sidecar, sort_keys=True, ensure_ascii=False) + "\n",
            encoding="utf-8",
        )

    @classmethod
    def load(cls, base_path: str | Path) -> "VectorIndex":
        base = Path(base_path)
        raw = base.with_suffix(".vec").read_bytes()
        if raw[: len(_MAGIC)] != _MAGIC:
            raise ValueError(f"not a vector index file: {base.with_suffix('.vec')}")
        dim, count = struct.unpack_from("<II", raw, len(_MAGIC))
        offset = len(_MAGIC) + 8
        matrix = np.frombuffer(raw, dtype="<f8", offset=offset).reshape(count, dim)
        sidecar = json.loads(base.with_suffix(".attrs.json").read_text(encoding="utf-8"))
        if sidecar["dim"] != dim:
            raise ValueError("sidecar dimension disagrees with vector file")
        index = cls(dim)
        index.index(
            [
                EmbeddingRecord(
                    record_id=row["record_id"],
                    kind=row["kind"],
                    vector=matrix[i],
                    payload_text=row["payload_text"],
                    attrs=row["attrs"],
                )
                for i, row in enumerate(sidecar["records"])
            ]
        )
        return index
