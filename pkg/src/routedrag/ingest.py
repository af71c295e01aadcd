"""Layout JSON ingestion: content blocks, token streams, sliding-window chunks.

Input is a content-list JSON array in the style emitted by layout parsers:
each object carries type, text or caption, bbox, page_idx, and (for assets)
img_path. Blocks keep the full metadata tuple (type, content, bbox, page,
storage path) and are ordered for reading: page ascending, then top-to-bottom
by bbox y0, ties broken by x0.

The textual stream holds text blocks plus equations without a storage path;
images, tables, and stored equations travel the multimodal stream and never
contribute tokens here.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import AssetMissing, ConfigError, SchemaError
from .tokens import detokenize, tokenize

BLOCK_TYPES = ("text", "image", "table", "equation")

_CONTENT_KEYS = ("text", "caption", "img_caption", "table_caption")


@dataclass(frozen=True)
class ContentBlock:
    """One parsed document region with its metadata tuple."""

    doc_id: str
    block_id: str
    block_type: str
    content: str
    bbox: tuple[float, float, float, float]
    page: int
    storage_path: str = ""

    def __post_init__(self):
        if self.block_type not in BLOCK_TYPES:
            raise SchemaError(f"unknown block type {self.block_type!r}")
        x0, y0, x1, y1 = self.bbox
        if not (x0 < x1 and y0 < y1):
            raise SchemaError(f"degenerate bbox {self.bbox}")
        if self.page < 1:
            raise SchemaError(f"page must be positive, got {self.page}")
        if self.block_type == "text" and self.storage_path:
            raise SchemaError("text blocks must not carry a storage path")
        if self.block_type in ("image", "table") and not self.storage_path:
            raise SchemaError(f"{self.block_type} block needs a storage path")

    @property
    def is_textual(self) -> bool:
        """True when the block joins the serialized text stream."""
        return self.block_type == "text" or (
            self.block_type == "equation" and not self.storage_path
        )

    def to_json_dict(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "block_id": self.block_id,
            "block_type": self.block_type,
            "content": self.content,
            "bbox": list(self.bbox),
            "page": self.page,
            "storage_path": self.storage_path,
        }

    @classmethod
    def from_json_dict(cls, row: dict) -> "ContentBlock":
        return cls(
            doc_id=row["doc_id"],
            block_id=row["block_id"],
            block_type=row["block_type"],
            content=row["content"],
            bbox=tuple(row["bbox"]),
            page=row["page"],
            storage_path=row.get("storage_path", ""),
        )


@dataclass
class AssetRepository:
    """Directory of multimodal asset files referenced by storage paths."""

    root: Path
    entries: dict[str, str] = field(default_factory=dict)
    missing: list[str] = field(default_factory=list)

    def register(self, storage_path: str, *, strict: bool) -> None:
        target = self.root / storage_path
        if target.is_file():
            kind = target.suffix.lstrip(".").lower() or "binary"
            self.entries[storage_path] = kind
        elif strict:
            raise AssetMissing(f"asset not found under {self.root}: {storage_path}")
        else:
            self.missing.append(storage_path)

    def resolve(self, storage_path: str) -> Path:
        target = self.root / storage_path
        if storage_path not in self.entries or not target.is_file():
            raise AssetMissing(f"asset not found under {self.root}: {storage_path}")
        return target


@dataclass(frozen=True)
class Chunk:
    """A token-window slice of the serialized stream, traceable to blocks."""

    chunk_id: str
    doc_id: str
    text: str
    token_span: tuple[int, int]
    source_block_ids: tuple[str, ...]

    def to_json_dict(self) -> dict:
        return {
            "chunk_id": self.chunk_id,
            "doc_id": self.doc_id,
            "text": self.text,
            "token_span": list(self.token_span),
            "source_block_ids": list(self.source_block_ids),
        }

    @classmethod
    def from_json_dict(cls, row: dict) -> "Chunk":
        return cls(
            chunk_id=row["chunk_id"],
            doc_id=row["doc_id"],
            text=row["text"],
            token_span=tuple(row["token_span"]),
            source_block_ids=tuple(row["source_block_ids"]),
        )


@dataclass
class TokenStream:
    """Serialized tokens plus a side table mapping offsets back to blocks."""

    tokens: list[str]
    spans: list[tuple[int, int, str]]  # (start, end, block_id), end exclusive

    def __len__(self) -> int:
        return len(self.tokens)


def _block_content(raw: dict) -> str:
    for key in _CONTENT_KEYS:
        if key in raw:
            value = raw[key]
            if isinstance(value, list):
                return " ".join(str(v) for v in value if str(v).strip())
            return str(value)
    return ""


_TYPE_ALIASES = {
    "text": "text",
    "image": "image",
    "img": "image",
    "table": "table",
    "equation": "equation",
    "interline_equation": "equation",
}


def parse_layout(
    document,
    asset_root: str | Path,
    doc_id: str,
    *,
    strict: bool = True,
) -> tuple[list[ContentBlock], AssetRepository]:
    """Parse a content-list JSON document into ordered blocks plus its assets.

    `document` may be the decoded JSON array or a path to a JSON file.
    Raises SchemaError (with the offending block index) on structural
    problems; dangling asset paths raise AssetMissing in strict mode and are
    collected on the repository in lenient mode.
    """
    if isinstance(document, (str, Path)):
        document = json.loads(Path(document).read_text(encoding="utf-8"))
    if not isinstance(document, list):
        raise SchemaError("layout document must be a JSON array of blocks")

    repo = AssetRepository(root=Path(asset_root))
    blocks: list[ContentBlock] = []
    seen_ids: set[str] = set()
    for idx, raw in enumerate(document):
        if not isinstance(raw, dict):
            raise SchemaError("block is not an object", idx)
        if "type" not in raw:
            raise SchemaError("missing required field 'type'", idx)
        btype = _TYPE_ALIASES.get(str(raw["type"]))
        if btype is None:
            raise SchemaError(f"unknown block type {raw['type']!r}", idx)
        if "bbox" not in raw:
            raise SchemaError("missing required field 'bbox'", idx)
        bbox_raw = raw["bbox"]
        if not (isinstance(bbox_raw, (list, tuple)) and len(bbox_raw) == 4):
            raise SchemaError(f"bbox must be four numbers, got {bbox_raw!r}", idx)
        if "page_idx" not in raw:
            raise SchemaError("missing required field 'page_idx'", idx)
        if btype == "text" and "text" not in raw:
            raise SchemaError("text block missing required field 'text'", idx)
        storage_path = str(raw.get("img_path", "") or "")
        if btype in ("image", "table") and not storage_path:
            raise SchemaError(f"{btype} block missing required field 'img_path'", idx)

        block_id = str(raw.get("block_id", raw.get("id", f"b{idx:04d}")))
        if block_id in seen_ids:
            raise SchemaError(f"duplicate block id {block_id!r}", idx)
        seen_ids.add(block_id)
        try:
            block = ContentBlock(
                doc_id=doc_id,
                block_id=block_id,
                block_type=btype,
                content=_block_content(raw),
                bbox=tuple(float(v) for v in bbox_raw),
                page=int(raw["page_idx"]) + 1,
                storage_path=storage_path,
            )
        except (TypeError, ValueError) as exc:
            raise SchemaError(str(exc), idx) from exc
        except SchemaError as exc:
            raise SchemaError(str(exc), idx) from exc
        if block.storage_path:
            repo.register(block.storage_path, strict=strict)
        blocks.append(block)

    blocks.sort(key=lambda b: (b.page, b.bbox[1], b.bbox[0], b.block_id))
    return blocks, repo


def serialize_text(blocks: list[ContentBlock]) -> TokenStream:
    """Concatenate the textual stream, keeping offset -> block provenance."""
    tokens: list[str] = []
    spans: list[tuple[int, int, str]] = []
    for block in blocks:
        if not block.is_textual:
            continue
        block_tokens = tokenize(block.content)
        if not block_tokens:
            continue
        start = len(tokens)
        tokens.extend(block_tokens)
        spans.append((start, len(tokens), block.block_id))
    return TokenStream(tokens=tokens, spans=spans)


def chunk_stream(
    stream: TokenStream,
    doc_id: str,
    window: int = 1200,
    overlap: int = 100,
) -> list[Chunk]:
    """Slice the stream into overlapping windows.

    Chunk i covers [i*(window-overlap), min(i*(window-overlap)+window, N));
    generation stops at the first chunk reaching N. An empty stream yields no
    chunks.
    """
    if not (0 <= overlap < window):
        raise ConfigError(f"need 0 <= overlap < window, got {overlap}/{window}")
    n = len(stream)
    chunks: list[Chunk] = []
    stride = window - overlap
    i = 0
    while True:
        start = i * stride
        if start >= n:
            break
        end = min(start + window, n)
        source_ids = tuple(
            bid for s, e, bid in stream.spans if s < end and e > start
        )
        chunks.append(
            Chunk(
                chunk_id=f"{doc_id}:c{i:04d}",
                doc_id=doc_id,
                text=detokenize(stream.tokens[start:end]),
                token_span=(start, end),
                source_block_ids=source_ids,
            )
        )
        if end >= n:
            break
        i += 1
    return chunks


def write_jsonl(path: str | Path, rows: list[dict]) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True, ensure_ascii=False) + "\n")


def read_jsonl(path: str | Path) -> list[dict]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            out.append(json.loads(line))
    return out
