"""Graph knowledge base construction.

Chunks and augmented asset texts go through the extractor model, which emits
delimiter-structured entity/relation records. A deterministic judge validates
each record (resolvable endpoints, non-empty predicate, names present in the
passage or in the record's own description); invalid records trigger one
bounded re-extraction round with the violations appended to the prompt.

Entity disambiguation is hard matching only: two entities merge iff their
canonical names are byte-equal after normalization (case fold, whitespace
collapse, outer punctuation strip). Chunks that yield two or more entities
contribute one hyperedge over the full co-occurring set.
"""
from __future__ import annotations

import json
import logging
import string
from dataclasses import dataclass, field
from pathlib import Path

from . import prompts
from .errors import DescriptionUnavailable, ExtractionEmpty, GatewayError
from .gateway import ModelGateway, Prompt
from .ingest import AssetRepository, ContentBlock
from .ledger import CostLedger

logger = logging.getLogger(__name__)

_STRIP_CHARS = string.punctuation + string.whitespace


def normalize_name(surface: str) -> str:
    """Canonical form: whitespace-collapsed, outer punctuation stripped, casefolded."""
    collapsed = " ".join(surface.split())
    return collapsed.strip(_STRIP_CHARS).casefold()


@dataclass
class Entity:
    name: str  # canonical
    entity_type: str = ""
    descriptions: list[str] = field(default_factory=list)
    provenance: set[tuple[str, str]] = field(default_factory=set)

    @property
    def description(self) -> str:
        return "\n".join(self.descriptions)


@dataclass
class Relation:
    head: str
    tail: str
    predicate: str
    descriptions: list[str] = field(default_factory=list)
    provenance: set[tuple[str, str]] = field(default_factory=set)

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.head, self.predicate, self.tail)

    @property
    def description(self) -> str:
        return "\n".join(self.descriptions)


@dataclass(frozen=True)
class Hyperedge:
    members: frozenset[str]
    source_chunk_id: str
    doc_id: str
    weight: float

    @property
    def key(self) -> tuple[str, frozenset[str]]:
        return (self.source_chunk_id, self.members)


@dataclass
class AugmentedAssetText:
    """Caption plus generated description for one multimodal block."""

    doc_id: str
    block_id: str
    caption: str
    description: str
    degraded: bool = False

    @property
    def combined(self) -> str:
        if self.caption and self.description:
            return f"{self.caption}\nDescription: {self.description}"
        return self.description or self.caption


@dataclass
class Extraction:
    entities: list[Entity]
    relations: list[Relation]
    malformed: int = 0
    rounds: int = 0  # extra judge rounds taken beyond the initial extraction


def parse_extraction_records(text: str, source: tuple[str, str]) -> Extraction:
    """Parse delimiter records; drop malformed lines with a count.

    Relations referencing an unlisted entity auto-create that entity with an
    empty description so that every relation endpoint resolves.
    """
    entities: dict[str, Entity] = {}
    relations: dict[tuple[str, str, str], Relation] = {}
    malformed = 0
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        fields = [f.strip() for f in line.split(prompts.FIELD_SEP)]
        tag = fields[0].casefold()
        if tag == "entity" and len(fields) == 4:
            name = normalize_name(fields[1])
            if not name:
                malformed += 1
                continue
            ent = entities.setdefault(
                name, Entity(name=name, entity_type=fields[2], provenance={source})
            )
            if fields[3] and fields[3] not in ent.descriptions:
                ent.descriptions.append(fields[3])
        elif tag == "relation" and len(fields) == 5:
            head, tail = normalize_name(fields[1]), normalize_name(fields[2])
            if not head or not tail:
                malformed += 1
                continue
            rel = relations.setdefault(
                (head, fields[3], tail),
                Relation(head=head, tail=tail, predicate=fields[3], provenance={source}),
            )
            if fields[4] and fields[4] not in rel.descriptions:
                rel.descriptions.append(fields[4])
        else:
            malformed += 1
    for rel in relations.values():
        for endpoint in (rel.head, rel.tail):
            entities.setdefault(
                endpoint, Entity(name=endpoint, provenance={source})
            )
    return Extraction(
        entities=list(entities.values()),
        relations=list(relations.values()),
        malformed=malformed,
    )


def judge_extraction(extraction: Extraction, reference_text: str) -> list[str]:
    """Structural validation; returns human-readable violation messages."""
    haystack = " ".join(reference_text.split()).casefold()
    violations = []
    known = {e.name for e in extraction.entities}
    for ent in extraction.entities:
        in_text = ent.name in haystack
        in_description = any(ent.name in d.casefold() for d in ent.descriptions)
        if not (in_text or in_description):
            violations.append(f"entity {ent.name!r} does not appear in the passage")
    for rel in extraction.relations:
        if not rel.predicate.strip():
            violations.append(f"relation {rel.head!r}->{rel.tail!r} has no predicate")
        for endpoint in (rel.head, rel.tail):
            if endpoint not in known:
                violations.append(
                    f"relation {rel.head!r}->{rel.tail!r} references unknown "
                    f"entity {endpoint!r}"
                )
    return violations


def _drop_invalid(extraction: Extraction, reference_text: str) -> Extraction:
    """Remove records the judge still rejects, then restore closure."""
    haystack = " ".join(reference_text.split()).casefold()
    kept_entities = [
        e
        for e in extraction.entities
        if e.name in haystack or any(e.name in d.casefold() for d in e.descriptions)
    ]
    names = {e.name for e in kept_entities}
    kept_relations = [
        r
        for r in extraction.relations
        if r.predicate.strip() and r.head in names and r.tail in names
    ]
    return Extraction(
        entities=kept_entities,
        relations=kept_relations,
        malformed=extraction.malformed,
        rounds=extraction.rounds,
    )


def _merge_extractions(base: Extraction, extra: Extraction) -> Extraction:
    entities = {e.name: e for e in base.entities}
    for ent in extra.entities:
        if ent.name in entities:
            existing = entities[ent.name]
            existing.provenance |= ent.provenance
            for d in ent.descriptions:
                if d not in existing.descriptions:
                    existing.descriptions.append(d)
        else:
            entities[ent.name] = ent
    relations = {r.key: r for r in base.relations}
    for rel in extra.relations:
        if rel.key in relations:
            existing = relations[rel.key]
            existing.provenance |= rel.provenance
            for d in rel.descriptions:
                if d not in existing.descriptions:
                    existing.descriptions.append(d)
        else:
            relations[rel.key] = rel
    return Extraction(
        entities=list(entities.values()),
        relations=list(relations.values()),
        malformed=base.malformed + extra.malformed,
        rounds=base.rounds,
    )


def build_hyperedges(
    chunk_id: str,
    doc_id: str,
    entities_in_chunk: list[Entity],
    relations_in_chunk: list[Relation],
) -> list[Hyperedge]:
    """One hyperedge over the chunk's full co-occurring entity set.

    Weight is the number of relations among the members plus one. Fewer than
    two entities yield no hyperedge.
    """
    if len(entities_in_chunk) < 2:
        return []
    members = frozenset(e.name for e in entities_in_chunk)
    internal = sum(
        1 for r in relations_in_chunk if r.head in members and r.tail in members
    )
    return [
        Hyperedge(
            members=members,
            source_chunk_id=chunk_id,
            doc_id=doc_id,
            weight=float(internal + 1),
        )
    ]


class KnowledgeGraph:
    """Entities, binary relations, and n-ary hyperedges with provenance."""

    def __init__(self):
        self.entities: dict[str, Entity] = {}
        self.relations: dict[tuple[str, str, str], Relation] = {}
        self.hyperedges: dict[tuple[str, frozenset[str]], Hyperedge] = {}

    def merge_entities(self, new_entities: list[Entity]) -> None:
        """Hard-match merge: equal canonical names become one node.

        Provenance is unioned, descriptions are concatenated with
        deduplication, and the entity type of the earliest occurrence wins.
        """
        for ent in new_entities:
            existing = self.entities.get(ent.name)
            if existing is None:
                self.entities[ent.name] = Entity(
                    name=ent.name,
                    entity_type=ent.entity_type,
                    descriptions=list(ent.descriptions),
                    provenance=set(ent.provenance),
                )
                continue
            if ent.entity_type and not existing.entity_type:
                existing.entity_type = ent.entity_type
            elif ent.entity_type and ent.entity_type != existing.entity_type:
                logger.debug(
                    "entity type conflict for %r: keeping %r, ignoring %r",
                    ent.name,
                    existing.entity_type,
                    ent.entity_type,
                )
            existing.provenance |= ent.provenance
            for d in ent.descriptions:
                if d not in existing.descriptions:
                    existing.descriptions.append(d)

    def add_relations(self, new_relations: list[Relation]) -> None:
        for rel in new_relations:
            for endpoint in (rel.head, rel.tail):
                if endpoint not in self.entities:
                    self.entities[endpoint] = Entity(
                        name=endpoint, provenance=set(rel.provenance)
                    )
            existing = self.relations.get(rel.key)
            if existing is None:
                self.relations[rel.key] = Relation(
                    head=rel.head,
                    tail=rel.tail,
                    predicate=rel.predicate,
                    descriptions=list(rel.descriptions),
                    provenance=set(rel.provenance),
                )
            else:
                existing.provenance |= rel.provenance
                for d in rel.descriptions:
                    if d not in existing.descriptions:
                        existing.descriptions.append(d)

    def add_hyperedges(self, edges: list[Hyperedge]) -> None:
        for edge in edges:
            for member in edge.members:
                if member not in self.entities:
                    self.entities[member] = Entity(
                        name=member, provenance={(edge.doc_id, edge.source_chunk_id)}
                    )
            self.hyperedges[edge.key] = edge

    def neighbors(self, name: str) -> list[Relation]:
        """Relations incident to the named entity, deterministic order."""
        return sorted(
            (r for r in self.relations.values() if name in (r.head, r.tail)),
            key=lambda r: r.key,
        )

    def hyperedges_with(self, name: str) -> list[Hyperedge]:
        return sorted(
            (h for h in self.hyperedges.values() if name in h.members),
            key=lambda h: (h.source_chunk_id, tuple(sorted(h.members))),
        )

    def remove_doc(self, doc_id: str) -> None:
        """Drop every record derived from the document (replace semantics)."""
        for name in list(self.entities):
            ent = self.entities[name]
            ent.provenance = {p for p in ent.provenance if p[0] != doc_id}
            if not ent.provenance:
                del self.entities[name]
        for key in list(self.relations):
            rel = self.relations[key]
            rel.provenance = {p for p in rel.provenance if p[0] != doc_id}
            if not rel.provenance:
                del self.relations[key]
        for key in list(self.hyperedges):
            if self.hyperedges[key].doc_id == doc_id:
                del self.hyperedges[key]
        # closure: relations may have lost an endpoint entity
        for key in list(self.relations):
            rel = self.relations[key]
            if rel.head not in self.entities or rel.tail not in self.entities:
                del self.relations[key]
        for key in list(self.hyperedges):
            if any(m not in self.entities for m in self.hyperedges[key].members):
                del self.hyperedges[key]

    # -- persistence -------------------------------------------------------

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        with (directory / "entities.jsonl").open("w", encoding="utf-8") as fh:
            for name in sorted(self.entities):
                ent = self.entities[name]
                fh.write(
                    json.dumps(
                        {
                            "name": ent.name,
                            "entity_type": ent.entity_type,
                            "descriptions": ent.descriptions,
                            "provenance": sorted(ent.provenance),
                        },
                        sort_keys=True,
                        ensure_ascii=False,
                    )
                    + "\n"
                )
        with (directory / "relations.jsonl").open("w", encoding="utf-8") as fh:
            for key in sorted(self.relations):
                rel = self.relations[key]
                fh.write(
                    json.dumps(
                        {
                            "head": rel.head,
                            "tail": rel.tail,
                            "predicate": rel.predicate,
                            "descriptions": rel.descriptions,
                            "provenance": sorted(rel.provenance),
                        },
                        sort_keys=True,
                        ensure_ascii=False,
                    )
                    + "\n"
                )
        with (directory / "hyperedges.jsonl").open("w", encoding="utf-8") as fh:
            for key in sorted(
                self.hyperedges, key=lambda k: (k[0], tuple(sorted(k[1])))
            ):
                edge = self.hyperedges[key]
                fh.write(
                    json.dumps(
                        {
                            "members": sorted(edge.members),
                            "source_chunk_id": edge.source_chunk_id,
                            "doc_id": edge.doc_id,
                            "weight": edge.weight,
                        },
                        sort_keys=True,
                        ensure_ascii=False,
                    )
                    + "\n"
                )

    @classmethod
    def load(cls, directory: str | Path) -> "KnowledgeGraph":
        directory = Path(directory)
        graph = cls()
        entities_path = directory / "entities.jsonl"
        if entities_path.exists():
            for line in entities_path.read_text(encoding="utf-8").splitlines():
                row = json.loads(line)
                graph.entities[row["name"]] = Entity(
                    name=row["name"],
                    entity_type=row["entity_type"],
                    descriptions=list(row["descriptions"]),
                    provenance={tuple(p) for p in row["provenance"]},
                )
        relations_path = directory / "relations.jsonl"
        if relations_path.exists():
            for line in relations_path.read_text(encoding="utf-8").splitlines():
                row = json.loads(line)
                rel = Relation(
                    head=row["head"],
                    tail=row["tail"],
                    predicate=row["predicate"],
                    descriptions=list(row["descriptions"]),
                    provenance={tuple(p) for p in row["provenance"]},
                )
                graph.relations[rel.key] = rel
        hyperedges_path = directory / "hyperedges.jsonl"
        if hyperedges_path.exists():
            for line in hyperedges_path.read_text(encoding="utf-8").splitlines():
                row = json.loads(line)
                edge = Hyperedge(
                    members=frozenset(row["members"]),
                    source_chunk_id=row["source_chunk_id"],
                    doc_id=row["doc_id"],
                    weight=float(row["weight"]),
                )
                graph.hyperedges[edge.key] = edge
        return graph


class KnowledgeBaseBuilder:
    """Model-backed extraction with the bounded validate-and-retry loop."""

    def __init__(
        self,
        gateway: ModelGateway,
        *,
        judge_rounds: int = 2,
        ledger: CostLedger | None = None,
    ):
        self.gateway = gateway
        self.judge_rounds = judge_rounds
        self.ledger = ledger

    def describe_asset(
        self, block: ContentBlock, repo: AssetRepository
    ) -> AugmentedAssetText:
        """Generate a semantic description and concatenate it with the caption.

        Raises AssetMissing when the file is gone and DescriptionUnavailable
        when the perception endpoint fails; callers then index the caption
        alone with the degraded flag set.
        """
        path = repo.resolve(block.storage_path)
        prompt = Prompt(
            system=prompts.ASSET_DESCRIPTION_SYSTEM,
            user=prompts.ASSET_DESCRIPTION_USER.format(caption=block.content or "none"),
            images=(str(path),),
        )
        try:
            call = self.gateway.complete(
                "perception_vlm", prompt, "image_description", ledger=self.ledger
            )
        except GatewayError as exc:
            raise DescriptionUnavailable(
                f"description failed for {block.block_id}: {exc}"
            ) from exc
        return AugmentedAssetText(
            doc_id=block.doc_id,
            block_id=block.block_id,
            caption=block.content,
            description=call.response,
        )

    def extract_triplets(
        self, text: str, source: tuple[str, str], extra_system: str = ""
    ) -> Extraction:
        """One extraction round: prompt the extractor and parse its records."""
        if not text.strip():
            raise ValueError("cannot extract from empty text")
        system = prompts.EXTRACTION_SYSTEM
        if extra_system:
            system = f"{system}\n\n{extra_system}"
        call = self.gateway.complete(
            "extractor_llm",
            Prompt(system=system, user=text),
            "extraction",
            ledger=self.ledger,
        )
        return parse_extraction_records(call.response, source)

    def judge_and_retry(
        self,
        extraction: Extraction,
        text: str,
        source: tuple[str, str],
        max_rounds: int | None = None,
    ) -> Extraction:
        """Validate records; re-extract with violations appended, bounded.

        Records that are still invalid after the final round are dropped and
        the valid remainder kept. Raises ExtractionEmpty when nothing valid
        survives.
        """
        rounds = self.judge_rounds if max_rounds is None else max_rounds
        current = extraction
        for _ in range(rounds):
            violations = judge_extraction(current, text)
            if not current.entities and not current.relations:
                violations = ["no parseable records"] + violations
            if not violations:
                break
            retry = self.extract_triplets(
                text,
                source,
                extra_system=prompts.EXTRACTION_RETRY_TEMPLATE.format(
                    violations="\n".join(f"- {v}" for v in violations)
                ),
            )
            current = _merge_extractions(_drop_invalid(current, text), retry)
            current.rounds += 1
        final = _drop_invalid(current, text)
        if not final.entities and not final.relations:
            raise ExtractionEmpty(f"no valid records for {source}")
        return final

    def extract_validated(self, text: str, source: tuple[str, str]) -> Extraction:
        return self.judge_and_retry(self.extract_triplets(text, source), text, source)
