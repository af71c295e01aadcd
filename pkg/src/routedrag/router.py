"""Query complexity routing.

A small language model reports the query's structure (intent, entity and
visual-reference counts, constraints, cross-chunk and multi-step needs); a
deterministic rule then assigns the complexity label:

* Complex  iff multi-step reasoning is needed and the query aggregates
  (two or more entities, two or more visual references, or cross-chunk).
* Simple   iff none of cross-chunk / multi-step and at most one entity and
  one visual reference (localized evidence).
* Moderate otherwise.

Labels map onto fixed retrieval/instruction pairs, and Complex queries are
decomposed into two to four self-contained sub-queries. When the model's
report cannot be parsed, heuristics computed from the raw query text take
over; the router never hard-fails, and the fallback path is flagged.
"""
from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

from . import prompts
from .errors import GatewayError
from .gateway import ModelGateway, Prompt
from .ledger import CostLedger


class Complexity(str, Enum):
    SIMPLE = "Simple"
    MODERATE = "Moderate"
    COMPLEX = "Complex"


INTENTS = (
    "factual_retrieval",
    "comparative_reasoning",
    "causal_analysis",
    "aggregation",
    "unanswerable_probe",
    "other",
)

MODE_FOR_COMPLEXITY = {
    Complexity.SIMPLE: "vector_local",
    Complexity.MODERATE: "graph",
    Complexity.COMPLEX: "hypergraph",
}

INSTRUCTION_FOR_COMPLEXITY = {
    Complexity.SIMPLE: "simple_extract",
    Complexity.MODERATE: "moderate_compute",
    Complexity.COMPLEX: "complex_integrate",
}

COMPLEXITY_FOR_MODE = {mode: c for c, mode in MODE_FOR_COMPLEXITY.items()}


@dataclass(frozen=True)
class QueryFeatures:
    intent: str = "other"
    entity_count: int = 0
    visual_ref_count: int = 0
    constraint_count: int = 0
    needs_cross_chunk: bool = False
    needs_multi_step: bool = False


@dataclass(frozen=True)
class RoutingDecision:
    complexity: Complexity
    retrieval_mode: str
    instruction_key: str
    sub_queries: tuple[str, ...]
    rationale: str
    features: QueryFeatures
    used_fallback: bool = False
    forced: bool = False


def classify(features: QueryFeatures) -> Complexity:
    """Pure classification rule over extracted features."""
    aggregating = (
        features.entity_count >= 2
        or features.visual_ref_count >= 2
        or features.needs_cross_chunk
    )
    if features.needs_multi_step and aggregating:
        return Complexity.COMPLEX
    if (
        not features.needs_cross_chunk
        and not features.needs_multi_step
        and features.entity_count <= 1
        and features.visual_ref_count <= 1
    ):
        return Complexity.SIMPLE
    return Complexity.MODERATE


_CAP_RUN = re.compile(r"\b[A-Z][\w-]*(?:\s+[A-Z][\w-]*)+\b")
_QUOTED = re.compile(r"\"[^\"]+\"|'[^']+'")
_VISUAL = re.compile(r"\b(?:figure|table|chart|image)s?\b", re.IGNORECASE)
_MULTI_STEP = re.compile(
    r"\b(?:compar\w*|why|trend\w*|differen\w*)\b", re.IGNORECASE
)
_CONSTRAINT = re.compile(
    r"\b(?:if|between|at least)\b|\b\d{4}\s*(?:-|to)\s*\d{4}\b", re.IGNORECASE
)
_CAUSAL = re.compile(r"\b(?:why|cause\w*|because)\b", re.IGNORECASE)
_AGGREGATE = re.compile(r"\b(?:how many|total|sum|average|overall)\b", re.IGNORECASE)


def heuristic_features(query: str) -> QueryFeatures:
    """Deterministic fallback when the router model output is unparseable."""
    entity_count = len(_CAP_RUN.findall(query)) + len(_QUOTED.findall(query))
    visual_refs = len(_VISUAL.findall(query))
    multi_step = bool(_MULTI_STEP.search(query))
    if _MULTI_STEP.search(query) and _CAUSAL.search(query):
        intent = "causal_analysis"
    elif _MULTI_STEP.search(query):
        intent = "comparative_reasoning"
    elif _AGGREGATE.search(query):
        intent = "aggregation"
    else:
        intent = "factual_retrieval"
    return QueryFeatures(
        intent=intent,
        entity_count=entity_count,
        visual_ref_count=visual_refs,
        constraint_count=len(_CONSTRAINT.findall(query)),
        needs_cross_chunk=entity_count >= 2,
        needs_multi_step=multi_step,
    )


_BOOL_WORDS = {"yes": True, "true": True, "no": False, "false": False}


def parse_feature_report(text: str) -> QueryFeatures | None:
    """Parse the structured report; None means fall back to heuristics."""
    values: dict[str, str] = {}
    for line in text.splitlines():
        if ":" not in line:
            continue
        key, _, value = line.partition(":")
        values[key.strip().casefold()] = value.strip()
    required = ("intent", "entities", "visual_refs", "constraints", "cross_chunk", "multi_step")
    if any(key not in values for key in required):
        return None
    intent = values["intent"].casefold()
    if intent not in INTENTS:
        return None
    try:
        entity_count = int(values["entities"])
        visual_refs = int(values["visual_refs"])
        constraints = int(values["constraints"])
    except ValueError:
        return None
    cross = _BOOL_WORDS.get(values["cross_chunk"].casefold())
    multi = _BOOL_WORDS.get(values["multi_step"].casefold())
    if cross is None or multi is None:
        return None
    if min(entity_count, visual_refs, constraints) < 0:
        return None
    return QueryFeatures(
        intent=intent,
        entity_count=entity_count,
        visual_ref_count=visual_refs,
        constraint_count=constraints,
        needs_cross_chunk=cross,
        needs_multi_step=multi,
    )


def validate_sub_queries(lines: list[str], cap: int = 4) -> tuple[str, ...]:
    """Distinct, non-empty sub-queries; fewer than two means undecomposed."""
    seen: list[str] = []
    for line in lines:
        line = line.strip().lstrip("-*0123456789.) ").strip()
        if line and line not in seen:
            seen.append(line)
    seen = seen[:cap]
    return tuple(seen) if len(seen) >= 2 else ()


class QueryRouter:
    """Model-backed routing with deterministic classification and fallback."""

    def __init__(self, gateway: ModelGateway, *, max_sub_queries: int = 4):
        self.gateway = gateway
        self.max_sub_queries = max_sub_queries

    def extract_features(
        self, query: str, *, ledger: CostLedger | None = None
    ) -> tuple[QueryFeatures, bool, str]:
        """Returns (features, used_fallback, rationale_text)."""
        if not query.strip():
            raise ValueError("empty query")
        try:
            call = self.gateway.complete(
                "router_slm",
                Prompt(
                    system=prompts.ROUTER_FEATURE_SYSTEM,
                    user=prompts.ROUTER_FEATURE_USER.format(query=query),
                ),
                "routing",
                ledger=ledger,
            )
            report = call.response
        except GatewayError:
            report = ""
        features = parse_feature_report(report)
        if features is None:
            return heuristic_features(query), True, "fallback: heuristic features"
        return features, False, report

    def decompose(
        self, query: str, features: QueryFeatures, *, ledger: CostLedger | None = None
    ) -> tuple[str, ...]:
        """Ask for 2..4 sub-queries; an unusable reply means undecomposed."""
        try:
            call = self.gateway.complete(
                "router_slm",
                Prompt(
                    system=prompts.DECOMPOSE_SYSTEM,
                    user=prompts.DECOMPOSE_USER.format(query=query),
                ),
                "routing",
                ledger=ledger,
            )
        except GatewayError:
            return ()
        return validate_sub_queries(call.response.splitlines(), self.max_sub_queries)

    def route(self, query: str, *, ledger: CostLedger | None = None) -> RoutingDecision:
        features, used_fallback, rationale = self.extract_features(query, ledger=ledger)
        complexity = classify(features)
        sub_queries: tuple[str, ...] = ()
        if complexity is Complexity.COMPLEX:
            sub_queries = self.decompose(query, features, ledger=ledger)
        return RoutingDecision(
            complexity=complexity,
            retrieval_mode=MODE_FOR_COMPLEXITY[complexity],
            instruction_key=INSTRUCTION_FOR_COMPLEXITY[complexity],
            sub_queries=sub_queries,
            rationale=rationale,
            features=features,
            used_fallback=used_fallback,
        )


def forced_decision(mode: str) -> RoutingDecision:
    """Bypass routing entirely; used by the --mode override and ablations."""
    complexity = COMPLEXITY_FOR_MODE[mode]
    return RoutingDecision(
        complexity=complexity,
        retrieval_mode=mode,
        instruction_key=INSTRUCTION_FOR_COMPLEXITY[complexity],
        sub_queries=(),
        rationale=f"forced mode {mode}",
        features=QueryFeatures(),
        used_fallback=False,
        forced=True,
    )


def decision_log_line(
    decision: RoutingDecision, query: str, doc_pages: int
) -> dict:
    """One JSON-lines record for the routing-distribution report."""
    return {
        "query_hash": hashlib.sha256(query.encode("utf-8")).hexdigest()[:16],
        "complexity": decision.complexity.value,
        "mode": decision.retrieval_mode,
        "sub_query_count": len(decision.sub_queries),
        "fallback": decision.used_fallback,
        "forced": decision.forced,
        "doc_pages": doc_pages,
    }


def append_decision_log(path: str | Path, line: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a", encoding="utf-8") as fh:
        fh.write(json.dumps(line, sort_keys=True) + "\n")
