"""Uniform access to chat, vision, embedding, and reranking endpoints.

All roles speak the widely deployed JSON wire shape: chat completions take a
messages array and answer with choices plus a usage block; embeddings take an
input list; rerankers take a query and documents. Token counts always come
from the endpoint's usage report, never from local re-tokenization.

A FixtureCassette can sit between the gateway and the network. In record mode
every live response is written down keyed by a request fingerprint; in replay
mode a request whose fingerprint has no record raises FixtureMiss and is
never sent anywhere. Replaying the same cassette twice yields byte-identical
responses, which is what makes full pipeline runs reproducible.
"""
from __future__ import annotations

import base64
import hashlib
import json
import logging
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import httpx

from .config import GENERATIVE_ROLES, ModelEndpoint
from .errors import FixtureMiss, ProtocolError, RetryExhausted
from .ledger import CostLedger, ModelCall

logger = logging.getLogger(__name__)

_MIME_BY_SUFFIX = {
    ".png": "image/png",
    ".jpg": "image/jpeg",
    ".jpeg": "image/jpeg",
    ".gif": "image/gif",
    ".webp": "image/webp",
}


@dataclass(frozen=True)
class Prompt:
    """Structured prompt: system text, user text, optional image file paths."""

    system: str = ""
    user: str = ""
    images: tuple[str, ...] = ()

    def is_empty(self) -> bool:
        return not (self.system.strip() or self.user.strip() or self.images)


@dataclass(frozen=True)
class RerankResult:
    """Candidate ordering from the reranker.

    ranking holds (candidate_index, score) pairs with non-increasing scores
    and every input index exactly once. degraded means the endpoint failed
    and the input order was kept.
    """

    ranking: tuple[tuple[int, float], ...]
    degraded: bool = False


@dataclass(frozen=True)
class LoggedRequest:
    role: str
    stage: str
    body: dict


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def request_fingerprint(role: str, body: dict) -> str:
    """Stable hash of (role, canonicalized request JSON)."""
    digest = hashlib.sha256()
    digest.update(role.encode("utf-8"))
    digest.update(b"\n")
    digest.update(canonical_json(body).encode("utf-8"))
    return digest.hexdigest()


def _image_data_url(path: str) -> str:
    p = Path(path)
    mime = _MIME_BY_SUFFIX.get(p.suffix.lower(), "application/octet-stream")
    data = base64.b64encode(p.read_bytes()).decode("ascii")
    return f"data:{mime};base64,{data}"


def chat_request_body(endpoint: ModelEndpoint, prompt: Prompt) -> dict:
    """Build the JSON body for a chat/vision completion."""
    messages = []
    if prompt.system:
        messages.append({"role": "system", "content": prompt.system})
    if prompt.images:
        content: list[dict] = [{"type": "text", "text": prompt.user}]
        for path in prompt.images:
            content.append(
                {"type": "image_url", "image_url": {"url": _image_data_url(path)}}
            )
        messages.append({"role": "user", "content": content})
    else:
        messages.append({"role": "user", "content": prompt.user})
    return {
        "model": endpoint.model_name,
        "messages": messages,
        "temperature": endpoint.temperature,
        "top_p": endpoint.top_p,
    }


class FixtureCassette:
    """Record/replay store: one JSON record per line.

    Each line carries {fingerprint, response, prompt_tokens, completion_tokens}
    plus an optional degraded flag for reranker fallbacks. Record mode is
    single-writer; replay mode is read-only and multi-reader.
    """

    def __init__(self, path: str | Path, mode: str):
        if mode not in ("record", "replay", "passthrough"):
            raise ValueError(f"unknown cassette mode {mode!r}")
        self.path = Path(path)
        self.mode = mode
        self._records: dict[str, dict] = {}
        self._lock = threading.Lock()
        if self.path.exists():
            for line in self.path.read_text(encoding="utf-8").splitlines():
                if not line.strip():
                    continue
                rec = json.loads(line)
                self._records.setdefault(rec["fingerprint"], rec)
        elif mode == "replay":
            raise FixtureMiss(f"cassette file not found: {self.path}")

    def __len__(self) -> int:
        return len(self._records)

    def lookup(self, fingerprint: str) -> dict | None:
        return self._records.get(fingerprint)

    def store(
        self,
        fingerprint: str,
        response: str,
        prompt_tokens: int,
        completion_tokens: int,
        **extra,
    ) -> None:
        rec = {
            "fingerprint": fingerprint,
            "response": response,
            "prompt_tokens": prompt_tokens,
            "completion_tokens": completion_tokens,
        }
        rec.update(extra)
        with self._lock:
            if fingerprint in self._records:
                return
            self._records[fingerprint] = rec
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(canonical_json(rec) + "\n")


class ModelGateway:
    """Shared client for every model role.

    Appends one ModelCall per invocation to its CostLedger (and to an
    optional per-call ledger for query-scoped accounting), keeps a request
    log for auditing which role saw what, and never lets more than
    max_in_flight requests be outstanding per endpoint.
    """

    def __init__(
        self,
        endpoints: dict[str, ModelEndpoint],
        *,
        cassette: FixtureCassette | None = None,
        retries: int = 3,
        backoff_seconds: float = 0.5,
        timeout: float = 30.0,
        api_key: str | None = None,
        embedding_dim: int = 1024,
    ):
        self.endpoints = dict(endpoints)
        self.cassette = cassette
        self.retries = max(1, retries)
        self.backoff_seconds = backoff_seconds
        self.embedding_dim = embedding_dim
        self.ledger = CostLedger()
        self.request_log: list[LoggedRequest] = []
        self._log_lock = threading.Lock()
        self._semaphores = {
            role: threading.BoundedSemaphore(ep.max_in_flight)
            for role, ep in self.endpoints.items()
        }
        headers = {"Content-Type": "application/json"}
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        self._client = httpx.Client(timeout=timeout, headers=headers)

    def close(self) -> None:
        self._client.close()

    # -- public operations ------------------------------------------------

    def complete(
        self,
        role: str,
        prompt: Prompt,
        stage: str,
        *,
        ledger: CostLedger | None = None,
    ) -> ModelCall:
        """Run one chat/vision completion and meter it under `stage`."""
        if role not in GENERATIVE_ROLES:
            raise ValueError(f"{role!r} is not a generative role")
        if prompt.is_empty():
            raise ValueError("empty prompt")
        endpoint = self._endpoint(role)
        body = chat_request_body(endpoint, prompt)
        fingerprint = request_fingerprint(role, body)
        self._log_request(role, stage, body)
        rec = self._dispatch(role, endpoint, "/chat/completions", body, fingerprint)
        if rec is None:
            raise ProtocolError("chat dispatch returned nothing")
        call = ModelCall(
            role=role,
            stage=stage,
            model_name=endpoint.model_name,
            response=rec["response"],
            prompt_tokens=rec["prompt_tokens"],
            completion_tokens=rec["completion_tokens"],
            fingerprint=fingerprint,
        )
        self._meter(call, ledger)
        return call

    def embed(
        self,
        texts: list[str],
        *,
        stage: str = "embedding",
        ledger: CostLedger | None = None,
    ) -> list[list[float]]:
        """Embed a batch of texts, one vector per input, order preserved."""
        if not texts:
            return []
        for i, text in enumerate(texts):
            if not text.strip():
                raise ValueError(f"embed input {i} is empty after trimming")
        endpoint = self._endpoint("embedder")
        body = {"model": endpoint.model_name, "input": list(texts)}
        fingerprint = request_fingerprint("embedder", body)
        self._log_request("embedder", stage, body)
        rec = self._dispatch(
            "embedder", endpoint, "/embeddings", body, fingerprint, kind="embeddings"
        )
        vectors = json.loads(rec["response"])
        if len(vectors) != len(texts):
            raise ProtocolError(
                f"embedding endpoint returned {len(vectors)} vectors for "
                f"{len(texts)} inputs"
            )
        for vec in vectors:
            if len(vec) != self.embedding_dim:
                raise ProtocolError(
                    f"embedding dimension {len(vec)} != configured "
                    f"{self.embedding_dim}"
                )
        call = ModelCall(
            role="embedder",
            stage=stage,
            model_name=endpoint.model_name,
            response="",
            prompt_tokens=rec["prompt_tokens"],
            completion_tokens=rec["completion_tokens"],
            fingerprint=fingerprint,
        )
        self._meter(call, ledger)
        return vectors

    def rerank(
        self,
        query: str,
        candidates: list[str],
        *,
        stage: str = "embedding",
        ledger: CostLedger | None = None,
    ) -> RerankResult:
        """Score candidates against the query.

        On endpoint failure the input order is kept and the result is marked
        degraded; degraded outcomes are recorded to the cassette so replay
        reproduces them.
        """
        if not candidates:
            raise ValueError("rerank needs at least one candidate")
        endpoint = self._endpoint("reranker")
        body = {
            "model": endpoint.model_name,
            "query": query,
            "documents": list(candidates),
        }
        fingerprint = request_fingerprint("reranker", body)
        self._log_request("reranker", stage, body)
        degraded = False
        try:
            rec = self._dispatch(
                "reranker", endpoint, "/rerank", body, fingerprint, kind="rerank"
            )
            ranking = [(int(i), float(s)) for i, s in json.loads(rec["response"])]
            degraded = bool(rec.get("degraded", False))
            if sorted(i for i, _ in ranking) != list(range(len(candidates))):
                raise ProtocolError("reranker did not cover every candidate once")
        except (RetryExhausted, ProtocolError) as exc:
            logger.warning("reranker degraded, keeping input order: %s", exc)
            degraded = True
            ranking = [(i, 1.0 / (1 + i)) for i in range(len(candidates))]
            rec = {"prompt_tokens": 0, "completion_tokens": 0}
            if self.cassette is not None and self.cassette.mode == "record":
                self.cassette.store(
                    fingerprint, canonical_json(ranking), 0, 0, degraded=True
                )
        ranking.sort(key=lambda pair: (-pair[1], pair[0]))
        call = ModelCall(
            role="reranker",
            stage=stage,
            model_name=endpoint.model_name,
            response="",
            prompt_tokens=rec["prompt_tokens"],
            completion_tokens=rec["completion_tokens"],
            fingerprint=fingerprint,
        )
        self._meter(call, ledger)
        return RerankResult(ranking=tuple(ranking), degraded=degraded)

    # -- internals ---------------------------------------------------------

    def _endpoint(self, role: str) -> ModelEndpoint:
        try:
            return self.endpoints[role]
        except KeyError:
            raise ValueError(f"no endpoint configured for role {role!r}") from None

    def _log_request(self, role: str, stage: str, body: dict) -> None:
        with self._log_lock:
            self.request_log.append(LoggedRequest(role=role, stage=stage, body=body))

    def _meter(self, call: ModelCall, extra_ledger: CostLedger | None) -> None:
        self.ledger.append(call)
        if extra_ledger is not None:
            extra_ledger.append(call)

    def _dispatch(
        self,
        role: str,
        endpoint: ModelEndpoint,
        path: str,
        body: dict,
        fingerprint: str,
        kind: str = "chat",
    ) -> dict:
        mode = self.cassette.mode if self.cassette is not None else "passthrough"
        if mode == "replay":
            rec = self.cassette.lookup(fingerprint)
            if rec is None:
                raise FixtureMiss(
                    f"no cassette record for {role} request {fingerprint[:12]}"
                )
            return rec

        with self._semaphores[role]:
            payload = self._post_with_retries(endpoint.base_url + path, body)
        response, prompt_tokens, completion_tokens = self._parse(payload, kind)
        if mode == "record":
            self.cassette.store(fingerprint, response, prompt_tokens, completion_tokens)
        return {
            "response": response,
            "prompt_tokens": prompt_tokens,
            "completion_tokens": completion_tokens,
        }

    def _post_with_retries(self, url: str, body: dict) -> dict:
        last_error: Exception | None = None
        for attempt in range(self.retries):
            if attempt:
                time.sleep(self.backoff_seconds * (2 ** (attempt - 1)))
            try:
                resp = self._client.post(url, json=body)
            except httpx.HTTPError as exc:
                last_error = exc
                continue
            if resp.status_code >= 500:
                last_error = ProtocolError(f"server error {resp.status_code}")
                continue
            if resp.status_code >= 400:
                raise ProtocolError(f"endpoint error {resp.status_code}: {resp.text}")
            try:
                return resp.json()
            except ValueError as exc:
                raise ProtocolError(f"endpoint returned non-JSON body: {exc}") from exc
        raise RetryExhausted(
            f"{url} still failing after {self.retries} attempts: {last_error}"
        )

    @staticmethod
    def _parse(payload: dict, kind: str) -> tuple[str, int, int]:
        """Extract (response, prompt_tokens, completion_tokens) per endpoint kind."""
        usage = payload.get("usage") or {}
        try:
            prompt_tokens = int(usage.get("prompt_tokens", 0))
            completion_tokens = int(usage.get("completion_tokens", 0))
        except (TypeError, ValueError) as exc:
            raise ProtocolError(f"malformed usage block: {usage!r}") from exc
        try:
            if kind == "chat":
                if "usage" not in payload:
                    raise KeyError("usage")
                text = payload["choices"][0]["message"]["content"]
                if not isinstance(text, str):
                    raise KeyError("content")
                return text, prompt_tokens, completion_tokens
            if kind == "embeddings":
                rows = sorted(payload["data"], key=lambda r: r["index"])
                vectors = [row["embedding"] for row in rows]
                return canonical_json(vectors), prompt_tokens, completion_tokens
            if kind == "rerank":
                pairs = [
                    (int(r["index"]), float(r["relevance_score"]))
                    for r in payload["results"]
                ]
                return canonical_json(pairs), prompt_tokens, completion_tokens
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise ProtocolError(f"malformed {kind} response: {exc!r}") from exc
        raise ValueError(f"unknown endpoint kind {kind!r}")
