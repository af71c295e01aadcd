"""Deterministic scripted model endpoints.

A local HTTP server that speaks the same wire protocol as the real model
endpoints but computes every reply from the request text alone, so that
cassettes can be recorded (and demos run) with no external services:

* embeddings are hashed bag-of-words vectors, so texts sharing rare tokens
  score high cosine similarity;
* extraction finds multiword capitalized runs as entities and in-sentence
  pairs as relations;
* the router report applies the same heuristics the fallback path uses;
* reasoning scans the provided context for "<key> equals <value>" facts and
  answers the value whose key appears in the question, or the abstention
  phrase when nothing matches.

A /control endpoint injects latency or failures for fault and concurrency
tests; /stats reports observed in-flight maxima.
"""
from __future__ import annotations

import hashlib
import json
import re
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

from .prompts import ABSTAIN_PHRASE
from .router import heuristic_features
from .tokens import count_tokens, tokenize

_ENTITY_RUN = re.compile(r"\b[A-Z][a-z]+(?: [A-Z][a-z0-9]+)+\b")
_FACT = re.compile(r"\b([A-Za-z_][\w-]*) equals ([^\s.,;]+)")


def bow_vector(text: str, dim: int, cache: dict | None = None) -> list[float]:
    """Hashed bag-of-words embedding, unit-normalized, fully deterministic."""
    total = np.zeros(dim, dtype=np.float64)
    for token in tokenize(text.casefold()):
        vec = None if cache is None else cache.get(token)
        if vec is None:
            seed = int.from_bytes(
                hashlib.sha256(token.encode("utf-8")).digest()[:8], "big"
            )
            vec = np.random.default_rng(seed).standard_normal(dim)
            if cache is not None:
                cache[token] = vec
        total += vec
    norm = float(np.linalg.norm(total))
    if norm == 0.0:
        total[0] = 1.0
        norm = 1.0
    return (total / norm).tolist()


def scripted_extraction(passage: str) -> str:
    """Entities are capitalized runs; consecutive pairs in a sentence relate."""
    lines: list[str] = []
    seen_entities: list[str] = []
    for sentence in re.split(r"(?<=[.!?])\s+", passage):
        names = _ENTITY_RUN.findall(sentence)
        for name in names:
            if name not in seen_entities:
                seen_entities.append(name)
                lines.append(
                    f"entity<|>{name}<|>concept<|>{name} appears in: "
                    f"{sentence.strip()[:120]}"
                )
        for head, tail in zip(names, names[1:]):
            between = sentence.split(head, 1)[-1].split(tail, 1)[0]
            verbs = [w for w in between.split() if w.isalpha() and w.islower()]
            predicate = verbs[0] if verbs else "related_to"
            lines.append(
                f"relation<|>{head}<|>{tail}<|>{predicate}<|>"
                f"{sentence.strip()[:120]}"
            )
    return "\n".join(lines)


def scripted_feature_report(query: str) -> str:
    f = heuristic_features(query)
    return "\n".join(
        [
            f"intent: {f.intent}",
            f"entities: {f.entity_count}",
            f"visual_refs: {f.visual_ref_count}",
            f"constraints: {f.constraint_count}",
            f"cross_chunk: {'yes' if f.needs_cross_chunk else 'no'}",
            f"multi_step: {'yes' if f.needs_multi_step else 'no'}",
        ]
    )


def scripted_decomposition(query: str) -> str:
    parts = [p.strip(" ?.") for p in re.split(r"\band\b|;", query) if p.strip(" ?.")]
    return "\n".join(f"{p}?" for p in parts[:4])


def scripted_reasoning(user_text: str) -> str:
    head, sep, question = user_text.rpartition("Question:")
    context = head if sep else ""
    question = question.casefold()
    for key, value in _FACT.findall(context):
        if key.casefold() in question:
            return value
    return ABSTAIN_PHRASE


def scripted_description(user_text: str, image_payloads: list[str]) -> str:
    sig = hashlib.sha256("".join(image_payloads).encode("utf-8")).hexdigest()[:10]
    caption = ""
    for line in user_text.splitlines():
        if line.startswith("Caption:"):
            caption = line.partition(":")[2].strip()
    return f"Structured view (sig {sig}) of {caption or 'the asset'}: {user_text[:100]}"


class _State:
    def __init__(self, dim: int):
        self.dim = dim
        self.latency = 0.0
        self.fail_next: dict[str, int] = {}
        self.lock = threading.Lock()
        self.in_flight = 0
        self.max_in_flight = 0
        self.calls: dict[str, int] = {}
        self.token_cache: dict[str, np.ndarray] = {}

    def enter(self, path: str) -> None:
        with self.lock:
            self.in_flight += 1
            self.max_in_flight = max(self.max_in_flight, self.in_flight)
            self.calls[path] = self.calls.get(path, 0) + 1

    def leave(self) -> None:
        with self.lock:
            self.in_flight -= 1

    def should_fail(self, path: str) -> bool:
        with self.lock:
            remaining = self.fail_next.get(path, 0)
            if remaining > 0:
                self.fail_next[path] = remaining - 1
                return True
            return False


def _message_texts(messages: list[dict]) -> tuple[str, str, list[str]]:
    """(system_text, user_text, image_payloads) from a messages array."""
    system, user, images = "", "", []
    for msg in messages:
        content = msg.get("content", "")
        if isinstance(content, list):
            text = " ".join(
                part.get("text", "") for part in content if part.get("type") == "text"
            )
            images.extend(
                part["image_url"]["url"]
                for part in content
                if part.get("type") == "image_url"
            )
        else:
            text = str(content)
        if msg.get("role") == "system":
            system = f"{system}\n{text}".strip()
        else:
            user = f"{user}\n{text}".strip()
    return system, user, images


class _Handler(BaseHTTPRequestHandler):
    state: _State  # set by server factory

    def log_message(self, *_args):  # keep test output clean
        pass

    def _read_body(self) -> dict:
        length = int(self.headers.get("Content-Length", 0))
        return json.loads(self.rfile.read(length) or b"{}")

    def _send(self, status: int, payload: dict) -> None:
        raw = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(raw)))
        self.end_headers()
        self.wfile.write(raw)

    def do_POST(self):  # noqa: N802 (http.server naming)
        state = self.state
        body = self._read_body()
        if self.path.endswith("/control"):
            with state.lock:
                state.latency = float(body.get("latency", state.latency))
                for path, n in body.get("fail", {}).items():
                    state.fail_next[path] = int(n)
                if body.get("reset_stats"):
                    state.max_in_flight = 0
                    state.calls = {}
            self._send(200, {"ok": True})
            return
        if self.path.endswith("/stats"):
            with state.lock:
                self._send(
                    200,
                    {
                        "max_in_flight": state.max_in_flight,
                        "calls": dict(state.calls),
                    },
                )
            return

        state.enter(self.path)
        try:
            if state.latency > 0:
                time.sleep(state.latency)
            if state.should_fail(self.path):
                self._send(500, {"error": "injected failure"})
                return
            if self.path.endswith("/chat/completions"):
                self._send(200, self._chat(body))
            elif self.path.endswith("/embeddings"):
                self._send(200, self._embeddings(body))
            elif self.path.endswith("/rerank"):
                self._send(200, self._rerank(body))
            else:
                self._send(404, {"error": f"unknown path {self.path}"})
        finally:
            state.leave()

    def _chat(self, body: dict) -> dict:
        system, user, images = _message_texts(body.get("messages", []))
        query = user.partition("Question:")[2].strip()
        if "entity<|>" in system:
            reply = scripted_extraction(user)
        elif "report its structure" in system:
            reply = scripted_feature_report(query or user)
        elif "self-contained sub-questions" in system:
            reply = scripted_decomposition(query or user)
        elif "describe document assets" in system.casefold():
            reply = scripted_description(user, images)
        else:
            reply = scripted_reasoning(user)
        prompt_tokens = count_tokens(system) + count_tokens(user) + 16 * len(images)
        return {
            "choices": [{"message": {"role": "assistant", "content": reply}}],
            "usage": {
                "prompt_tokens": prompt_tokens,
                "completion_tokens": count_tokens(reply),
            },
            "model": body.get("model", "scripted"),
        }

    def _embeddings(self, body: dict) -> dict:
        inputs = body.get("input", [])
        data = [
            {
                "index": i,
                "embedding": bow_vector(text, self.state.dim, self.state.token_cache),
            }
            for i, text in enumerate(inputs)
        ]
        total = sum(count_tokens(t) for t in inputs)
        return {
            "data": data,
            "usage": {"prompt_tokens": total, "completion_tokens": 0},
            "model": body.get("model", "scripted"),
        }

    def _rerank(self, body: dict) -> dict:
        query_tokens = set(tokenize(body.get("query", "").casefold()))
        results = []
        for i, doc in enumerate(body.get("documents", [])):
            doc_tokens = set(tokenize(str(doc).casefold()))
            overlap = len(query_tokens & doc_tokens)
            score = overlap / (1.0 + len(doc_tokens))
            results.append({"index": i, "relevance_score": score})
        results.sort(key=lambda r: (-r["relevance_score"], r["index"]))
        return {
            "results": results,
            "usage": {"prompt_tokens": 0, "completion_tokens": 0},
            "model": body.get("model", "scripted"),
        }


class ScriptedModelServer:
    """Threaded local server; base_url points at its /v1 prefix."""

    def __init__(self, dim: int = 1024, port: int = 0):
        state = _State(dim)
        handler = type("BoundHandler", (_Handler,), {"state": state})
        self._server = ThreadingHTTPServer(("127.0.0.1", port), handler)
        self._server.daemon_threads = True
        self.state = state
        self._thread: threading.Thread | None = None

    @property
    def base_url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}/v1"

    def start(self) -> "ScriptedModelServer":
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)

    def control(self, **kwargs) -> None:
        import httpx

        httpx.post(self.base_url + "/control", json=kwargs, timeout=10)

    def stats(self) -> dict:
        import httpx

        return httpx.post(self.base_url + "/stats", json={}, timeout=10).json()
