"""Deterministic token segmentation.

Every window, overlap, and budget in the pipeline is defined over the units
of this counter. Words and individual punctuation marks each count as one
token. Callers that want a different unit pass their own counter callable.
"""
import re

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text)


def count_tokens(text: str) -> int:
    return len(_TOKEN_RE.findall(text))


def detokenize(tokens: list[str]) -> str:
    return " ".join(tokens)
