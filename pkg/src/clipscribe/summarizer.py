"""Document-to-title extractive summarization.

Splits the caption document into sentences, builds a cosine similarity
matrix over stop-word-filtered count vectors, ranks sentences by damped
power iteration over the induced transition graph, and extracts the top
sentence (title) or top-N sentences (summary). The shipped abstracter is an
explicitly labeled extractive fallback; true abstraction needs an external
model behind the summarize wire protocol.
"""

from __future__ import annotations

import functools
import json
import math
import re
import urllib.error
from collections import Counter
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .captioner import Transport, urllib_transport
from .errors import BackendUnreachable, BadResponse, ConfigError, EmptyDocument

DEFAULT_DAMPING = 0.85
DEFAULT_TOLERANCE = 1e-6
DEFAULT_MAX_ITERATIONS = 100

_SENTENCE_BREAK = re.compile(r"[.!?](?=\s|$)")
_TOKEN = re.compile(r"[^\W_]+")


@dataclass(frozen=True)
class Sentence:
    index: int
    raw: str
    tokens: tuple[str, ...]


@dataclass(frozen=True)
class SummarizerConfig:
    top_n: int = 3
    damping: float = DEFAULT_DAMPING
    tolerance: float = DEFAULT_TOLERANCE
    max_iterations: int = DEFAULT_MAX_ITERATIONS
    stopword_list: str | Path | None = None

    def __post_init__(self) -> None:
        if self.top_n < 1:
            raise ConfigError("top_n must be >= 1")
        if not (0.0 < self.damping < 1.0):
            raise ConfigError(f"damping must be in (0, 1), got {self.damping}")
        if self.tolerance <= 0:
            raise ConfigError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be >= 1")

    def stopwords(self) -> frozenset[str]:
        if self.stopword_list is None:
            return default_stopwords()
        return load_stopwords(self.stopword_list)


@functools.lru_cache(maxsize=1)
def default_stopwords() -> frozenset[str]:
    text = resources.files("clipscribe").joinpath("data/stopwords.txt").read_text("utf-8")
    return _parse_stopwords(text)


def load_stopwords(path: str | Path) -> frozenset[str]:
    return _parse_stopwords(Path(path).read_text(encoding="utf-8"))


def _parse_stopwords(text: str) -> frozenset[str]:
    words = set()
    for line in text.splitlines():
        word = line.strip().lower()
        if word and not word.startswith("#"):
            words.add(word)
    return frozenset(words)


def tokenize(raw: str, stopwords: Iterable[str] = frozenset()) -> list[str]:
    """Lowercase, split on non-alphanumeric runs, drop stop words."""
    stop = stopwords if isinstance(stopwords, (set, frozenset)) else set(stopwords)
    return [t for t in _TOKEN.findall(raw.lower()) if t not in stop]


def split_sentences(text: str, stopwords: Iterable[str] | None = None) -> list[Sentence]:
    """Split at '.', '!' or '?' followed by whitespace or end of text.

    Delimiters are dropped, fragments trimmed, empties discarded. The split
    is deliberately naive: "Dr. x" becomes two sentences.
    """
    stop = default_stopwords() if stopwords is None else stopwords
    sentences = []
    for fragment in _SENTENCE_BREAK.split(text):
        raw = fragment.strip()
        if raw:
            sentences.append(Sentence(len(sentences), raw, tuple(tokenize(raw, stop))))
    return sentences


def sentence_similarity(tokens_a: Sequence[str], tokens_b: Sequence[str]) -> float:
    """Cosine similarity of token count vectors; 0 when either is empty."""
    if not tokens_a or not tokens_b:
        return 0.0
    counts_a, counts_b = Counter(tokens_a), Counter(tokens_b)
    dot = sum(counts_a[w] * counts_b[w] for w in counts_a.keys() & counts_b.keys())
    # integer sums are exact, and the single sqrt keeps self-cosine at 1.0
    norm_sq = sum(v * v for v in counts_a.values()) * sum(v * v for v in counts_b.values())
    return dot / math.sqrt(norm_sq)


def build_similarity_matrix(sentences: Sequence[Sentence]) -> np.ndarray:
    """Symmetric pairwise similarity with zero diagonal."""
    n = len(sentences)
    matrix = np.zeros((n, n), dtype=np.float64)
    for i in range(n):
        for j in range(i + 1, n):
            sim = sentence_similarity(sentences[i].tokens, sentences[j].tokens)
            matrix[i, j] = matrix[j, i] = sim
    return matrix


def rank_sentences(matrix: np.ndarray, config: SummarizerConfig | None = None) -> np.ndarray:
    """Damped power iteration over the row-normalized similarity graph.

    Rows with zero sum spread uniformly over all sentences. Scores sum to 1
    and every entry is at least (1-d)/n from the teleportation term.
    """
    config = config or SummarizerConfig()
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ValueError("similarity matrix must be square")
    n = matrix.shape[0]
    if n == 0:
        raise EmptyDocument("cannot rank an empty sentence set")

    row_sums = matrix.sum(axis=1)
    transition = np.full((n, n), 1.0 / n)
    nonzero = row_sums > 0
    transition[nonzero] = matrix[nonzero] / row_sums[nonzero, None]

    d = config.damping
    scores = np.full(n, 1.0 / n)
    for _ in range(config.max_iterations):
        updated = d * (transition.T @ scores) + (1.0 - d) / n
        delta = float(np.abs(updated - scores).sum())
        scores = updated
        if delta < config.tolerance:
            break
    return scores


def title(sentences: Sequence[Sentence], scores: Sequence[float]) -> str:
    """The highest-scoring sentence verbatim; ties go to the earliest."""
    if not sentences:
        raise EmptyDocument("document has no sentences")
    if len(sentences) != len(scores):
        raise ValueError("sentences and scores differ in length")
    best = int(np.argmax(np.asarray(scores)))
    return sentences[best].raw


def extract_summary(sentences: Sequence[Sentence], scores: Sequence[float], top_n: int) -> str:
    """Top-N sentences by score, emitted in original document order."""
    if not sentences:
        raise EmptyDocument("document has no sentences")
    if top_n < 1:
        raise ConfigError("top_n must be >= 1")
    ranked = sorted(range(len(sentences)), key=lambda i: (-scores[i], i))
    chosen = sorted(ranked[: min(top_n, len(sentences))])
    return ". ".join(sentences[i].raw for i in chosen) + "."


def fallback_abstract(
    document_text: str,
    sentences: Sequence[Sentence],
    scores: Sequence[float],
    max_words: int,
) -> str:
    """Extractive stand-in for the abstractive backend.

    Picks the smallest N whose extractive summary reaches half of
    min(max_words, document word count) in words.
    """
    if not sentences:
        raise EmptyDocument("document has no sentences")
    if max_words < 1:
        raise ConfigError("max_words must be >= 1")
    target = min(max_words, len(document_text.split())) / 2.0
    summary = ""
    for n in range(1, len(sentences) + 1):
        summary = extract_summary(sentences, scores, n)
        if len(summary.split()) >= target:
            return summary
    return summary


def http_abstract(
    endpoint: str,
    document_text: str,
    max_words: int,
    timeout_ms: int = 10000,
    transport: Transport | None = None,
) -> str:
    """POST the document to `{endpoint}/v1/summarize` and return its summary."""
    if not document_text.strip():
        raise EmptyDocument("document is empty")
    transport = transport or urllib_transport
    url = endpoint.rstrip("/") + "/v1/summarize"
    body = json.dumps({"text": document_text, "max_words": int(max_words)}).encode("utf-8")
    try:
        status, response = transport(url, body, timeout_ms)
    except (urllib.error.URLError, OSError, TimeoutError) as exc:
        raise BackendUnreachable(f"{url} unreachable: {exc}") from exc
    if status != 200:
        raise BadResponse(f"summarize backend returned status {status}")
    try:
        payload = json.loads(response.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise BadResponse("summarize response is not JSON") from exc
    if not isinstance(payload, dict) or not isinstance(payload.get("summary"), str):
        raise BadResponse("summarize response lacks a string 'summary'")
    summary = payload["summary"].strip()
    if not summary:
        raise BadResponse("summarize backend returned a blank summary")
    return summary
