"""Caption-quality scoring: BLEU and CIDEr.

Standard BLEU (clipped n-gram precision, geometric mean, brevity penalty,
no smoothing) and plain CIDEr (TF-IDF n-gram cosine consensus, no length
penalty, no x10 rescaling, values in [0, 1]). Metric tokenization keeps
stop words; removing them would silently change scores.
"""

from __future__ import annotations

import math
from collections import Counter
from typing import Mapping, Sequence

from .errors import CorpusTooSmall, EmptyCandidate, EmptyReferences
from .summarizer import tokenize

DEFAULT_MAX_N = 4

Tokens = Sequence[str]
Ngram = tuple[str, ...]


def metric_tokenize(text: str) -> list[str]:
    """Summarizer tokenization without stop-word removal."""
    return tokenize(text, frozenset())


def ngram_counts(tokens: Tokens, n: int) -> Counter[Ngram]:
    """Multiset of contiguous n-grams; empty when the caption is too short."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu(candidate: Tokens, references: Sequence[Tokens], max_n: int = DEFAULT_MAX_N) -> float:
    """Corpus-free sentence BLEU in [0, 1]; any zero precision gives 0."""
    if not candidate:
        raise EmptyCandidate("BLEU candidate is empty")
    refs = [list(r) for r in references]
    if not refs or all(not r for r in refs):
        raise EmptyReferences("BLEU needs at least one non-empty reference")

    log_precision_sum = 0.0
    for n in range(1, max_n + 1):
        counts = ngram_counts(candidate, n)
        total = sum(counts.values())
        if total == 0:
            return 0.0
        max_ref_counts: Counter[Ngram] = Counter()
        for ref in refs:
            for gram, count in ngram_counts(ref, n).items():
                if count > max_ref_counts[gram]:
                    max_ref_counts[gram] = count
        clipped = sum(min(count, max_ref_counts[gram]) for gram, count in counts.items())
        if clipped == 0:
            return 0.0
        log_precision_sum += math.log(clipped / total) / max_n

    c = len(candidate)
    r = min((len(ref) for ref in refs), key=lambda length: (abs(length - c), length))
    brevity = 1.0 if c > r else math.exp(1.0 - r / c)
    return brevity * math.exp(log_precision_sum)


def _tfidf_vector(tokens: Tokens, n: int, idf: Mapping[Ngram, float]) -> dict[Ngram, float]:
    return {gram: tf * idf[gram] for gram, tf in ngram_counts(tokens, n).items()}


def _cosine(a: Mapping[Ngram, float], b: Mapping[Ngram, float]) -> float:
    # fsum keeps results independent of hash-randomized dict iteration order
    dot = math.fsum(a[g] * b[g] for g in a.keys() & b.keys())
    norm_sq_a = math.fsum(v * v for v in a.values())
    norm_sq_b = math.fsum(v * v for v in b.values())
    if norm_sq_a == 0.0 or norm_sq_b == 0.0:
        return 0.0
    return dot / math.sqrt(norm_sq_a * norm_sq_b)


def cider(
    candidates: Mapping[str, Tokens],
    references: Mapping[str, Sequence[Tokens]],
    max_n: int = DEFAULT_MAX_N,
) -> tuple[dict[str, float], float]:
    """Per-item CIDEr scores and their corpus mean.

    IDF is computed over the reference corpus: idf(g) = ln(items) -
    ln(max(1, items whose references contain g)), so n-grams present in every
    item's references contribute nothing.
    """
    num_items = len(references)
    if num_items < 2:
        raise CorpusTooSmall("CIDEr IDF needs a corpus of at least 2 items")
    if not candidates:
        raise EmptyCandidate("no candidates to score")
    for item_id, refs in references.items():
        if not refs or all(not r for r in refs):
            raise EmptyReferences(f"item {item_id!r} has no non-empty reference")
    for item_id, cand in candidates.items():
        if item_id not in references:
            raise EmptyReferences(f"candidate item {item_id!r} has no reference set")
        if not cand:
            raise EmptyCandidate(f"candidate for item {item_id!r} is empty")

    log_items = math.log(num_items)
    idf_per_n: list[dict[Ngram, float]] = []
    for n in range(1, max_n + 1):
        doc_freq: Counter[Ngram] = Counter()
        for refs in references.values():
            grams = set()
            for ref in refs:
                grams.update(ngram_counts(ref, n).keys())
            doc_freq.update(grams)
        idf_per_n.append(
            {gram: log_items - math.log(max(1, df)) for gram, df in doc_freq.items()}
        )

    class _Idf(dict):
        # unseen n-grams get the maximal idf ln(items)
        def __missing__(self, gram):
            return log_items

    per_item: dict[str, float] = {}
    for item_id, cand in candidates.items():
        refs = references[item_id]
        order_scores = []
        for n in range(1, max_n + 1):
            idf = _Idf(idf_per_n[n - 1])
            cand_vec = _tfidf_vector(cand, n, idf)
            cos_sum = sum(_cosine(cand_vec, _tfidf_vector(ref, n, idf)) for ref in refs)
            order_scores.append(cos_sum / len(refs))
        per_item[item_id] = sum(order_scores) / max_n

    mean = sum(per_item.values()) / len(per_item)
    return per_item, mean
