"""Key instance extraction: term scoring, TextRank re-ranking, thresholding.

Stage one ranks candidate terms by a deterministic linear scorer over five
document features (a pluggable stand-in for a learned ranker). Stage two
builds a complete embedding-similarity graph over the top K terms and
re-ranks them with a damped PageRank-style iteration, min-max normalized.
Terms above the score threshold become the document's key instances with
frequency-normalized weights.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .corpus import Document
from .embeddings import EmbeddingProvider, cosine, phrase_vector

logger = logging.getLogger(__name__)

NOUN_LIKE = frozenset({"NOUN", "PROPN", "NUM"})

TermTopicOracle = Callable[[str], str | None]  # term -> topic name


@dataclass(frozen=True)
class TermScore:
    term: str
    base_score: float
    textrank_score: float | None = None  # set only after the graph stage


@dataclass(frozen=True)
class KeyInstanceSet:
    doc_id: str
    instances: tuple[tuple[str, float], ...]  # (instance, p(e|d))

    def __post_init__(self) -> None:
        if self.instances:
            weights = [w for _, w in self.instances]
            if any(w < 0 for w in weights):
                raise ValueError("instance weights must be non-negative")
            if abs(sum(weights) - 1.0) > 1e-9:
                raise ValueError("instance weights must sum to 1")


@dataclass(frozen=True)
class TermScorerWeights:
    """Linear weights over the five term features, documented defaults."""

    topic_match: float = 1.0
    in_title: float = 2.0
    title_has_topic: float = 0.5
    freq_share: float = 1.5
    sentence_coverage: float = 1.0


DEFAULT_WEIGHTS = TermScorerWeights()


def term_occurrences(doc: Document, term: str) -> int:
    """Contiguous token-sequence occurrences of term across title + body."""
    needle = term.split()
    if not needle:
        return 0
    count = 0
    for sent in (doc.title, *doc.sentences):
        surfaces = [t.surface for t in sent]
        for i in range(len(surfaces) - len(needle) + 1):
            if surfaces[i: i + len(needle)] == needle:
                count += 1
    return count


def candidate_terms(
    doc: Document, instance_vocab: Sequence[str] | None = None
) -> list[str]:
    """Noun-like tokens plus any vocabulary instances found in the text."""
    seen: dict[str, None] = {}
    for tok in doc.iter_tokens():
        if tok.pos in NOUN_LIKE and tok.surface not in seen:
            seen[tok.surface] = None
    if instance_vocab:
        for inst in instance_vocab:
            if inst not in seen and term_occurrences(doc, inst) > 0:
                seen[inst] = None
    return list(seen)


def score_terms(
    doc: Document,
    doc_topic: str | None = None,
    term_topic: TermTopicOracle | None = None,
    instance_vocab: Sequence[str] | None = None,
    weights: TermScorerWeights = DEFAULT_WEIGHTS,
) -> list[TermScore]:
    """Score every candidate term; descending, ties lexicographic.

    Features per term: topic equal to the document topic; occurrence in
    the title; title mentioning the term's topic name; share of candidate
    occurrences in the document; fraction of sentences containing it.
    """
    terms = candidate_terms(doc, instance_vocab)
    if not terms:
        return []
    occ = {t: term_occurrences(doc, t) for t in terms}
    total_occ = sum(occ.values())
    title_surface = doc.title_surface
    n_sents = len(doc.sentences)
    scored = []
    for term in terms:
        topic = term_topic(term) if term_topic else None
        f_topic = 1.0 if topic is not None and topic == doc_topic else 0.0
        f_title = 1.0 if _contains_span(doc.title, term) else 0.0
        f_title_topic = 1.0 if topic is not None and topic in title_surface else 0.0
        f_freq = occ[term] / total_occ if total_occ else 0.0
        if n_sents:
            covered = sum(1 for s in doc.sentences if _contains_span(s, term))
            f_cover = covered / n_sents
        else:
            f_cover = 0.0
        score = (
            weights.topic_match * f_topic
            + weights.in_title * f_title
            + weights.title_has_topic * f_title_topic
            + weights.freq_share * f_freq
            + weights.sentence_coverage * f_cover
        )
        scored.append(TermScore(term=term, base_score=score))
    scored.sort(key=lambda ts: (-ts.base_score, ts.term))
    return scored


def _contains_span(tokens: Sequence, term: str) -> bool:
    needle = term.split()
    surfaces = [t.surface for t in tokens]
    return any(
        surfaces[i: i + len(needle)] == needle
        for i in range(len(surfaces) - len(needle) + 1)
    )


def similarity_graph(
    terms: Sequence[str], emb: EmbeddingProvider
) -> np.ndarray:
    """Symmetric cosine-weight matrix; negatives clamped to 0, OOV rows zero."""
    n = len(terms)
    vecs = [phrase_vector(emb, t) for t in terms]
    w = np.zeros((n, n))
    for i in range(n):
        if vecs[i] is None:
            continue
        for j in range(i + 1, n):
            if vecs[j] is None:
                continue
            sim = max(0.0, cosine(vecs[i], vecs[j]))
            w[i, j] = sim
            w[j, i] = sim
    return w


def textrank_scores(
    w: np.ndarray, damping: float = 0.85, eps: float = 1e-6, max_iters: int = 200
) -> np.ndarray:
    """Damped weighted PageRank; isolated nodes settle at 1 - damping."""
    n = w.shape[0]
    if n == 0:
        return np.zeros(0)
    scores = np.ones(n)
    deg = w.sum(axis=1)
    safe_deg = np.where(deg > 0, deg, 1.0)
    for _ in range(max_iters):
        spread = (w / safe_deg[:, None]).T @ scores  # in-flow along normalized edges
        updated = (1.0 - damping) + damping * spread
        if float(np.max(np.abs(updated - scores))) < eps:
            scores = updated
            break
        scores = updated
    return scores


def minmax_normalize(scores: np.ndarray) -> np.ndarray:
    if len(scores) == 0:
        return scores
    lo = float(scores.min())
    hi = float(scores.max())
    if hi == lo:
        return np.ones_like(scores)
    return (scores - lo) / (hi - lo)


def rerank_textrank(
    top_terms: Sequence[TermScore],
    emb: EmbeddingProvider,
    k: int = 10,
    damping: float = 0.85,
    eps: float = 1e-6,
) -> list[TermScore]:
    """Graph re-rank of the k best base-scored terms.

    Output carries textrank_score in [0,1] (min-max normalized), sorted
    descending with lexicographic tie-break.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    chosen = sorted(top_terms, key=lambda ts: (-ts.base_score, ts.term))[:k]
    if not chosen:
        return []
    terms = [ts.term for ts in chosen]
    w = similarity_graph(terms, emb)
    normalized = minmax_normalize(textrank_scores(w, damping, eps))
    out = [
        TermScore(term=ts.term, base_score=ts.base_score, textrank_score=float(s))
        for ts, s in zip(chosen, normalized)
    ]
    out.sort(key=lambda ts: (-(ts.textrank_score or 0.0), ts.term))
    return out


def extract_key_instances(
    doc: Document,
    emb: EmbeddingProvider,
    k: int = 10,
    delta_w: float = 0.5,
    doc_topic: str | None = None,
    term_topic: TermTopicOracle | None = None,
    instance_vocab: Sequence[str] | None = None,
    weights: TermScorerWeights = DEFAULT_WEIGHTS,
) -> KeyInstanceSet:
    """Full chain: score, re-rank, keep textrank_score > delta_w (strict).

    p(e|d) is the instance's occurrence count normalized over the retained
    instances.
    """
    ranked = rerank_textrank(
        score_terms(doc, doc_topic, term_topic, instance_vocab, weights),
        emb,
        k=k,
    )
    kept = [ts.term for ts in ranked if (ts.textrank_score or 0.0) > delta_w]
    if not kept:
        return KeyInstanceSet(doc_id=doc.id, instances=())
    freqs = np.asarray([max(term_occurrences(doc, t), 0) for t in kept], dtype=float)
    if freqs.sum() == 0:
        freqs = np.ones(len(kept))
    probs = freqs / freqs.sum()
    return KeyInstanceSet(
        doc_id=doc.id,
        instances=tuple((t, float(p)) for t, p in zip(kept, probs)),
    )
