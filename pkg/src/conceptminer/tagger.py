"""Concept tagging for documents: probabilistic inference plus matching.

The inference path scores p(concept | document) by chaining key-instance
weights, corpus co-occurrence probabilities of context words, and a
substring-based concept index. The matching path represents a concept by
itself concatenated with its most-clicked titles, and the document by its
title, both as TF-IDF vectors, accepting tags above a cosine threshold.
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .corpus import Document, QueryLogEntry, normalize_text
from .keyterms import KeyInstanceSet, term_occurrences

logger = logging.getLogger(__name__)


class ConceptIndex:
    """Concept set plus a lazily cached substring inverted index.

    posting(x) is the set of concepts containing x as a substring; the
    cache makes repeated context-word lookups cheap under serving load.
    """

    def __init__(self, concepts: Iterable[str]) -> None:
        self.concepts = {normalize_text(c) for c in concepts}
        self.concepts.discard("")
        self._postings: dict[str, frozenset[str]] = {}

    def __len__(self) -> int:
        return len(self.concepts)

    def posting(self, term: str) -> frozenset[str]:
        cached = self._postings.get(term)
        if cached is None:
            cached = frozenset(c for c in self.concepts if term in c)
            self._postings[term] = cached
        return cached


@dataclass(frozen=True)
class CooccurrenceStats:
    """p(x|e) per instance, from same-sentence co-occurrence over a corpus."""

    by_instance: Mapping[str, Mapping[str, float]]

    def context_of(self, instance: str) -> Mapping[str, float]:
        return self.by_instance.get(instance, {})

    def p_x_given_e(self, x: str, e: str) -> float:
        return self.by_instance.get(e, {}).get(x, 0.0)


@dataclass(frozen=True)
class EnrichedConcept:
    concept: str
    titles: tuple[str, ...]  # ordered by click count descending
    vector: Mapping[str, float]  # TF-IDF over concept + titles


@dataclass(frozen=True)
class TaggedDocument:
    doc_id: str
    tags: tuple[tuple[str, float, str], ...]  # (concept, score, method)

    def __post_init__(self) -> None:
        for concept, score, method in self.tags:
            if method not in ("inference", "matching"):
                raise ValueError(f"unknown tagging method {method!r}")
            if not 0.0 <= score <= 1.0 + 1e-9:
                raise ValueError(f"score {score} out of range for {concept!r}")


def load_stopwords(path: str) -> frozenset[str]:
    with open(path, encoding="utf-8") as fh:
        return frozenset(w.strip() for w in fh if w.strip())


def sentence_context_words(
    sentence: Sequence, instance: str, stopwords: frozenset[str]
) -> set[str]:
    """Non-stopword tokens of the sentence, minus the instance's own span."""
    surfaces = [t.surface for t in sentence]
    needle = instance.split()
    covered = set()
    for i in range(len(surfaces) - len(needle) + 1):
        if surfaces[i: i + len(needle)] == needle:
            covered.update(range(i, i + len(needle)))
    return {
        s for i, s in enumerate(surfaces)
        if i not in covered and s.lower() not in stopwords
    }


def document_context_words(
    doc: Document, instance: str, stopwords: frozenset[str]
) -> set[str]:
    """Union of context words over every sentence containing the instance."""
    out: set[str] = set()
    needle = instance.split()
    for sent in (doc.title, *doc.sentences):
        surfaces = [t.surface for t in sent]
        present = any(
            surfaces[i: i + len(needle)] == needle
            for i in range(len(surfaces) - len(needle) + 1)
        )
        if present:
            out |= sentence_context_words(sent, instance, stopwords)
    return out


def build_cooccurrence_stats(
    docs: Sequence[Document],
    instances: Iterable[str],
    stopwords: frozenset[str],
) -> CooccurrenceStats:
    """Corpus-wide counts of context words per instance, normalized per instance.

    No smoothing mass is added: unseen words keep probability zero, and
    observed distributions sum to exactly 1.
    """
    counts: dict[str, Counter] = {inst: Counter() for inst in instances}
    for doc in docs:
        for sent in (doc.title, *doc.sentences):
            surfaces = [t.surface for t in sent]
            for inst in counts:
                needle = inst.split()
                present = any(
                    surfaces[i: i + len(needle)] == needle
                    for i in range(len(surfaces) - len(needle) + 1)
                )
                if present:
                    for word in sentence_context_words(sent, inst, stopwords):
                        counts[inst][word] += 1
    by_instance: dict[str, dict[str, float]] = {}
    for inst, counter in counts.items():
        total = sum(counter.values())
        if total > 0:
            by_instance[inst] = {w: c / total for w, c in counter.items()}
    return CooccurrenceStats(by_instance=by_instance)


# ---------------------------------------------------------------------------
# inference path (probability chain)


def p_concept_given_context(c: str, x: str, index: ConceptIndex) -> float:
    """1/|C^x| when x is a substring of c, else 0."""
    if x not in c:
        return 0.0
    posting = index.posting(x)
    if not posting:
        return 0.0
    return 1.0 / len(posting)


def p_concept_given_instance(
    c: str,
    e: str,
    stats: CooccurrenceStats,
    index: ConceptIndex,
    context: Iterable[str],
) -> float:
    """Sum of p(c|x) * p(x|e) over the given (distinct) context words."""
    total = 0.0
    for x in set(context):
        px = stats.p_x_given_e(x, e)
        if px > 0.0:
            total += p_concept_given_context(c, x, index) * px
    return total


def tag_by_inference(
    doc: Document,
    keys: KeyInstanceSet,
    stats: CooccurrenceStats,
    index: ConceptIndex,
    top_m: int = 3,
    stopwords: frozenset[str] = frozenset(),
) -> list[tuple[str, float]]:
    """p(c|d) = sum_i p(c|e_i) * p(e_i|d); top_m concepts, ties lexicographic.

    Only concepts sharing a substring with some context word can score
    above zero, so scoring loops over index postings instead of the full
    concept set.
    """
    scores: dict[str, float] = {}
    for instance, weight in keys.instances:
        context = document_context_words(doc, instance, stopwords)
        for x in context:
            px = stats.p_x_given_e(x, instance)
            if px <= 0.0:
                continue
            posting = index.posting(x)
            if not posting:
                continue
            contrib = weight * px / len(posting)
            for concept in posting:
                scores[concept] = scores.get(concept, 0.0) + contrib
    ranked = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))
    return ranked[:top_m]


# ---------------------------------------------------------------------------
# matching path (TF-IDF over enriched concepts)


@dataclass(frozen=True)
class DocumentFrequencyTable:
    """Per-term document frequency over the ingested corpus."""

    n_docs: int
    df: Mapping[str, int]

    def idf(self, term: str) -> float:
        """ln(N / (1 + df)), floored at 0 so vector components stay non-negative."""
        if self.n_docs == 0:
            return 0.0
        return max(0.0, math.log(self.n_docs / (1 + self.df.get(term, 0))))


def build_df_table(docs: Sequence[Document]) -> DocumentFrequencyTable:
    df: Counter = Counter()
    for doc in docs:
        df.update({t.surface for t in doc.iter_tokens()})
    return DocumentFrequencyTable(n_docs=len(docs), df=dict(df))


def tfidf_vector(
    tokens: Sequence[str], table: DocumentFrequencyTable
) -> dict[str, float]:
    """Raw-count TF times floored IDF."""
    tf = Counter(tokens)
    out = {}
    for term, count in tf.items():
        weight = count * table.idf(term)
        if weight > 0.0:
            out[term] = weight
    return out


def sparse_cosine(a: Mapping[str, float], b: Mapping[str, float]) -> float:
    if not a or not b:
        return 0.0
    if len(b) < len(a):
        a, b = b, a
    dot = sum(v * b.get(k, 0.0) for k, v in a.items())
    na = math.sqrt(sum(v * v for v in a.values()))
    nb = math.sqrt(sum(v * v for v in b.values()))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return dot / (na * nb)


def enrich_concept(
    c: str,
    logs: Sequence[QueryLogEntry],
    n_titles: int,
    corpus_stats: DocumentFrequencyTable,
) -> EnrichedConcept:
    """Concatenate the concept with its top clicked titles, as TF-IDF.

    Eligible titles come from log entries whose query contains the concept
    as a substring (exact extraction provenance included); ranked by click
    count descending, ties by surface for determinism.
    """
    concept = normalize_text(c)
    clicked: list[tuple[int, str]] = []
    for entry in logs:
        if concept and concept in entry.query.surface:
            for title in entry.titles:
                clicked.append((title.click_count, title.surface))
    clicked.sort(key=lambda pair: (-pair[0], pair[1]))
    titles = tuple(surface for _, surface in clicked[:max(n_titles, 0)])
    tokens = concept.split()
    for title in titles:
        tokens.extend(title.split())
    return EnrichedConcept(
        concept=concept, titles=titles, vector=tfidf_vector(tokens, corpus_stats)
    )


def tag_by_matching(
    doc: Document,
    keys: KeyInstanceSet,
    concept_parents: Mapping[str, Sequence[str]],
    enriched: Mapping[str, EnrichedConcept],
    table: DocumentFrequencyTable,
    delta_u: float = 0.58,
) -> list[tuple[str, float]]:
    """Score isA-linked candidate concepts against the document title.

    concept_parents maps an instance to the concepts it belongs to (isA
    edges from the taxonomy). Acceptance is strict: cosine > delta_u. A
    candidate with no enrichment is scored from its own tokens, with a
    warning.
    """
    candidates: set[str] = set()
    for instance, _ in keys.instances:
        candidates.update(concept_parents.get(instance, ()))
    if not candidates:
        return []
    doc_vec = tfidf_vector([t.surface for t in doc.title], table)
    out = []
    for concept in sorted(candidates):
        enr = enriched.get(concept)
        if enr is None:
            logger.warning("no enrichment for concept %r; scoring concept tokens only",
                           concept)
            vec = tfidf_vector(concept.split(), table)
        else:
            vec = enr.vector
        score = sparse_cosine(vec, doc_vec)
        if score > delta_u:
            out.append((concept, score))
    out.sort(key=lambda kv: (-kv[1], kv[0]))
    return out


def tag_document(
    doc: Document,
    keys: KeyInstanceSet,
    stats: CooccurrenceStats,
    index: ConceptIndex,
    concept_parents: Mapping[str, Sequence[str]],
    enriched: Mapping[str, EnrichedConcept],
    table: DocumentFrequencyTable,
    delta_u: float = 0.58,
    top_m: int = 3,
    stopwords: frozenset[str] = frozenset(),
) -> TaggedDocument:
    """Route instances: isA-covered ones go to matching, the rest to inference.

    Tags merge deduplicated by concept; a concept produced by both paths
    keeps the matching entry. Within each path, duplicates keep the max
    score (paths themselves never emit duplicates).
    """
    covered = [
        (inst, w) for inst, w in keys.instances if concept_parents.get(inst)
    ]
    uncovered = [
        (inst, w) for inst, w in keys.instances if not concept_parents.get(inst)
    ]

    matching_tags: list[tuple[str, float]] = []
    if covered:
        matching_tags = tag_by_matching(
            doc, keys, concept_parents, enriched, table, delta_u
        )

    inference_tags: list[tuple[str, float]] = []
    if uncovered:
        total = sum(w for _, w in uncovered)
        if total > 0:
            renorm = KeyInstanceSet(
                doc_id=keys.doc_id,
                instances=tuple((i, w / total) for i, w in uncovered),
            )
            inference_tags = tag_by_inference(
                doc, renorm, stats, index, top_m, stopwords
            )

    tags: list[tuple[str, float, str]] = []
    seen: set[str] = set()
    for concept, score in matching_tags:
        if concept not in seen:
            seen.add(concept)
            tags.append((concept, score, "matching"))
    for concept, score in inference_tags:
        if concept not in seen:
            seen.add(concept)
            tags.append((concept, min(score, 1.0), "inference"))
    return TaggedDocument(doc_id=doc.id, tags=tuple(tags))


def save_tagged(tagged: Iterable[TaggedDocument], path: str) -> None:
    """`doc_id <TAB> concept <TAB> score <TAB> method` lines."""
    with open(path, "w", encoding="utf-8") as fh:
        for td in tagged:
            for concept, score, method in td.tags:
                fh.write(f"{td.doc_id}\t{concept}\t{score:.6f}\t{method}\n")


def load_tagged(path: str) -> list[TaggedDocument]:
    grouped: dict[str, list[tuple[str, float, str]]] = {}
    order: list[str] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 4:
                raise ValueError(f"{path} line {lineno}: expected 4 columns")
            doc_id, concept, score, method = fields
            if doc_id not in grouped:
                grouped[doc_id] = []
                order.append(doc_id)
            grouped[doc_id].append((concept, float(score), method))
    return [TaggedDocument(doc_id=d, tags=tuple(grouped[d])) for d in order]
