"""Three-layer topic-concept-instance taxonomy.

The graph is a layered DAG: edges run topic->concept or concept->instance
only, which the mutation path enforces together with endpoint existence.
Instance discovery decomposes a concept into modifier + head and searches
logs for the modifier followed by a fresh noun run; topic linking counts
tagged documents per topic. The topic classifier is a linear softmax layer
over pooled word embeddings (max pooling for title and author, mean
pooling for content).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .corpus import Document, QueryLogEntry, Token, normalize_text
from .embeddings import EmbeddingProvider
from .tagger import ConceptIndex, CooccurrenceStats, TaggedDocument, p_concept_given_instance

logger = logging.getLogger(__name__)

KINDS = ("topic", "concept", "instance")
_CHILD_KIND = {"topic": "concept", "concept": "instance"}
NOUN_LIKE = frozenset({"NOUN", "PROPN", "NUM"})


class TaxonomyError(Exception):
    def __init__(self, code: str, message: str) -> None:
        super().__init__(message)
        self.code = code


@dataclass(frozen=True)
class TaxNode:
    kind: str
    text: str

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown node kind {self.kind!r}")
        if not self.text:
            raise ValueError("node text must be non-empty")

    @property
    def id(self) -> str:
        return f"{self.kind}:{self.text}"


@dataclass(frozen=True)
class TaxEdge:
    parent: str  # node id
    child: str  # node id
    confidence: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError("confidence must lie in [0,1]")


class TaxonomyGraph:
    """Single-writer layered DAG with adjacency in both directions."""

    def __init__(self, topics: Iterable[str] = ()) -> None:
        self.nodes: dict[str, TaxNode] = {}
        self.children: dict[str, dict[str, TaxEdge]] = {}
        self.parents: dict[str, dict[str, TaxEdge]] = {}
        for topic in topics:
            self.add_node(TaxNode(kind="topic", text=normalize_text(topic)))

    def add_node(self, node: TaxNode) -> TaxNode:
        existing = self.nodes.get(node.id)
        if existing is not None:
            return existing
        self.nodes[node.id] = node
        self.children[node.id] = {}
        self.parents[node.id] = {}
        return node

    def add_edge(self, edge: TaxEdge) -> "TaxonomyGraph":
        parent = self.nodes.get(edge.parent)
        child = self.nodes.get(edge.child)
        if parent is None or child is None:
            raise TaxonomyError("dangling_endpoint",
                                f"edge {edge.parent} -> {edge.child} references a missing node")
        if _CHILD_KIND.get(parent.kind) != child.kind:
            raise TaxonomyError(
                "layer_violation",
                f"{parent.kind} -> {child.kind} violates the layer rule",
            )
        if edge.parent in self._reachable_from(edge.child):
            # unreachable under the layer rule, kept as a structural guard
            raise TaxonomyError("cycle", f"edge {edge.parent} -> {edge.child} closes a cycle")
        current = self.children[edge.parent].get(edge.child)
        if current is None or edge.confidence > current.confidence:
            self.children[edge.parent][edge.child] = edge
            self.parents[edge.child][edge.parent] = edge
        return self

    def _reachable_from(self, start: str) -> set[str]:
        seen = {start}
        stack = [start]
        while stack:
            cur = stack.pop()
            for nxt in self.children.get(cur, {}):
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        return seen

    def validate(self) -> None:
        """Topological sort plus a full layer check; raises on violation."""
        indeg = {nid: len(self.parents[nid]) for nid in self.nodes}
        queue = [nid for nid, d in indeg.items() if d == 0]
        visited = 0
        while queue:
            nid = queue.pop()
            visited += 1
            for child_id, edge in self.children[nid].items():
                parent_kind = self.nodes[nid].kind
                child_kind = self.nodes[child_id].kind
                if _CHILD_KIND.get(parent_kind) != child_kind:
                    raise TaxonomyError("layer_violation",
                                        f"{parent_kind} -> {child_kind}")
                indeg[child_id] -= 1
                if indeg[child_id] == 0:
                    queue.append(child_id)
        if visited != len(self.nodes):
            raise TaxonomyError("cycle", "graph contains a cycle")

    def concepts_of_instance(self, instance: str) -> list[str]:
        nid = f"instance:{instance}"
        return sorted(
            self.nodes[pid].text for pid in self.parents.get(nid, {})
        )

    def instance_vocabulary(self) -> list[str]:
        return sorted(n.text for n in self.nodes.values() if n.kind == "instance")

    def concept_parent_map(self) -> dict[str, list[str]]:
        """instance -> concepts, the shape the matching tagger consumes."""
        return {
            inst: self.concepts_of_instance(inst)
            for inst in self.instance_vocabulary()
        }


# ---------------------------------------------------------------------------
# concept-instance discovery


def decompose_concept(tokens: Sequence[Token]) -> tuple[tuple[Token, ...], tuple[Token, ...]]:
    """(modifier, head): head is the maximal trailing noun-like run."""
    split = len(tokens)
    while split > 0 and tokens[split - 1].pos in NOUN_LIKE:
        split -= 1
    return tuple(tokens[:split]), tuple(tokens[split:])


def _noun_run_after(tokens: Sequence[Token], start: int) -> tuple[str, ...]:
    run = []
    for tok in tokens[start:]:
        if tok.pos in NOUN_LIKE:
            run.append(tok.surface)
        else:
            break
    return tuple(run)


def discover_instances(
    concept_tokens: Sequence[Token],
    logs: Sequence[QueryLogEntry],
    stats: CooccurrenceStats,
    index: ConceptIndex,
    threshold: float = 0.5,
) -> list[tuple[str, float]]:
    """Instances for a concept via modifier+X occurrences in queries/titles.

    X is the maximal noun-like run following the modifier; the concept's
    own head is skipped. Confidence is p(concept|X) over X's corpus-wide
    context distribution; only strictly-above-threshold candidates stay.
    """
    modifier, head = decompose_concept(concept_tokens)
    if not modifier:
        return []
    concept_text = " ".join(t.surface for t in concept_tokens)
    head_text = " ".join(t.surface for t in head)
    mod_surfaces = [t.surface for t in modifier]

    candidates: set[str] = set()
    token_seqs: list[tuple[Token, ...]] = []
    for entry in logs:
        token_seqs.append(entry.query.tokens)
        for title in entry.titles:
            token_seqs.append(title.title_tokens)
    for tokens in token_seqs:
        surfaces = [t.surface for t in tokens]
        for i in range(len(surfaces) - len(mod_surfaces) + 1):
            if surfaces[i: i + len(mod_surfaces)] != mod_surfaces:
                continue
            run = _noun_run_after(tokens, i + len(mod_surfaces))
            if run:
                text = " ".join(run)
                if text != head_text:
                    candidates.add(text)

    out = []
    for cand in sorted(candidates):
        context = stats.context_of(cand)
        conf = p_concept_given_instance(
            concept_text, cand, stats, index, context.keys()
        )
        if conf > threshold:
            out.append((cand, conf))
    out.sort(key=lambda kv: (-kv[1], kv[0]))
    return out


def import_instance_pairs(path: str) -> list[tuple[str, str]]:
    """`concept <TAB> instance` lines; malformed lines are skipped, not fatal."""
    pairs: list[tuple[str, str]] = []
    seen: set[tuple[str, str]] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 2 or not fields[0].strip() or not fields[1].strip():
                logger.warning("instance pair file %s line %d: malformed, skipped",
                               path, lineno)
                continue
            pair = (normalize_text(fields[0]), normalize_text(fields[1]))
            if pair not in seen:
                seen.add(pair)
                pairs.append(pair)
    return pairs


def attach_instance_pairs(
    graph: TaxonomyGraph, pairs: Sequence[tuple[str, str]], confidence: float = 1.0
) -> TaxonomyGraph:
    """Attach imported pairs; unknown concepts are auto-created with a warning."""
    for concept, instance in pairs:
        cid = f"concept:{concept}"
        if cid not in graph.nodes:
            logger.warning("imported pair references unknown concept %r; node created",
                           concept)
            graph.add_node(TaxNode(kind="concept", text=concept))
        graph.add_node(TaxNode(kind="instance", text=instance))
        graph.add_edge(TaxEdge(parent=cid, child=f"instance:{instance}",
                               confidence=confidence))
    return graph


# ---------------------------------------------------------------------------
# topic classification


@dataclass
class TopicClassifier:
    topics: tuple[str, ...]
    weights: np.ndarray  # (n_topics, 3*dim)
    bias: np.ndarray  # (n_topics,)
    dim: int


def pooled_document_vector(
    doc: Document, emb: EmbeddingProvider
) -> tuple[np.ndarray, bool]:
    """Concat(max-pool title, max-pool author, mean-pool content).

    Returns (vector, any_in_vocab). Sections with no in-vocabulary token
    contribute zeros.
    """
    dim = emb.dimension

    def collect(words: Iterable[str]) -> list[np.ndarray]:
        vecs = []
        for w in words:
            v = emb.vector(w)
            if v is not None:
                vecs.append(v)
        return vecs

    title_vecs = collect(t.surface for t in doc.title)
    author_vecs = collect(normalize_text(doc.author).split())
    content_vecs = collect(t.surface for s in doc.sentences for t in s)

    title_pool = np.max(title_vecs, axis=0) if title_vecs else np.zeros(dim)
    author_pool = np.max(author_vecs, axis=0) if author_vecs else np.zeros(dim)
    content_pool = np.mean(content_vecs, axis=0) if content_vecs else np.zeros(dim)
    any_hit = bool(title_vecs or author_vecs or content_vecs)
    return np.concatenate([title_pool, author_pool, content_pool]), any_hit


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    ez = np.exp(z)
    return ez / ez.sum(axis=-1, keepdims=True)


def train_topic_classifier(
    labeled: Sequence[tuple[Document, str]],
    emb: EmbeddingProvider,
    topics: Sequence[str],
    l2: float = 1e-3,
    epochs: int = 300,
    lr: float = 0.5,
) -> TopicClassifier:
    """Full-batch softmax regression over pooled vectors, zero init."""
    if not labeled:
        raise ValueError("labeled data must be non-empty")
    topic_index = {t: i for i, t in enumerate(topics)}
    xs = []
    ys = []
    for doc, topic in labeled:
        if topic not in topic_index:
            raise ValueError(f"document {doc.id} labeled with unknown topic {topic!r}")
        vec, _ = pooled_document_vector(doc, emb)
        xs.append(vec)
        ys.append(topic_index[topic])
    x = np.asarray(xs)
    y = np.asarray(ys)
    n, d = x.shape
    k = len(topics)
    w = np.zeros((k, d))
    b = np.zeros(k)
    onehot = np.zeros((n, k))
    onehot[np.arange(n), y] = 1.0
    for _ in range(epochs):
        probs = _softmax(x @ w.T + b)
        err = onehot - probs  # (n, k)
        grad_w = err.T @ x / n - l2 * w
        grad_b = err.mean(axis=0)
        w += lr * grad_w
        b += lr * grad_b
    return TopicClassifier(topics=tuple(topics), weights=w, bias=b, dim=emb.dimension)


def classify_topic(
    clf: TopicClassifier, doc: Document, emb: EmbeddingProvider
) -> np.ndarray:
    """Probability vector over the fixed topics; all-OOV input goes uniform."""
    vec, any_hit = pooled_document_vector(doc, emb)
    if not any_hit:
        logger.warning("document %s has no in-vocabulary token; uniform topics", doc.id)
        return np.full(len(clf.topics), 1.0 / len(clf.topics))
    return _softmax(clf.weights @ vec + clf.bias)


def predict_topic(clf: TopicClassifier, doc: Document, emb: EmbeddingProvider) -> str:
    probs = classify_topic(clf, doc, emb)
    return clf.topics[int(np.argmax(probs))]


# ---------------------------------------------------------------------------
# topic-concept linking


def link_topic_concept(
    concept: str,
    tagged_docs: Sequence[tuple[TaggedDocument, str]],
    delta_t: float = 0.3,
) -> list[tuple[str, float]]:
    """p(topic|concept) = docs tagged with the concept per topic / all such docs.

    Edges only for strictly-above-threshold topics; no correlated
    documents means no edges (with a warning).
    """
    n_c = 0
    per_topic: dict[str, int] = {}
    for tagged, topic in tagged_docs:
        if any(c == concept for c, _, _ in tagged.tags):
            n_c += 1
            per_topic[topic] = per_topic.get(topic, 0) + 1
    if n_c == 0:
        logger.warning("concept %r has no correlated documents; no topic links", concept)
        return []
    out = [
        (topic, count / n_c)
        for topic, count in per_topic.items()
        if count / n_c > delta_t
    ]
    out.sort(key=lambda kv: (-kv[1], kv[0]))
    return out


# ---------------------------------------------------------------------------
# build driver and persistence


def load_topics(path: str) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        topics = [line.strip() for line in fh if line.strip()]
    return topics


def build_taxonomy(
    topics: Sequence[str],
    concepts: Sequence[str],
    concept_tokens: Mapping[str, Sequence[Token]],
    logs: Sequence[QueryLogEntry],
    stats: CooccurrenceStats,
    index: ConceptIndex,
    tagged_docs: Sequence[tuple[TaggedDocument, str]],
    instance_threshold: float = 0.5,
    delta_t: float = 0.3,
    imported_pairs: Sequence[tuple[str, str]] = (),
) -> TaxonomyGraph:
    """Assemble the full graph: nodes, discovery, imports, topic links."""
    graph = TaxonomyGraph(topics=topics)
    for concept in concepts:
        graph.add_node(TaxNode(kind="concept", text=normalize_text(concept)))
    for concept in concepts:
        tokens = concept_tokens.get(concept, ())
        for instance, conf in discover_instances(
            tokens, logs, stats, index, instance_threshold
        ):
            graph.add_node(TaxNode(kind="instance", text=instance))
            graph.add_edge(
                TaxEdge(
                    parent=f"concept:{normalize_text(concept)}",
                    child=f"instance:{instance}",
                    confidence=min(conf, 1.0),
                )
            )
    attach_instance_pairs(graph, imported_pairs)
    for concept in concepts:
        text = normalize_text(concept)
        for topic, p in link_topic_concept(text, tagged_docs, delta_t):
            graph.add_edge(
                TaxEdge(parent=f"topic:{topic}", child=f"concept:{text}",
                        confidence=min(p, 1.0))
            )
    graph.validate()
    return graph


def export_taxonomy(graph: TaxonomyGraph, path: str) -> None:
    """`parent_kind \t parent_text \t child_kind \t child_text \t confidence`."""
    rows = []
    for pid, edges in graph.children.items():
        for cid, edge in edges.items():
            parent = graph.nodes[pid]
            child = graph.nodes[cid]
            rows.append(
                (parent.kind, parent.text, child.kind, child.text, edge.confidence)
            )
    rows.sort()
    with open(path, "w", encoding="utf-8") as fh:
        for pk, pt, ck, ct, conf in rows:
            fh.write(f"{pk}\t{pt}\t{ck}\t{ct}\t{conf:.6f}\n")


def import_taxonomy(path: str) -> TaxonomyGraph:
    graph = TaxonomyGraph()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 5:
                raise ValueError(f"{path} line {lineno}: expected 5 columns")
            pk, pt, ck, ct, conf = fields
            graph.add_node(TaxNode(kind=pk, text=pt))
            graph.add_node(TaxNode(kind=ck, text=ct))
            graph.add_edge(
                TaxEdge(parent=f"{pk}:{pt}", child=f"{ck}:{ct}",
                        confidence=float(conf))
            )
    graph.validate()
    return graph
