"""HTTP tagging service: POST /tag on a preloaded model bundle.

The bundle is assembled once at startup (concept index, co-occurrence
stats, enriched concepts, taxonomy parent map, document-frequency table,
embeddings) and shared read-only across requests, so request handling is
pure computation over immutable state.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from fastapi import FastAPI
from pydantic import BaseModel

from . import __version__
from .corpus import Document, RuleTokenizer, Tokenizer, split_sentences
from .embeddings import EmbeddingProvider
from .keyterms import extract_key_instances
from .tagger import (
    ConceptIndex,
    CooccurrenceStats,
    DocumentFrequencyTable,
    EnrichedConcept,
    tag_document,
)

logger = logging.getLogger(__name__)


@dataclass
class ModelBundle:
    index: ConceptIndex
    stats: CooccurrenceStats
    concept_parents: Mapping[str, Sequence[str]]
    enriched: Mapping[str, EnrichedConcept]
    df_table: DocumentFrequencyTable
    emb: EmbeddingProvider
    stopwords: frozenset[str] = frozenset()
    tokenizer: Tokenizer = field(default_factory=RuleTokenizer)
    instance_vocab: tuple[str, ...] = ()
    top_k: int = 10
    delta_w: float = 0.5
    delta_u: float = 0.58
    top_m: int = 3
    versions: dict[str, str] = field(default_factory=dict)


class TagRequest(BaseModel):
    title: str
    content: str = ""


class Tag(BaseModel):
    concept: str
    score: float
    method: str


class TagResponse(BaseModel):
    tags: list[Tag]


def tag_raw_document(bundle: ModelBundle, doc_id: str, title: str, content: str):
    tok = bundle.tokenizer
    title_tokens = tuple(tok.tokenize(title))
    if not title_tokens:
        return None
    sentences = tuple(
        tuple(tok.tokenize(s)) for s in split_sentences(content) if tok.tokenize(s)
    )
    doc = Document(id=doc_id, title=title_tokens, author="", sentences=sentences)
    keys = extract_key_instances(
        doc,
        bundle.emb,
        k=bundle.top_k,
        delta_w=bundle.delta_w,
        instance_vocab=bundle.instance_vocab,
    )
    return tag_document(
        doc,
        keys,
        bundle.stats,
        bundle.index,
        bundle.concept_parents,
        bundle.enriched,
        bundle.df_table,
        delta_u=bundle.delta_u,
        top_m=bundle.top_m,
        stopwords=bundle.stopwords,
    )


def create_app(bundle: ModelBundle) -> FastAPI:
    app = FastAPI(title="concept tagging service")
    counter = itertools.count()

    @app.post("/tag", response_model=TagResponse)
    def tag(req: TagRequest) -> TagResponse:
        tagged = tag_raw_document(bundle, f"req-{next(counter)}", req.title, req.content)
        if tagged is None:
            return TagResponse(tags=[])
        return TagResponse(
            tags=[Tag(concept=c, score=s, method=m) for c, s, m in tagged.tags]
        )

    @app.get("/health")
    def health() -> dict:
        versions = {"service": __version__, "concepts": str(len(bundle.index))}
        versions.update(bundle.versions)
        return {"status": "ok", "versions": versions}

    return app
