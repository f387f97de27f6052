"""Data model and ingestion for query logs, documents, and concept records.

Query logs arrive as tab-separated lines (query, clicked title, click count,
date); documents arrive as JSON lines with raw text that is tokenized and
sentence-split on load. All types are immutable after construction and safe
to share across threads.
"""

from __future__ import annotations

import datetime as dt
import json
import logging
import re
import unicodedata
from dataclasses import dataclass, field
from typing import Callable, Iterable, Protocol

logger = logging.getLogger(__name__)

# Closed tag sets for the bundled tagger. A real segmenter may declare its
# own schema; these are the defaults the test corpora use.
POS_TAGS = frozenset(
    {"NOUN", "PROPN", "VERB", "ADJ", "ADV", "NUM", "PRON", "DET", "ADP",
     "PART", "PUNCT", "X"}
)
NER_TAGS = frozenset({"O", "PER", "LOC", "ORG", "PROD", "MISC"})

_SENTENCE_SPLIT = re.compile(r"(?<=[.!?。？！])\s+|\n+")


class CorpusFormatError(Exception):
    """Raised for unrecoverable problems in an input file."""


@dataclass(frozen=True)
class Token:
    surface: str
    pos: str = "X"
    ner: str = "O"

    def __post_init__(self) -> None:
        if not self.surface:
            raise ValueError("token surface must be non-empty")


@dataclass(frozen=True)
class Query:
    id: str
    tokens: tuple[Token, ...]

    def __post_init__(self) -> None:
        if not self.tokens:
            raise ValueError("query must have at least one token")

    @property
    def surface(self) -> str:
        return " ".join(t.surface for t in self.tokens)


@dataclass(frozen=True)
class ClickedTitle:
    title_tokens: tuple[Token, ...]
    click_count: int
    date: dt.date

    def __post_init__(self) -> None:
        if self.click_count < 0:
            raise ValueError("click_count must be >= 0")

    @property
    def surface(self) -> str:
        return " ".join(t.surface for t in self.title_tokens)


@dataclass(frozen=True)
class QueryLogEntry:
    query: Query
    titles: tuple[ClickedTitle, ...] = ()


@dataclass(frozen=True)
class Document:
    id: str
    title: tuple[Token, ...]
    author: str
    sentences: tuple[tuple[Token, ...], ...]

    def __post_init__(self) -> None:
        if not self.title:
            raise ValueError("document title must be non-empty")

    @property
    def title_surface(self) -> str:
        return " ".join(t.surface for t in self.title)

    def iter_tokens(self) -> Iterable[Token]:
        yield from self.title
        for sent in self.sentences:
            yield from sent


class Tokenizer(Protocol):
    """Maps a raw string to tokens with POS/NER tags.

    Implementations must be deterministic, and joining the surfaces must
    reconstruct the input up to the normalization they declare.
    """

    def tokenize(self, text: str) -> list[Token]: ...


def normalize_text(text: str) -> str:
    """NFC-normalize, trim, and collapse internal whitespace."""
    return " ".join(unicodedata.normalize("NFC", text).split())


class RuleTokenizer:
    """Whitespace tokenizer with dictionary POS/NER lookup.

    A stand-in for a production segmenter so the pipeline runs on plain
    English test corpora. Unknown words default to NOUN/O, which matches
    how the synthetic corpora are built (content words are noun-like).
    """

    def __init__(
        self,
        pos_lexicon: dict[str, str] | None = None,
        ner_lexicon: dict[str, str] | None = None,
        default_pos: str = "NOUN",
        default_ner: str = "O",
    ) -> None:
        self.pos_lexicon = dict(pos_lexicon or {})
        self.ner_lexicon = dict(ner_lexicon or {})
        if default_pos not in POS_TAGS:
            raise ValueError(f"unknown default POS tag {default_pos!r}")
        if default_ner not in NER_TAGS:
            raise ValueError(f"unknown default NER tag {default_ner!r}")
        self.default_pos = default_pos
        self.default_ner = default_ner

    def tokenize(self, text: str) -> list[Token]:
        tokens = []
        for word in normalize_text(text).split():
            pos = self.pos_lexicon.get(word.lower(), self.default_pos)
            ner = self.ner_lexicon.get(word.lower(), self.default_ner)
            tokens.append(Token(word, pos, ner))
        return tokens


def split_sentences(text: str) -> list[str]:
    parts = [p.strip() for p in _SENTENCE_SPLIT.split(text)]
    return [p for p in parts if p]


def load_query_logs(
    path: str,
    min_clicks: int = 5,
    window_days: int = 30,
    today: dt.date | None = None,
    tokenizer: Tokenizer | None = None,
) -> list[QueryLogEntry]:
    """Parse a query log file, grouping lines by normalized query string.

    Titles survive only with click_count strictly greater than min_clicks
    and a date within window_days of today (boundary day inclusive).
    Malformed lines are skipped with a logged line number; an unreadable
    file raises.
    """
    if today is None:
        today = dt.date.today()
    tok = tokenizer or RuleTokenizer()
    grouped: dict[str, list[ClickedTitle]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 4:
                logger.warning("query log %s line %d: expected 4 fields, got %d",
                               path, lineno, len(fields))
                continue
            raw_query, raw_title, raw_count, raw_date = fields
            query_key = normalize_text(raw_query)
            if not query_key:
                logger.warning("query log %s line %d: empty query", path, lineno)
                continue
            try:
                count = int(raw_count)
                date = dt.date.fromisoformat(raw_date.strip())
            except ValueError as exc:
                logger.warning("query log %s line %d: %s", path, lineno, exc)
                continue
            titles = grouped.setdefault(query_key, [])
            title_text = normalize_text(raw_title)
            if not title_text:
                continue  # query-only line
            age = (today - date).days
            if count > min_clicks and 0 <= age <= window_days:
                titles.append(ClickedTitle(tuple(tok.tokenize(title_text)), count, date))
    entries = []
    for query_key, titles in grouped.items():
        query = Query(id=query_key, tokens=tuple(tok.tokenize(query_key)))
        entries.append(QueryLogEntry(query=query, titles=tuple(titles)))
    return entries


def write_query_logs(entries: Iterable[QueryLogEntry], path: str) -> None:
    """Inverse of load_query_logs (titles re-pass any filter they passed before)."""
    with open(path, "w", encoding="utf-8") as fh:
        for entry in entries:
            if not entry.titles:
                fh.write(f"{entry.query.surface}\t\t0\t1970-01-01\n")
            for title in entry.titles:
                fh.write(
                    f"{entry.query.surface}\t{title.surface}\t"
                    f"{title.click_count}\t{title.date.isoformat()}\n"
                )


def load_documents(path: str, tokenizer: Tokenizer | None = None) -> list[Document]:
    """Load raw documents from a JSON-lines file and tokenize them.

    Records carry `id`, `title`, `author`, `content`. A duplicate id is
    fatal; a record with an empty title is skipped with a warning; a
    missing author defaults to "".
    """
    tok = tokenizer or RuleTokenizer()
    docs: list[Document] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                logger.warning("document file %s line %d: %s", path, lineno, exc)
                continue
            doc_id = str(record.get("id", ""))
            if not doc_id:
                logger.warning("document file %s line %d: missing id", path, lineno)
                continue
            if doc_id in seen:
                raise CorpusFormatError(f"duplicate document id {doc_id!r}")
            title_tokens = tok.tokenize(str(record.get("title", "")))
            if not title_tokens:
                logger.warning("document %s: empty title, skipped", doc_id)
                continue
            sentences = tuple(
                tuple(tok.tokenize(sent))
                for sent in split_sentences(str(record.get("content", "")))
                if tok.tokenize(sent)
            )
            docs.append(
                Document(
                    id=doc_id,
                    title=tuple(title_tokens),
                    author=str(record.get("author", "")),
                    sentences=sentences,
                )
            )
            seen.add(doc_id)
    return docs


def _token_to_triple(t: Token) -> list[str]:
    return [t.surface, t.pos, t.ner]


def _triple_to_token(raw: list[str]) -> Token:
    return Token(raw[0], raw[1], raw[2])


def save_documents(docs: Iterable[Document], path: str) -> None:
    """Full-fidelity persistence (keeps POS/NER, unlike the raw ingest format)."""
    with open(path, "w", encoding="utf-8") as fh:
        for d in docs:
            record = {
                "id": d.id,
                "title": [_token_to_triple(t) for t in d.title],
                "author": d.author,
                "sentences": [[_token_to_triple(t) for t in s] for s in d.sentences],
            }
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def load_saved_documents(path: str) -> list[Document]:
    docs = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            record = json.loads(line)
            docs.append(
                Document(
                    id=record["id"],
                    title=tuple(_triple_to_token(t) for t in record["title"]),
                    author=record["author"],
                    sentences=tuple(
                        tuple(_triple_to_token(t) for t in s)
                        for s in record["sentences"]
                    ),
                )
            )
    return docs


def write_concept_records(
    records: Iterable[tuple[str, str, float, str]], path: str
) -> None:
    """Write `concept_text <TAB> source <TAB> score <TAB> provenance_query_id` lines."""
    with open(path, "w", encoding="utf-8") as fh:
        for text, source, score, provenance in records:
            fh.write(f"{text}\t{source}\t{score:.6f}\t{provenance}\n")


def read_concept_records(path: str) -> list[tuple[str, str, float, str]]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 4:
                logger.warning("concept file %s line %d: expected 4 fields", path, lineno)
                continue
            out.append((fields[0], fields[1], float(fields[2]), fields[3]))
    return out
