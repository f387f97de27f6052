"""Small constructors shared across test modules."""

from __future__ import annotations

import datetime as dt

from conceptminer.corpus import ClickedTitle, Document, Query, QueryLogEntry, Token

TODAY = dt.date(2026, 1, 15)


def T(surface: str, pos: str = "NOUN", ner: str = "O") -> Token:
    return Token(surface, pos, ner)


def toks(text: str, pos_map: dict[str, str] | None = None) -> tuple[Token, ...]:
    pos_map = pos_map or {}
    return tuple(T(w, pos_map.get(w, "NOUN")) for w in text.split())


def make_query(text: str, pos_map: dict[str, str] | None = None) -> Query:
    return Query(id=text, tokens=toks(text, pos_map))


def make_entry(
    query: str,
    titles: list[tuple[str, int]] | None = None,
    date: dt.date = TODAY,
    pos_map: dict[str, str] | None = None,
) -> QueryLogEntry:
    clicked = tuple(
        ClickedTitle(toks(t, pos_map), clicks, date) for t, clicks in (titles or [])
    )
    return QueryLogEntry(query=make_query(query, pos_map), titles=clicked)


def make_doc(
    doc_id: str,
    title: str,
    sentences: list[str] = (),
    author: str = "",
    pos_map: dict[str, str] | None = None,
) -> Document:
    return Document(
        id=doc_id,
        title=toks(title, pos_map),
        author=author,
        sentences=tuple(toks(s, pos_map) for s in sentences),
    )
