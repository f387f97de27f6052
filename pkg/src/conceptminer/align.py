"""Concept candidates from aligning query N-grams with clicked-title N-grams.

A title span is a candidate for a query span when the title span contains
every query token in the same relative order (injective subsequence match)
and the two spans agree on their first and last tokens. Alignment runs per
query-title pair; the final pick is the candidate most frequent across the
entry's titles.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

from .bootstrap import ConceptCandidate
from .corpus import QueryLogEntry, Token


@dataclass(frozen=True)
class NGramSpan:
    source: str  # "query" | "title"
    start: int
    length: int
    tokens: tuple[Token, ...]

    def __post_init__(self) -> None:
        if self.start < 0 or self.length < 1:
            raise ValueError("span must have start >= 0 and length >= 1")
        if len(self.tokens) != self.length:
            raise ValueError("token slice must match declared length")

    @property
    def surface(self) -> str:
        return " ".join(t.surface for t in self.tokens)


def _is_ordered_subsequence(needle: tuple[str, ...], hay: tuple[str, ...]) -> bool:
    """True when every needle token occurs in hay in order (injectively)."""
    it = iter(hay)
    return all(tok in it for tok in needle)


def span_pair_matches(query_span: tuple[str, ...], title_span: tuple[str, ...]) -> bool:
    """Literal alignment conditions on two token-surface spans.

    (i) the title span contains all query-span tokens as an ordered
    subsequence; (ii) the first tokens are equal and the last tokens are
    equal. Both spans must be non-empty.
    """
    if not query_span or not title_span:
        return False
    if query_span[0] != title_span[0] or query_span[-1] != title_span[-1]:
        return False
    return _is_ordered_subsequence(query_span, title_span)


def extract_aligned_candidates(
    entry: QueryLogEntry, min_len: int = 2, max_span: int = 12
) -> list[ConceptCandidate]:
    """Enumerate span pairs over each clicked title and keep matching title spans.

    Candidates are deduplicated by surface string within each title (so a
    span repeated inside one title counts once, but the same surface from
    different titles is kept once per title for downstream frequency
    counting). Title spans shorter than min_len tokens are dropped; both
    spans are capped at max_span tokens.
    """
    query_tokens = tuple(t.surface for t in entry.query.tokens)
    out: list[ConceptCandidate] = []
    for clicked in entry.titles:
        title_tokens = tuple(t.surface for t in clicked.title_tokens)
        seen_in_title: set[str] = set()
        for ti in range(len(title_tokens)):
            for tm in range(min_len, min(max_span, len(title_tokens) - ti) + 1):
                title_span = title_tokens[ti: ti + tm]
                surface = " ".join(title_span)
                if surface in seen_in_title:
                    continue
                matched = False
                for qi in range(len(query_tokens)):
                    qn_hi = min(max_span, len(query_tokens) - qi, tm)
                    for qn in range(1, qn_hi + 1):
                        if span_pair_matches(query_tokens[qi: qi + qn], title_span):
                            matched = True
                            break
                    if matched:
                        break
                if matched:
                    seen_in_title.add(surface)
                    out.append(
                        ConceptCandidate(
                            text=surface, source="align", provenance=entry.query.id
                        )
                    )
    return out


def select_final_candidate(
    candidates: list[ConceptCandidate],
) -> ConceptCandidate | None:
    """Most frequent surface across titles; ties to fewer tokens, then lexicographic."""
    if not candidates:
        return None
    counts = Counter(c.text for c in candidates)
    best = min(
        counts.items(), key=lambda kv: (-kv[1], len(kv[0].split()), kv[0])
    )[0]
    for cand in candidates:
        if cand.text == best:
            return cand
    raise AssertionError("unreachable: winner came from candidates")
