import pytest
from hypothesis import given
from hypothesis import strategies as st

from conceptminer.align import (
    NGramSpan,
    extract_aligned_candidates,
    select_final_candidate,
    span_pair_matches,
)
from conceptminer.bootstrap import ConceptCandidate
from helpers import make_entry, toks

WORD = st.sampled_from(["a", "b", "c", "d"])


def _subseq_oracle(needle, hay):
    """Injective ordered containment by explicit index walking."""
    pos = 0
    for tok in needle:
        while pos < len(hay) and hay[pos] != tok:
            pos += 1
        if pos == len(hay):
            return False
        pos += 1
    return True


def _match_oracle(q, t):
    if not q or not t:
        return False
    return q[0] == t[0] and q[-1] == t[-1] and _subseq_oracle(q, t)


def test_span_pair_matches_examples():
    assert span_pair_matches(("a", "c"), ("a", "b", "c")) is True
    assert span_pair_matches(("a", "b", "c"), ("a", "b", "c")) is True
    assert span_pair_matches(("a", "c"), ("c", "b", "a")) is False  # endpoints
    assert span_pair_matches(("a", "b"), ("a", "x", "b", "y")) is False  # last token
    assert span_pair_matches(("a", "x", "c"), ("a", "b", "c")) is False  # containment
    assert span_pair_matches((), ("a",)) is False
    assert span_pair_matches(("a",), ()) is False


def test_span_pair_matches_injective_containment():
    # a repeated query token needs as many copies in the title span
    assert span_pair_matches(("a", "a"), ("a", "b", "a")) is True
    assert span_pair_matches(("a", "a"), ("a", "b", "c")) is False


def test_span_pair_matches_order_sensitive():
    assert span_pair_matches(("a", "b", "c"), ("a", "c", "b", "c")) is True
    assert span_pair_matches(("a", "c", "b"), ("a", "b", "c", "b")) is True
    assert span_pair_matches(("a", "c", "b"), ("a", "b", "c")) is False


@given(
    q=st.lists(WORD, min_size=1, max_size=5).map(tuple),
    t=st.lists(WORD, min_size=1, max_size=8).map(tuple),
)
def test_span_pair_matches_equals_oracle(q, t):
    assert span_pair_matches(q, t) == _match_oracle(q, t)


def _extract_oracle(entry, min_len=2, max_span=12):
    """Literal span-pair enumeration without the implementation's shortcuts."""
    q = tuple(t.surface for t in entry.query.tokens)
    out = []
    for clicked in entry.titles:
        title = tuple(t.surface for t in clicked.title_tokens)
        seen = set()
        for ti in range(len(title)):
            for tm in range(min_len, min(max_span, len(title) - ti) + 1):
                t_span = title[ti: ti + tm]
                surface = " ".join(t_span)
                if surface in seen:
                    continue
                hit = any(
                    _match_oracle(q[qi: qi + qn], t_span)
                    for qi in range(len(q))
                    for qn in range(1, min(max_span, len(q) - qi) + 1)
                )
                if hit:
                    seen.add(surface)
                    out.append(surface)
    return out


def test_extract_aligned_candidates_canonical_example():
    entry = make_entry(
        "hong-kong zombie movie",
        [("hong-kong last one zombie movie", 10)],
    )
    texts = [c.text for c in extract_aligned_candidates(entry)]
    assert "zombie movie" in texts
    assert "hong-kong last one zombie movie" in texts
    assert texts == _extract_oracle(entry)


def test_extract_aligned_candidates_min_len():
    entry = make_entry("red cars", [("red cars", 10)])
    texts = {c.text for c in extract_aligned_candidates(entry, min_len=2)}
    assert texts == {"red cars"}  # no single-token title spans


def test_extract_aligned_candidates_max_span():
    words = " ".join(f"w{i}" for i in range(6))
    entry = make_entry(words, [(words, 10)])
    texts = {c.text for c in extract_aligned_candidates(entry, max_span=3)}
    assert all(len(t.split()) <= 3 for t in texts)
    assert texts == set(_extract_oracle(entry, max_span=3))


def test_extract_aligned_candidates_dedup_per_title():
    # the same surface twice inside one title counts once; across titles twice
    entry = make_entry("a b", [("a b x a b", 5), ("a b y", 5)])
    texts = [c.text for c in extract_aligned_candidates(entry)]
    assert texts.count("a b") == 2
    assert texts == _extract_oracle(entry)


def test_extract_aligned_candidates_no_titles():
    entry = make_entry("red cars")
    assert extract_aligned_candidates(entry) == []


def test_extract_aligned_candidates_provenance():
    entry = make_entry("a b", [("a b", 5)])
    (cand,) = extract_aligned_candidates(entry)
    assert cand.source == "align"
    assert cand.provenance == "a b"


@given(
    q=st.lists(WORD, min_size=1, max_size=6),
    t1=st.lists(WORD, min_size=1, max_size=10),
    t2=st.lists(WORD, min_size=1, max_size=10),
)
def test_extract_aligned_candidates_equals_oracle(q, t1, t2):
    entry = make_entry(" ".join(q), [(" ".join(t1), 6), (" ".join(t2), 7)])
    got = [c.text for c in extract_aligned_candidates(entry)]
    assert got == _extract_oracle(entry)


def _cands(*texts):
    return [ConceptCandidate(text=t, source="align", provenance="q") for t in texts]


def test_select_final_candidate_most_frequent():
    picked = select_final_candidate(_cands("a b", "c d", "a b"))
    assert picked is not None and picked.text == "a b"


def test_select_final_candidate_tie_prefers_fewer_tokens():
    picked = select_final_candidate(_cands("a b c", "x y"))
    assert picked is not None and picked.text == "x y"


def test_select_final_candidate_tie_lexicographic():
    picked = select_final_candidate(_cands("b b", "a a"))
    assert picked is not None and picked.text == "a a"


def test_select_final_candidate_empty():
    assert select_final_candidate([]) is None


def test_ngram_span_validation():
    with pytest.raises(ValueError):
        NGramSpan(source="title", start=-1, length=1, tokens=toks("a"))
    with pytest.raises(ValueError):
        NGramSpan(source="title", start=0, length=2, tokens=toks("a"))
    span = NGramSpan(source="query", start=0, length=2, tokens=toks("a b"))
    assert span.surface == "a b"
