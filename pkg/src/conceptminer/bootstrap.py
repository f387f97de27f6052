"""Iterative pattern-concept bootstrapping over a query set.

Patterns are single-slot templates ``prefix{X}suffix`` applied to query
surface strings. Each round: known concepts induce new patterns from the
queries that contain them, pattern stats decide which induced patterns
survive, surviving patterns extract new concepts, and the loop repeats
until a fixpoint or the iteration cap.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .corpus import Query, normalize_text

PLACEHOLDER = "{X}"


@dataclass(frozen=True)
class Pattern:
    prefix: str
    suffix: str
    origin: str = "induced"  # "seed" | "induced"

    def __post_init__(self) -> None:
        if not self.prefix and not self.suffix:
            raise ValueError("a bare placeholder is not a valid pattern")
        if PLACEHOLDER in self.prefix or PLACEHOLDER in self.suffix:
            raise ValueError("pattern must contain exactly one placeholder")

    @property
    def template(self) -> str:
        return f"{self.prefix}{PLACEHOLDER}{self.suffix}"


@dataclass(frozen=True)
class PatternStats:
    n_s: int  # already-known concepts the pattern extracts
    n_e: int  # new concepts the pattern extracts

    def __post_init__(self) -> None:
        if self.n_s < 0 or self.n_e < 0:
            raise ValueError("pattern stats must be non-negative")


@dataclass(frozen=True)
class ConceptCandidate:
    text: str
    source: str  # "bootstrap" | "align" | "crf"
    provenance: str  # query id
    accepted: bool | None = None

    def __post_init__(self) -> None:
        if not self.text:
            raise ValueError("candidate text must be non-empty")


def parse_pattern(template: str, origin: str = "seed") -> Pattern:
    """Parse a `prefix{X}suffix` template line."""
    if template.count(PLACEHOLDER) != 1:
        raise ValueError(f"pattern {template!r} must contain exactly one {PLACEHOLDER}")
    prefix, suffix = template.split(PLACEHOLDER)
    return Pattern(prefix=prefix, suffix=suffix, origin=origin)


def load_seed_patterns(path: str) -> list[Pattern]:
    patterns = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line and not line.startswith("#"):
                patterns.append(parse_pattern(line, origin="seed"))
    return patterns


def apply_pattern(pattern: Pattern, query: Query) -> ConceptCandidate | None:
    """Capture the slot text when the query surface matches the template.

    Whole-string anchored: the surface must start with the prefix and end
    with the suffix, and the capture between them must be non-empty. With
    a single anchored slot the capture is unique, which also makes it the
    longest one.
    """
    surface = query.surface
    if len(surface) <= len(pattern.prefix) + len(pattern.suffix):
        return None
    if not surface.startswith(pattern.prefix):
        return None
    if not surface.endswith(pattern.suffix):
        return None
    capture = surface[len(pattern.prefix): len(surface) - len(pattern.suffix)]
    capture = normalize_text(capture)
    if not capture:
        return None
    return ConceptCandidate(text=capture, source="bootstrap", provenance=query.id)


def extract_concepts(
    patterns: Iterable[Pattern], queries: Sequence[Query]
) -> list[ConceptCandidate]:
    """Apply every pattern to every query; dedup by (text, provenance)."""
    seen: set[tuple[str, str]] = set()
    out: list[ConceptCandidate] = []
    for pattern in patterns:
        for query in queries:
            cand = apply_pattern(pattern, query)
            if cand is None:
                continue
            key = (cand.text, cand.provenance)
            if key not in seen:
                seen.add(key)
                out.append(cand)
    return out


def pattern_stats(
    pattern: Pattern, queries: Sequence[Query], known: set[str]
) -> PatternStats:
    """Count distinct known vs. new concept strings the pattern extracts.

    Counted over distinct concept strings, not extraction events, so a
    concept that matches in many queries contributes once.
    """
    extracted: set[str] = set()
    for query in queries:
        cand = apply_pattern(pattern, query)
        if cand is not None:
            extracted.add(cand.text)
    n_s = len(extracted & known)
    return PatternStats(n_s=n_s, n_e=len(extracted) - n_s)


def induce_patterns(
    concepts: set[str], queries: Sequence[Query]
) -> list[tuple[Pattern, PatternStats]]:
    """Find the patterns left behind when known concepts are slotted out.

    Every occurrence of a known concept as a substring of a query surface
    yields one pattern (so a concept appearing twice yields two). Stats
    are computed by re-applying each induced pattern over all queries.
    """
    if not concepts:
        raise ValueError("induce_patterns requires a non-empty concept set")
    found: dict[tuple[str, str], Pattern] = {}
    for query in queries:
        surface = query.surface
        for concept in concepts:
            start = surface.find(concept)
            while start != -1:
                prefix = surface[:start]
                suffix = surface[start + len(concept):]
                if prefix or suffix:
                    key = (prefix, suffix)
                    if key not in found:
                        found[key] = Pattern(prefix=prefix, suffix=suffix)
                start = surface.find(concept, start + 1)
    results = []
    for pattern in found.values():
        results.append((pattern, pattern_stats(pattern, queries, concepts)))
    return results


def filter_pattern(
    stats: PatternStats, alpha: float = 0.6, beta: float = 0.8, delta: int = 2
) -> bool:
    """Retention test: n_e > 0, alpha < n_s/n_e < beta, n_s > delta (all strict)."""
    if alpha >= beta:
        raise ValueError("alpha must be < beta")
    if stats.n_e == 0:
        return False
    ratio = stats.n_s / stats.n_e
    return alpha < ratio < beta and stats.n_s > delta


def run_bootstrap(
    seeds: Sequence[Pattern],
    queries: Sequence[Query],
    max_iters: int = 5,
    alpha: float = 0.6,
    beta: float = 0.8,
    delta: int = 2,
) -> tuple[list[ConceptCandidate], list[Pattern]]:
    """Alternate extract / induce / filter until fixpoint or max_iters.

    Seed patterns are never filtered out. Newly discovered concepts join
    the known set only at the iteration boundary, so each round is
    order-independent. Deterministic for fixed inputs.
    """
    if not seeds:
        raise ValueError("run_bootstrap requires at least one seed pattern")
    patterns: list[Pattern] = list(seeds)
    pattern_keys = {(p.prefix, p.suffix) for p in patterns}
    candidates: dict[tuple[str, str], ConceptCandidate] = {}
    known: set[str] = set()

    for cand in extract_concepts(patterns, queries):
        candidates.setdefault((cand.text, cand.provenance), cand)
    known = {c.text for c in candidates.values()}

    for _ in range(max_iters):
        if not known:
            break
        grown = False
        for pattern, stats in induce_patterns(known, queries):
            key = (pattern.prefix, pattern.suffix)
            if key in pattern_keys:
                continue
            if filter_pattern(stats, alpha, beta, delta):
                patterns.append(pattern)
                pattern_keys.add(key)
                grown = True
        new_candidates = extract_concepts(patterns, queries)
        for cand in new_candidates:
            key = (cand.text, cand.provenance)
            if key not in candidates:
                candidates[key] = cand
                grown = True
        known = {c.text for c in candidates.values()}
        if not grown:
            break
    return list(candidates.values()), patterns
