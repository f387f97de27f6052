"""Evaluation metrics, benchmark loading, query rewriting, pipeline driver.

Exact match compares normalized strings; token F1 measures multiset token
overlap. The pipeline driver runs all three mining routes (bootstrap,
alignment, sequence labeling) over a query log, gates every candidate
through the discriminator, and resolves conflicts by a fixed source
priority.
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Sequence

from . import align as align_mod
from . import bootstrap as boot_mod
from . import discriminator as disc_mod
from . import seqlabel
from .bootstrap import ConceptCandidate, Pattern
from .corpus import QueryLogEntry, normalize_text

logger = logging.getLogger(__name__)

SOURCE_PRIORITY = ("crf", "align", "bootstrap")  # highest first


@dataclass(frozen=True)
class EvalSample:
    query: str
    clicked_titles: tuple[str, ...]
    gold_concept: str

    def __post_init__(self) -> None:
        if not self.gold_concept:
            raise ValueError("gold concept must be non-empty")


@dataclass(frozen=True)
class SampleRecord:
    query: str
    gold: str
    predicted: str
    exact_match: int
    f1: float


@dataclass(frozen=True)
class EvalReport:
    exact_match: float
    f1: float
    records: tuple[SampleRecord, ...]

    def __post_init__(self) -> None:
        if not (0.0 <= self.exact_match <= 1.0 and 0.0 <= self.f1 <= 1.0):
            raise ValueError("aggregate metrics must lie in [0,1]")


def exact_match(pred: str, gold: str) -> int:
    return 1 if normalize_text(pred) == normalize_text(gold) else 0


def token_f1(pred: str, gold: str) -> float:
    """Multiset token overlap F1; empty-vs-empty is 1, empty-vs-any is 0."""
    pred_tokens = Counter(normalize_text(pred).split())
    gold_tokens = Counter(normalize_text(gold).split())
    if not pred_tokens and not gold_tokens:
        return 1.0
    if not pred_tokens or not gold_tokens:
        return 0.0
    overlap = sum((pred_tokens & gold_tokens).values())
    if overlap == 0:
        return 0.0
    precision = overlap / sum(pred_tokens.values())
    recall = overlap / sum(gold_tokens.values())
    return 2 * precision * recall / (precision + recall)


def load_uccm(path: str) -> list[EvalSample]:
    """`query <TAB> title1||title2||... <TAB> gold_concept` lines."""
    samples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise ValueError(f"{path} line {lineno}: expected 3 columns")
            query, titles_joined, gold = fields
            titles = tuple(t for t in titles_joined.split("||") if t)
            samples.append(
                EvalSample(query=query, clicked_titles=titles, gold_concept=gold)
            )
    return samples


def save_uccm(samples: Sequence[EvalSample], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(f"{s.query}\t{'||'.join(s.clicked_titles)}\t{s.gold_concept}\n")


def rewrite_query(
    query: str, concept: str, instances: Sequence[str], budget: int = 10
) -> list[tuple[str, int]]:
    """Emit `query instance` strings, each with quota ceil(budget / K).

    The caller merges per-rewrite result lists, dedups, and keeps `budget`
    results overall. With no instances, the original query carries the
    full budget.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    if not instances:
        return [(query, budget)]
    quota = math.ceil(budget / len(instances))
    return [(f"{query} {inst}", quota) for inst in instances]


def evaluate_run(
    samples: Sequence[EvalSample], system: Callable[[EvalSample], str]
) -> EvalReport:
    """Average EM and F1 over samples, keeping a per-sample diff record."""
    records = []
    for sample in samples:
        pred = system(sample)
        records.append(
            SampleRecord(
                query=sample.query,
                gold=sample.gold_concept,
                predicted=pred,
                exact_match=exact_match(pred, sample.gold_concept),
                f1=token_f1(pred, sample.gold_concept),
            )
        )
    n = len(records)
    em = sum(r.exact_match for r in records) / n if n else 0.0
    f1 = sum(r.f1 for r in records) / n if n else 0.0
    return EvalReport(exact_match=em, f1=f1, records=tuple(records))


# ---------------------------------------------------------------------------
# offline mining driver


@dataclass(frozen=True)
class MiningResult:
    accepted: tuple[ConceptCandidate, ...]
    rejected: tuple[ConceptCandidate, ...]
    patterns: tuple[Pattern, ...]
    final_by_query: dict[str, ConceptCandidate]


def crf_candidate(
    model: seqlabel.CrfModel, entry: QueryLogEntry
) -> ConceptCandidate | None:
    """Per-title decodes aggregated by the most-common rule, else query decode.

    Each clicked title is decoded separately; the per-title concepts vote
    through select_final_candidate. With no titles (or no concept found in
    any title) the query's own decode is used.
    """
    source = "title" if model.uses_source_feature else None
    title_cands = []
    for title in entry.titles:
        decoded = seqlabel.decode(model, title.title_tokens, source=source)
        concept = seqlabel.extract_concept(decoded)
        if concept:
            title_cands.append(
                ConceptCandidate(text=concept, source="crf", provenance=entry.query.id)
            )
    picked = align_mod.select_final_candidate(title_cands)
    if picked is not None:
        return picked
    query_source = "query" if model.uses_source_feature else None
    decoded = seqlabel.decode(model, entry.query.tokens, source=query_source)
    concept = seqlabel.extract_concept(decoded)
    if concept:
        return ConceptCandidate(text=concept, source="crf", provenance=entry.query.id)
    return None


def mine_all(
    logs: Sequence[QueryLogEntry],
    seeds: Sequence[Pattern],
    crf_model: seqlabel.CrfModel | None,
    quality_model: disc_mod.QualityModel | None,
    topic_of: disc_mod.TopicOracle | None = None,
    max_iters: int = 5,
    alpha: float = 0.6,
    beta: float = 0.8,
    delta: int = 2,
    min_len: int = 2,
) -> MiningResult:
    """Run every mining source, gate candidates, and pick one winner per query.

    Winner resolution among accepted candidates for the same query follows
    SOURCE_PRIORITY (sequence labeling beats alignment beats bootstrap);
    within a source, candidate text ties break lexicographically. With no
    trained gate every candidate is accepted.
    """
    queries = [entry.query for entry in logs]
    boot_cands, patterns = boot_mod.run_bootstrap(
        seeds, queries, max_iters=max_iters, alpha=alpha, beta=beta, delta=delta
    )
    all_cands: list[ConceptCandidate] = list(boot_cands)
    for entry in logs:
        aligned = align_mod.extract_aligned_candidates(entry, min_len=min_len)
        picked = align_mod.select_final_candidate(aligned)
        if picked is not None:
            all_cands.append(picked)
        if crf_model is not None:
            crf_pick = crf_candidate(crf_model, entry)
            if crf_pick is not None:
                all_cands.append(crf_pick)

    accepted: list[ConceptCandidate] = []
    rejected: list[ConceptCandidate] = []
    if quality_model is None:
        accepted = [c for c in all_cands]
    else:
        log_index = disc_mod.build_log_index(logs)
        for cand in all_cands:
            feats = disc_mod.featurize_concept(
                cand,
                logs,
                topic_of,
                quality_model.vocab,
                quality_model.topics,
                log_index=log_index,
            )
            gated = disc_mod.gate(quality_model, cand, feats)
            (accepted if gated.accepted else rejected).append(gated)

    rank = {src: i for i, src in enumerate(SOURCE_PRIORITY)}
    final: dict[str, ConceptCandidate] = {}
    for cand in sorted(
        accepted, key=lambda c: (c.provenance, rank.get(c.source, 99), c.text)
    ):
        if cand.provenance not in final:
            final[cand.provenance] = cand
    return MiningResult(
        accepted=tuple(accepted),
        rejected=tuple(rejected),
        patterns=tuple(patterns),
        final_by_query=final,
    )
