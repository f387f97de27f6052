"""Word embeddings behind a small provider interface.

The pipeline only needs term -> fixed-dimension vector (or None when out
of vocabulary). The bundled trainer builds PPMI co-occurrence vectors
compressed by truncated SVD from the ingested corpus, so the whole system
runs self-contained; any external vector table can be dropped in through
the same file format.
"""

from __future__ import annotations

import logging
from collections import Counter
from typing import Iterable, Protocol, Sequence

import numpy as np

logger = logging.getLogger(__name__)


class EmbeddingProvider(Protocol):
    @property
    def dimension(self) -> int: ...

    def vector(self, term: str) -> np.ndarray | None: ...


class TableEmbeddings:
    """Dict-backed provider; all vectors share one dimension."""

    def __init__(self, table: dict[str, np.ndarray]) -> None:
        if not table:
            raise ValueError("embedding table must be non-empty")
        dims = {v.shape for v in table.values()}
        if len(dims) != 1:
            raise ValueError(f"inconsistent embedding dimensions: {dims}")
        self._table = {t: np.asarray(v, dtype=np.float64) for t, v in table.items()}
        self._dim = next(iter(self._table.values())).shape[0]

    @property
    def dimension(self) -> int:
        return self._dim

    def vector(self, term: str) -> np.ndarray | None:
        return self._table.get(term)

    def __len__(self) -> int:
        return len(self._table)

    def terms(self) -> Iterable[str]:
        return self._table.keys()


def train_ppmi_embeddings(
    sentences: Iterable[Sequence[str]],
    dim: int = 32,
    window: int = 2,
    min_count: int = 1,
    vocab_cap: int = 5000,
) -> TableEmbeddings:
    """PPMI matrix over windowed co-occurrence, reduced by truncated SVD.

    Vocabulary keeps the vocab_cap most frequent terms at or above
    min_count (ties broken lexicographically for determinism). Singular
    vectors are sign-canonicalized so repeated training is bit-identical.
    """
    sents = [list(s) for s in sentences]
    freq = Counter(w for s in sents for w in s)
    eligible = [w for w, c in freq.items() if c >= min_count]
    eligible.sort(key=lambda w: (-freq[w], w))
    vocab = {w: i for i, w in enumerate(eligible[:vocab_cap])}
    if not vocab:
        raise ValueError("no terms meet min_count; cannot train embeddings")

    n = len(vocab)
    counts = np.zeros((n, n))
    for sent in sents:
        ids = [vocab.get(w, -1) for w in sent]
        for i, wi in enumerate(ids):
            if wi < 0:
                continue
            lo = max(0, i - window)
            hi = min(len(ids), i + window + 1)
            for j in range(lo, hi):
                wj = ids[j]
                if j != i and wj >= 0:
                    counts[wi, wj] += 1.0

    total = counts.sum()
    if total == 0:
        # no co-occurrence at all; fall back to one-hot-ish identity
        counts = np.eye(n)
        total = counts.sum()
    row = counts.sum(axis=1, keepdims=True)
    col = counts.sum(axis=0, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        pmi = np.log((counts * total) / (row * col))
    ppmi = np.where(np.isfinite(pmi) & (pmi > 0), pmi, 0.0)

    d = min(dim, n)
    u, s, _ = np.linalg.svd(ppmi, full_matrices=False)
    u = u[:, :d]
    s = s[:d]
    # canonical sign: largest-magnitude component of each column positive
    for k in range(d):
        pivot = np.argmax(np.abs(u[:, k]))
        if u[pivot, k] < 0:
            u[:, k] = -u[:, k]
    vectors = u * np.sqrt(np.maximum(s, 0.0))[None, :]
    if d < dim:
        vectors = np.hstack([vectors, np.zeros((n, dim - d))])
    return TableEmbeddings({w: vectors[i] for w, i in vocab.items()})


def phrase_vector(emb: EmbeddingProvider, phrase: str) -> np.ndarray | None:
    """Exact-term lookup, falling back to the mean of in-vocab word parts."""
    direct = emb.vector(phrase)
    if direct is not None:
        return direct
    parts = [emb.vector(w) for w in phrase.split()]
    found = [p for p in parts if p is not None]
    if not found:
        return None
    return np.mean(found, axis=0)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(a @ b) / (na * nb)


def save_embeddings(emb: TableEmbeddings, path: str) -> None:
    """`term dim1 ... dimd` text lines, terms sorted for stable diffs."""
    with open(path, "w", encoding="utf-8") as fh:
        for term in sorted(emb.terms()):
            vec = emb.vector(term)
            assert vec is not None
            fh.write(term + " " + " ".join(f"{x:.8g}" for x in vec) + "\n")


def load_embeddings(path: str) -> TableEmbeddings:
    table: dict[str, np.ndarray] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split(" ")
            if len(parts) < 2:
                logger.warning("embedding file %s line %d: too few fields", path, lineno)
                continue
            table[parts[0]] = np.asarray([float(x) for x in parts[1:]])
    return TableEmbeddings(table)
