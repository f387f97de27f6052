"""Linear-chain CRF for labeling concept-word spans in queries and titles.

Labels are BIO over a fixed 9-template feature set (word/NER/POS unigrams
plus four neighbor conjunctions), with BOS/EOS sentinels at the edges and
an optional corpus-source feature. Training maximizes the L2-penalized
conditional log-likelihood by batch gradient ascent with a step-halving
line search; weights start at zero, so training is deterministic for fixed
data order. The partition function is computed over all label paths; BIO
structure is enforced only at decode time through -inf transition masks.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import sparse
from scipy.special import logsumexp

from .corpus import Token

logger = logging.getLogger(__name__)

LABELS = ("B", "I", "O")
LABEL_INDEX = {lab: i for i, lab in enumerate(LABELS)}
BOS = "<BOS>"
EOS = "<EOS>"
NEG_INF = -1e30


@dataclass(frozen=True)
class LabeledSequence:
    tokens: tuple[Token, ...]
    labels: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(self.tokens) != len(self.labels):
            raise ValueError("labels must align one-to-one with tokens")
        if not bio_valid(self.labels):
            raise ValueError("label sequence violates BIO validity")


@dataclass
class CrfModel:
    feature_index: dict[str, int]
    emission: np.ndarray  # (n_features, 3)
    transition: np.ndarray  # (3, 3), [prev, cur]
    start: np.ndarray  # (3,)
    templates_version: str = "t9"

    def __post_init__(self) -> None:
        for arr in (self.emission, self.transition, self.start):
            if not np.all(np.isfinite(arr)):
                raise ValueError("model weights must be finite")

    @property
    def uses_source_feature(self) -> bool:
        return self.templates_version.endswith("+src")


def bio_valid(labels: Sequence[str]) -> bool:
    prev = "O"
    for lab in labels:
        if lab not in LABEL_INDEX:
            return False
        if lab == "I" and prev == "O":
            return False
        prev = lab
    return True


def extract_features(
    tokens: Sequence[Token], position: int, source: str | None = None
) -> list[str]:
    """Instantiate the 9 fixed templates at one position.

    Neighbor-referencing templates use BOS/EOS sentinel tokens at the
    sequence edges (the sentinel stands in for word and POS alike). When
    `source` is given, one extra corpus-source feature is appended.
    """
    if not 0 <= position < len(tokens):
        raise IndexError(f"position {position} out of range")
    cur = tokens[position]
    pw = tokens[position - 1].surface if position > 0 else BOS
    pp = tokens[position - 1].pos if position > 0 else BOS
    if position + 1 < len(tokens):
        nw = tokens[position + 1].surface
        np_ = tokens[position + 1].pos
    else:
        nw = EOS
        np_ = EOS
    feats = [
        f"w={cur.surface}",
        f"ner={cur.ner}",
        f"pos={cur.pos}",
        f"pw|w={pw}|{cur.surface}",
        f"pw|nw={pw}|{nw}",
        f"pp|p={pp}|{cur.pos}",
        f"p|np={cur.pos}|{np_}",
        f"pp|w={pp}|{cur.surface}",
        f"w|np={cur.surface}|{np_}",
    ]
    if source is not None:
        feats.append(f"src={source}")
    return feats


# ---------------------------------------------------------------------------
# training tensors


@dataclass
class Batch:
    """Featurized training set: stacked position rows plus gold statistics."""

    features: sparse.csr_matrix  # (total_positions, n_features)
    seq_len: np.ndarray  # (n_seqs,)
    row_seq: np.ndarray  # (total_positions,) owning sequence of each row
    row_step: np.ndarray  # (total_positions,) time step of each row
    gold: np.ndarray | None  # (total_positions,) int labels
    gold_start: np.ndarray | None  # (3,) observed first-label counts
    gold_trans: np.ndarray | None  # (3,3) observed transition counts
    n_features: int

    @property
    def n_seqs(self) -> int:
        return len(self.seq_len)

    @property
    def max_len(self) -> int:
        return int(self.seq_len.max()) if len(self.seq_len) else 0


def build_feature_index(
    data: Sequence[LabeledSequence], sources: Sequence[str] | None = None
) -> dict[str, int]:
    """First-seen ordering over the training data, for determinism."""
    index: dict[str, int] = {}
    for si, seq in enumerate(data):
        src = sources[si] if sources is not None else None
        for pos in range(len(seq.tokens)):
            for feat in extract_features(seq.tokens, pos, src):
                if feat not in index:
                    index[feat] = len(index)
    return index


def featurize_rows(
    token_seqs: Sequence[Sequence[Token]],
    feature_index: dict[str, int],
    sources: Sequence[str] | None = None,
) -> sparse.csr_matrix:
    """Stack every position of every sequence into one CSR indicator matrix.

    Unknown features (absent from the index) are dropped, which is how a
    trained model handles unseen vocabulary at decode time.
    """
    indptr = [0]
    indices: list[int] = []
    for si, tokens in enumerate(token_seqs):
        src = sources[si] if sources is not None else None
        for pos in range(len(tokens)):
            for feat in extract_features(tokens, pos, src):
                fi = feature_index.get(feat)
                if fi is not None:
                    indices.append(fi)
            indptr.append(len(indices))
    data = np.ones(len(indices), dtype=np.float64)
    n_rows = len(indptr) - 1
    return sparse.csr_matrix(
        (data, np.asarray(indices, dtype=np.int64), np.asarray(indptr, dtype=np.int64)),
        shape=(n_rows, len(feature_index)),
    )


def prepare_batch(
    data: Sequence[LabeledSequence],
    feature_index: dict[str, int],
    sources: Sequence[str] | None = None,
) -> Batch:
    for si, seq in enumerate(data):
        if not seq.tokens:
            raise ValueError(f"sequence {si} is empty")
    features = featurize_rows([s.tokens for s in data], feature_index, sources)
    seq_len = np.asarray([len(s.tokens) for s in data], dtype=np.int64)
    row_seq = np.repeat(np.arange(len(data), dtype=np.int64), seq_len)
    row_step = np.concatenate([np.arange(n, dtype=np.int64) for n in seq_len])
    gold = np.asarray(
        [LABEL_INDEX[lab] for s in data for lab in s.labels], dtype=np.int64
    )
    gold_start = np.zeros(3)
    gold_trans = np.zeros((3, 3))
    for seq in data:
        ids = [LABEL_INDEX[lab] for lab in seq.labels]
        gold_start[ids[0]] += 1
        for a, b in zip(ids, ids[1:]):
            gold_trans[a, b] += 1
    return Batch(
        features=features,
        seq_len=seq_len,
        row_seq=row_seq,
        row_step=row_step,
        gold=gold,
        gold_start=gold_start,
        gold_trans=gold_trans,
        n_features=len(feature_index),
    )


def pack_params(emission: np.ndarray, transition: np.ndarray, start: np.ndarray) -> np.ndarray:
    return np.concatenate([emission.ravel(), transition.ravel(), start.ravel()])


def unpack_params(theta: np.ndarray, n_features: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    ne = n_features * 3
    emission = theta[:ne].reshape(n_features, 3)
    transition = theta[ne: ne + 9].reshape(3, 3)
    start = theta[ne + 9: ne + 12]
    return emission, transition, start


def _padded_emissions(batch: Batch, emission: np.ndarray) -> np.ndarray:
    """(n_seqs, max_len, 3) emission scores; padding rows left at zero."""
    rows = batch.features @ emission  # (P, 3)
    out = np.zeros((batch.n_seqs, batch.max_len, 3))
    out[batch.row_seq, batch.row_step] = rows
    return out


def _forward(
    scores: np.ndarray, seq_len: np.ndarray, transition: np.ndarray, start: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Padded forward pass over all label paths (no BIO mask).

    Returns (log_alpha of shape (B, L, 3), log_Z of shape (B,)). Padded
    steps copy the previous alpha so the last slice is valid for every
    sequence.
    """
    n_seqs, max_len, _ = scores.shape
    log_alpha = np.full((n_seqs, max_len, 3), -np.inf)
    log_alpha[:, 0] = start[None, :] + scores[:, 0]
    for t in range(1, max_len):
        prev = log_alpha[:, t - 1]  # (B, 3)
        step = logsumexp(prev[:, :, None] + transition[None, :, :], axis=1)
        cand = step + scores[:, t]
        active = (t < seq_len)[:, None]
        log_alpha[:, t] = np.where(active, cand, prev)
    log_z = logsumexp(log_alpha[:, -1], axis=1)
    return log_alpha, log_z


def _backward(
    scores: np.ndarray, seq_len: np.ndarray, transition: np.ndarray
) -> np.ndarray:
    n_seqs, max_len, _ = scores.shape
    log_beta = np.zeros((n_seqs, max_len, 3))
    for t in range(max_len - 2, -1, -1):
        nxt = transition[None, :, :] + (scores[:, t + 1] + log_beta[:, t + 1])[:, None, :]
        cand = logsumexp(nxt, axis=2)
        active = (t + 1 < seq_len)[:, None]
        log_beta[:, t] = np.where(active, cand, 0.0)
    return log_beta


def loglik_and_gradient(
    theta: np.ndarray, batch: Batch, l2: float
) -> tuple[float, np.ndarray]:
    """L2-penalized conditional log-likelihood and its gradient.

    Objective over the batch: sum of gold-path scores minus log-partitions,
    minus (l2/2)*||theta||^2. The gradient pairs observed feature counts
    with marginal expected counts from forward-backward.
    """
    emission, transition, start = unpack_params(theta, batch.n_features)
    scores = _padded_emissions(batch, emission)
    log_alpha, log_z = _forward(scores, batch.seq_len, transition, start)
    log_beta = _backward(scores, batch.seq_len, transition)

    marg = np.exp(log_alpha + log_beta - log_z[:, None, None])
    marg_rows = marg[batch.row_seq, batch.row_step]  # (P, 3)

    gold_onehot = np.zeros_like(marg_rows)
    gold_onehot[np.arange(len(batch.gold)), batch.gold] = 1.0
    grad_emission = batch.features.T @ (gold_onehot - marg_rows)

    # pairwise expected transition counts
    exp_trans = np.zeros((3, 3))
    max_len = batch.max_len
    for t in range(max_len - 1):
        active = (t + 1 < batch.seq_len)[:, None, None]
        joint = (
            log_alpha[:, t][:, :, None]
            + transition[None, :, :]
            + (scores[:, t + 1] + log_beta[:, t + 1])[:, None, :]
            - log_z[:, None, None]
        )
        exp_trans += np.where(active, np.exp(joint), 0.0).sum(axis=0)
    grad_trans = batch.gold_trans - exp_trans
    grad_start = batch.gold_start - marg[:, 0].sum(axis=0)

    gold_rows = scores[batch.row_seq, batch.row_step, batch.gold]
    gold_score = (
        gold_rows.sum()
        + float((batch.gold_trans * transition).sum())
        + float(batch.gold_start @ start)
    )
    ll = gold_score - log_z.sum() - 0.5 * l2 * float(theta @ theta)
    grad = pack_params(grad_emission, grad_trans, grad_start) - l2 * theta
    return ll, grad


def _objective(theta: np.ndarray, batch: Batch, l2: float) -> float:
    emission, transition, start = unpack_params(theta, batch.n_features)
    scores = _padded_emissions(batch, emission)
    _, log_z = _forward(scores, batch.seq_len, transition, start)
    gold_rows = scores[batch.row_seq, batch.row_step, batch.gold]
    gold_score = (
        gold_rows.sum()
        + float((batch.gold_trans * transition).sum())
        + float(batch.gold_start @ start)
    )
    return gold_score - log_z.sum() - 0.5 * l2 * float(theta @ theta)


def train_crf(
    data: Sequence[LabeledSequence],
    l2: float = 0.1,
    max_epochs: int = 200,
    tol: float = 1e-3,
    sources: Sequence[str] | None = None,
) -> CrfModel:
    """Batch gradient ascent with step-halving line search, zero init.

    The accepted step never decreases the penalized objective. Stops when
    the gradient max-norm falls below tol, the line search stalls, or
    max_epochs is reached.
    """
    if not data:
        raise ValueError("training data must be non-empty")
    if sources is not None and len(sources) != len(data):
        raise ValueError("sources must align with data")
    for si, seq in enumerate(data):
        if not bio_valid(seq.labels):
            raise ValueError(f"sequence {si} violates BIO validity")

    feature_index = build_feature_index(data, sources)
    batch = prepare_batch(data, feature_index, sources)
    theta = np.zeros(batch.n_features * 3 + 9 + 3)
    obj, grad = loglik_and_gradient(theta, batch, l2)
    step = 1.0
    for epoch in range(max_epochs):
        gnorm = float(np.max(np.abs(grad)))
        if gnorm < tol:
            break
        step = min(step * 2.0, 1e3)
        improved = False
        for _ in range(40):
            cand = theta + step * grad
            cand_obj = _objective(cand, batch, l2)
            if cand_obj > obj:
                improved = True
                break
            step *= 0.5
        if not improved:
            logger.info("line search stalled at epoch %d (|g|=%.2e)", epoch, gnorm)
            break
        theta = cand
        obj, grad = loglik_and_gradient(theta, batch, l2)
    emission, transition, start = unpack_params(theta, batch.n_features)
    version = "t9+src" if sources is not None else "t9"
    return CrfModel(
        feature_index=feature_index,
        emission=emission.copy(),
        transition=transition.copy(),
        start=start.copy(),
        templates_version=version,
    )


# ---------------------------------------------------------------------------
# inference


def sequence_scores(
    model: CrfModel, tokens: Sequence[Token], source: str | None = None
) -> np.ndarray:
    """(L, 3) emission score matrix for one sequence under the model."""
    if not tokens:
        return np.zeros((0, 3))
    rows = featurize_rows([tokens], model.feature_index, [source] if source else None)
    return np.asarray(rows @ model.emission)


def path_score(
    model: CrfModel,
    tokens: Sequence[Token],
    labels: Sequence[str],
    source: str | None = None,
) -> float:
    """Unnormalized log-score of one label path (no BIO mask applied)."""
    if len(tokens) != len(labels):
        raise ValueError("labels must align with tokens")
    scores = sequence_scores(model, tokens, source)
    ids = [LABEL_INDEX[lab] for lab in labels]
    total = float(model.start[ids[0]]) + float(scores[0, ids[0]])
    for t in range(1, len(ids)):
        total += float(model.transition[ids[t - 1], ids[t]]) + float(scores[t, ids[t]])
    return total


def log_partition(
    model: CrfModel, tokens: Sequence[Token], source: str | None = None
) -> float:
    """log sum over ALL 3^L label paths (unconstrained, as in training)."""
    if not tokens:
        return 0.0
    scores = sequence_scores(model, tokens, source)[None, :, :]
    _, log_z = _forward(
        scores, np.asarray([len(tokens)]), model.transition, model.start
    )
    return float(log_z[0])


def decode(
    model: CrfModel, tokens: Sequence[Token], source: str | None = None
) -> LabeledSequence:
    """Viterbi decoding with BIO structure enforced by -inf masks.

    Forbidden moves: starting at I, and O followed by I. Everything else
    scores as trained.
    """
    if not tokens:
        return LabeledSequence(tokens=(), labels=())
    scores = sequence_scores(model, tokens, source)
    i_idx = LABEL_INDEX["I"]
    o_idx = LABEL_INDEX["O"]
    start = model.start.copy()
    start[i_idx] = NEG_INF
    trans = model.transition.copy()
    trans[o_idx, i_idx] = NEG_INF

    n = len(tokens)
    delta = np.zeros((n, 3))
    back = np.zeros((n, 3), dtype=np.int64)
    delta[0] = start + scores[0]
    for t in range(1, n):
        cand = delta[t - 1][:, None] + trans  # (prev, cur)
        back[t] = np.argmax(cand, axis=0)
        delta[t] = cand[back[t], np.arange(3)] + scores[t]
    labels_idx = np.zeros(n, dtype=np.int64)
    labels_idx[-1] = int(np.argmax(delta[-1]))
    for t in range(n - 1, 0, -1):
        labels_idx[t - 1] = back[t, labels_idx[t]]
    labels = tuple(LABELS[i] for i in labels_idx)
    return LabeledSequence(tokens=tuple(tokens), labels=labels)


def extract_concept(seq: LabeledSequence) -> str:
    """Concatenate all B/I tokens in order; supports discontinuous spans."""
    words = [t.surface for t, lab in zip(seq.tokens, seq.labels) if lab != "O"]
    return " ".join(words)


# ---------------------------------------------------------------------------
# file formats


def load_labeled_file(path: str) -> list[LabeledSequence]:
    """Columns token/POS/NER/label, blank line between sequences."""
    sequences: list[LabeledSequence] = []
    tokens: list[Token] = []
    labels: list[str] = []

    def flush() -> None:
        if tokens:
            sequences.append(LabeledSequence(tuple(tokens), tuple(labels)))
            tokens.clear()
            labels.clear()

    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                flush()
                continue
            fields = line.split("\t")
            if len(fields) != 4:
                raise ValueError(f"{path} line {lineno}: expected 4 columns")
            tokens.append(Token(fields[0], fields[1], fields[2]))
            labels.append(fields[3])
    flush()
    return sequences


def save_labeled_file(sequences: Sequence[LabeledSequence], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for seq in sequences:
            for tok, lab in zip(seq.tokens, seq.labels):
                fh.write(f"{tok.surface}\t{tok.pos}\t{tok.ner}\t{lab}\n")
            fh.write("\n")


def save_model(model: CrfModel, path: str) -> None:
    payload = {
        "format": "crf-weights-v1",
        "templates_version": model.templates_version,
        "features": list(model.feature_index.keys()),
        "emission": model.emission.tolist(),
        "transition": model.transition.tolist(),
        "start": model.start.tolist(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_model(path: str) -> CrfModel:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != "crf-weights-v1":
        raise ValueError(f"unsupported model format in {path}")
    features = payload["features"]
    return CrfModel(
        feature_index={f: i for i, f in enumerate(features)},
        emission=np.asarray(payload["emission"], dtype=np.float64),
        transition=np.asarray(payload["transition"], dtype=np.float64),
        start=np.asarray(payload["start"], dtype=np.float64),
        templates_version=payload["templates_version"],
    )
