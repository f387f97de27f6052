"""Quality gate deciding which mined concept candidates survive.

Features per candidate: whether it ever appeared as a query, its total
click-weighted search count, a TF bag-of-words over the concept vocabulary,
and the topic distribution of documents clicked under that query. The
classifier is L2 logistic regression trained by full-batch gradient ascent
(zero init, deterministic); an optional additive decision-stump booster
feeds its score into the logistic layer as one extra feature, mirroring a
boosted-trees-into-LR stack at desk scale.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np
from scipy import sparse

from .bootstrap import ConceptCandidate
from .corpus import QueryLogEntry, normalize_text

logger = logging.getLogger(__name__)


def build_log_index(logs: Sequence[QueryLogEntry]) -> dict[str, list[QueryLogEntry]]:
    """Query surface -> entries, for featurizing many candidates over one log."""
    index: dict[str, list[QueryLogEntry]] = {}
    for entry in logs:
        index.setdefault(entry.query.surface, []).append(entry)
    return index

TopicOracle = Callable[[str], str | None]  # clicked-title surface -> topic name


@dataclass(frozen=True)
class ConceptFeatures:
    appeared_as_query: bool
    search_count: int
    bow: dict[str, float]  # term -> TF weight over the concept vocabulary
    topic_dist: np.ndarray  # (n_topics,), sums to 1 or all-zero

    def __post_init__(self) -> None:
        if self.search_count < 0:
            raise ValueError("search_count must be >= 0")
        total = float(self.topic_dist.sum())
        if total != 0.0 and abs(total - 1.0) > 1e-9:
            raise ValueError("topic_dist must sum to 1 or be all-zero")


@dataclass
class Stump:
    feature: int
    threshold: float
    left_value: float  # applied when x[feature] <= threshold
    right_value: float


@dataclass
class QualityModel:
    weights: np.ndarray  # over [appeared, log1p(count), topic_dist..., bow..., boost?]
    bias: float
    threshold: float
    vocab: dict[str, int]
    topics: tuple[str, ...]
    stumps: list[Stump]
    held_out_accuracy: float

    def __post_init__(self) -> None:
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must lie in (0,1)")


def build_concept_vocab(concept_texts: Sequence[str]) -> dict[str, int]:
    """Token vocabulary over the concept list, first-seen order."""
    vocab: dict[str, int] = {}
    for text in concept_texts:
        for tok in normalize_text(text).split():
            if tok not in vocab:
                vocab[tok] = len(vocab)
    return vocab


def featurize_concept(
    c: ConceptCandidate,
    logs: Sequence[QueryLogEntry],
    topic_of: TopicOracle | None,
    vocab: dict[str, int],
    topics: Sequence[str],
    log_index: dict[str, list[QueryLogEntry]] | None = None,
) -> ConceptFeatures:
    """Scan the logs for the candidate text used verbatim as a query.

    search_count sums the click counts of every title clicked under a
    matching query; topic_dist is the normalized topic histogram of those
    clicked titles (unweighted by clicks), all-zero when no clicked title
    resolves to a topic. Pass a prebuilt ``build_log_index(logs)`` to avoid
    rescanning the full log per candidate; results are identical.
    """
    text = normalize_text(c.text)
    appeared = False
    search_count = 0
    topic_counts = np.zeros(len(topics))
    topic_index = {t: i for i, t in enumerate(topics)}
    matching = log_index.get(text, []) if log_index is not None else logs
    for entry in matching:
        if entry.query.surface != text:
            continue
        appeared = True
        for title in entry.titles:
            search_count += title.click_count
            if topic_of is not None:
                topic = topic_of(title.surface)
                if topic is not None and topic in topic_index:
                    topic_counts[topic_index[topic]] += 1.0
    total = topic_counts.sum()
    topic_dist = topic_counts / total if total > 0 else topic_counts
    bow: dict[str, float] = {}
    for tok in text.split():
        if tok in vocab:
            bow[tok] = bow.get(tok, 0.0) + 1.0
    return ConceptFeatures(
        appeared_as_query=appeared,
        search_count=search_count,
        bow=bow,
        topic_dist=topic_dist,
    )


def _dense_prefix(f: ConceptFeatures) -> np.ndarray:
    # log-compress the count so one popular query doesn't swamp the rest
    return np.concatenate(
        [[1.0 if f.appeared_as_query else 0.0, np.log1p(f.search_count)], f.topic_dist]
    )


def features_to_matrix(
    feats: Sequence[ConceptFeatures], vocab: dict[str, int], n_topics: int
) -> sparse.csr_matrix:
    """(n, 2 + n_topics + |vocab|) design matrix."""
    prefix = np.asarray([_dense_prefix(f) for f in feats])
    rows, cols, vals = [], [], []
    for i, f in enumerate(feats):
        for term, weight in f.bow.items():
            rows.append(i)
            cols.append(vocab[term])
            vals.append(weight)
    bow = sparse.csr_matrix(
        (vals, (rows, cols)), shape=(len(feats), len(vocab))
    )
    return sparse.hstack([sparse.csr_matrix(prefix), bow], format="csr")


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _fit_logistic(
    x: sparse.csr_matrix, y: np.ndarray, l2: float, max_epochs: int, tol: float
) -> tuple[np.ndarray, float]:
    """Gradient ascent with step halving on the penalized log-likelihood."""
    n, d = x.shape
    w = np.zeros(d)
    b = 0.0

    def objective(w_: np.ndarray, b_: float) -> float:
        z = x @ w_ + b_
        # log p(y|x) summed, numerically stable
        ll = float(np.sum(y * z - np.logaddexp(0.0, z)))
        return ll - 0.5 * l2 * float(w_ @ w_)

    obj = objective(w, b)
    step = 1.0
    for _ in range(max_epochs):
        p = _sigmoid(x @ w + b)
        grad_w = x.T @ (y - p) - l2 * w
        grad_b = float(np.sum(y - p))
        gnorm = max(float(np.max(np.abs(grad_w))) if d else 0.0, abs(grad_b))
        if gnorm < tol:
            break
        step = min(step * 2.0, 1e3)
        improved = False
        for _ in range(40):
            w_c = w + step * grad_w
            b_c = b + step * grad_b
            obj_c = objective(w_c, b_c)
            if obj_c > obj:
                improved = True
                break
            step *= 0.5
        if not improved:
            break
        w, b, obj = w_c, b_c, obj_c
    return w, b


def _fit_stumps(
    x: np.ndarray, y: np.ndarray, n_stumps: int, learn_rate: float
) -> list[Stump]:
    """Additive stumps on the logistic loss (gradient boosting, depth 1).

    Deterministic: candidate splits scanned in (feature, threshold) order,
    strictly-better improvements only.
    """
    n, d = x.shape
    score = np.zeros(n)
    stumps: list[Stump] = []
    for _ in range(n_stumps):
        residual = y - _sigmoid(score)
        best: tuple[float, Stump] | None = None
        for j in range(d):
            values = np.unique(x[:, j])
            if len(values) < 2:
                continue
            thresholds = (values[:-1] + values[1:]) / 2.0
            for thr in thresholds:
                left = x[:, j] <= thr
                nl = int(left.sum())
                nr = n - nl
                if nl == 0 or nr == 0:
                    continue
                lv = float(residual[left].mean())
                rv = float(residual[~left].mean())
                gain = nl * lv * lv + nr * rv * rv
                if best is None or gain > best[0] + 1e-15:
                    best = (gain, Stump(j, float(thr), lv, rv))
        if best is None:
            break
        stump = best[1]
        stumps.append(
            Stump(
                stump.feature,
                stump.threshold,
                learn_rate * stump.left_value,
                learn_rate * stump.right_value,
            )
        )
        score += _apply_stumps([stumps[-1]], x)
    return stumps


def _apply_stumps(stumps: Sequence[Stump], x: np.ndarray) -> np.ndarray:
    out = np.zeros(x.shape[0])
    for s in stumps:
        left = x[:, s.feature] <= s.threshold
        out += np.where(left, s.left_value, s.right_value)
    return out


def train_quality(
    data: Sequence[tuple[ConceptFeatures, bool]],
    vocab: dict[str, int],
    topics: Sequence[str],
    threshold: float = 0.5,
    l2: float = 0.1,
    max_epochs: int = 200,
    tol: float = 1e-5,
    n_stumps: int = 0,
    seed: int = 0,
    holdout_frac: float = 0.2,
) -> QualityModel:
    """Train the gate; both classes must be present or training is refused.

    Held-out accuracy is measured on a seeded 20% split when the dataset is
    large enough (>= 10 samples with both classes in the training part);
    otherwise it falls back to training accuracy.
    """
    labels = np.asarray([1.0 if y else 0.0 for _, y in data])
    if len(set(labels.tolist())) < 2:
        raise ValueError("training data must contain both classes")
    feats = [f for f, _ in data]
    x_all = features_to_matrix(feats, vocab, len(topics))

    rng = np.random.default_rng(seed)
    order = rng.permutation(len(data))
    n_hold = int(len(data) * holdout_frac)
    hold_idx = order[:n_hold]
    train_idx = order[n_hold:]
    if len(data) < 10 or len(set(labels[train_idx].tolist())) < 2:
        train_idx = np.arange(len(data))
        hold_idx = np.arange(len(data))

    x_train = x_all[train_idx]
    y_train = labels[train_idx]

    stumps: list[Stump] = []
    if n_stumps > 0:
        dense_train = np.asarray(x_train.todense())
        stumps = _fit_stumps(dense_train, y_train, n_stumps, learn_rate=0.5)
        boost_col = _apply_stumps(stumps, dense_train)[:, None]
        x_train = sparse.hstack([x_train, sparse.csr_matrix(boost_col)], format="csr")

    w, b = _fit_logistic(x_train, y_train, l2, max_epochs, tol)

    model = QualityModel(
        weights=w,
        bias=b,
        threshold=threshold,
        vocab=dict(vocab),
        topics=tuple(topics),
        stumps=stumps,
        held_out_accuracy=0.0,
    )
    hold_feats = [feats[i] for i in hold_idx]
    preds = [
        score_concept(model, f) >= threshold for f in hold_feats
    ]
    acc = float(np.mean([p == (labels[i] > 0.5) for p, i in zip(preds, hold_idx)]))
    model.held_out_accuracy = acc
    logger.info("quality gate held-out accuracy: %.3f (n=%d)", acc, len(hold_idx))
    return model


def score_concept(model: QualityModel, f: ConceptFeatures) -> float:
    x = features_to_matrix([f], model.vocab, len(model.topics))
    if model.stumps:
        dense = np.asarray(x.todense())
        boost = _apply_stumps(model.stumps, dense)[:, None]
        x = sparse.hstack([x, sparse.csr_matrix(boost)], format="csr")
    z = float((x @ model.weights)[0]) + model.bias
    return float(_sigmoid(np.asarray([z]))[0])


def gate(
    model: QualityModel, c: ConceptCandidate, f: ConceptFeatures
) -> ConceptCandidate:
    """Accept at score >= threshold; idempotent on the accepted flag."""
    return replace(c, accepted=score_concept(model, f) >= model.threshold)


def load_gate_training_file(path: str) -> list[tuple[str, bool]]:
    """`concept_text <TAB> label{0,1}` lines."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 2 or fields[1] not in ("0", "1"):
                raise ValueError(f"{path} line {lineno}: expected `text<TAB>0|1`")
            out.append((fields[0], fields[1] == "1"))
    return out


def save_quality_model(model: QualityModel, path: str) -> None:
    payload = {
        "format": "quality-gate-v1",
        "weights": model.weights.tolist(),
        "bias": model.bias,
        "threshold": model.threshold,
        "vocab": list(model.vocab.keys()),
        "topics": list(model.topics),
        "stumps": [
            [s.feature, s.threshold, s.left_value, s.right_value] for s in model.stumps
        ],
        "held_out_accuracy": model.held_out_accuracy,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_quality_model(path: str) -> QualityModel:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != "quality-gate-v1":
        raise ValueError(f"unsupported gate model format in {path}")
    return QualityModel(
        weights=np.asarray(payload["weights"], dtype=np.float64),
        bias=float(payload["bias"]),
        threshold=float(payload["threshold"]),
        vocab={t: i for i, t in enumerate(payload["vocab"])},
        topics=tuple(payload["topics"]),
        stumps=[Stump(int(a), float(b), float(c), float(d))
                for a, b, c, d in payload["stumps"]],
        held_out_accuracy=float(payload["held_out_accuracy"]),
    )
