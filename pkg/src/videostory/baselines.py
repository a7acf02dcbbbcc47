"""Comparison representations learned without the joint objective.

Term attributes score every selected vocabulary term with its own linear
regularized least-squares predictor; the description embedding fits the
textual factorization first and the visual projection afterwards.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .corpus import Corpus
from .embedding import EmbeddingModel, Hyperparams, TrainState, descriptiveness_loss, model_from_state, svd_init
from .errors import FormatError, RankTooLarge, ShapeMismatch, TooFewEligible
from .evaluation import average_precision
from .oracle import closed_form_A, closed_form_S, closed_form_W

ATTRIBUTE_MAGIC = b"VSA1"


@dataclass(frozen=True)
class TermAttributeModel:
    selected_terms: tuple[int, ...]
    weights: np.ndarray  # m_sel x D
    biases: np.ndarray  # m_sel

    def __post_init__(self):
        sel = tuple(int(t) for t in self.selected_terms)
        if len(set(sel)) != len(sel):
            raise ValueError("selected terms must be unique")
        weights = np.atleast_2d(np.asarray(self.weights, dtype=np.float64))
        biases = np.asarray(self.biases, dtype=np.float64).reshape(-1)
        if weights.shape[0] != len(sel) or biases.shape != (len(sel),):
            raise ShapeMismatch("one scorer per selected term is required")
        object.__setattr__(self, "selected_terms", sel)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "biases", biases)

    def represent(self, X) -> np.ndarray:
        """Per-video term scores for an N x D feature matrix (one row per video)."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.weights.shape[1]:
            raise ShapeMismatch(f"expected {self.weights.shape[1]} features, got {X.shape[1]}")
        return X @ self.weights.T + self.biases


def fit_linear_rls(X: np.ndarray, T: np.ndarray, reg: float) -> tuple[np.ndarray, np.ndarray]:
    """Ridge fit of targets ``T`` (N x m) on rows of ``X`` (N x D) with an unpenalized bias.

    Returns ``(weights m x D, biases m)``.  Uses the dual system when D > N.
    """
    X = np.asarray(X, dtype=np.float64)
    T = np.asarray(T, dtype=np.float64).reshape(X.shape[0], -1)
    mu_x = X.mean(axis=0)
    mu_t = T.mean(axis=0)
    Xc = X - mu_x
    Tc = T - mu_t
    N, D = Xc.shape
    if D <= N:
        W = cho_solve(cho_factor(Xc.T @ Xc + reg * np.eye(D)), Xc.T @ Tc)
    else:
        W = Xc.T @ cho_solve(cho_factor(Xc @ Xc.T + reg * np.eye(N)), Tc)
    return W.T, mu_t - mu_x @ W


def _labels_by_term(corpus: Corpus, terms: Sequence[int]) -> np.ndarray:
    """N x len(terms) binary presence matrix."""
    col = {t: c for c, t in enumerate(terms)}
    L = np.zeros((corpus.N, len(terms)))
    for i, idx in enumerate(corpus.term_matrix.indices):
        for t in idx:
            c = col.get(int(t))
            if c is not None:
                L[i, c] = 1.0
    return L


def _fit_attributes(corpus: Corpus, terms: Sequence[int], reg: float, modality_index: int) -> TermAttributeModel:
    X = corpus.features[modality_index].values
    weights, biases = fit_linear_rls(X, _labels_by_term(corpus, terms), reg)
    return TermAttributeModel(tuple(terms), weights, biases)


def train_term_attributes_f(corpus: Corpus, m_sel: int, reg: float = 1.0, modality_index: int = 0) -> TermAttributeModel:
    """Scorers for the ``m_sel`` most frequent terms (a prefix of the vocabulary)."""
    if m_sel > corpus.M:
        raise RankTooLarge(f"m_sel={m_sel} exceeds vocabulary size {corpus.M}")
    return _fit_attributes(corpus, list(range(m_sel)), reg, modality_index)


def _two_folds(labels: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Stratified fold assignment (0/1) with positives split across both folds."""
    fold = np.empty(labels.size, dtype=np.int8)
    for cls in (1, 0):
        idx = rng.permutation(np.flatnonzero(labels == cls))
        fold[idx] = np.arange(idx.size) % 2
    return fold


def term_cv_scores(corpus: Corpus, reg: float = 1.0, seed: int = 0, modality_index: int = 0) -> dict[int, float]:
    """Mean held-out AP of each term with at least two positives under a 2-fold split."""
    X = corpus.features[modality_index].values.astype(np.float64)
    ids = corpus.video_ids
    counts = np.zeros(corpus.M, dtype=np.int64)
    for idx in corpus.term_matrix.indices:
        counts[idx] += 1
    eligible = [int(t) for t in np.flatnonzero(counts >= 2)]
    labels = _labels_by_term(corpus, eligible)
    scores = {}
    for c, term in enumerate(eligible):
        y = labels[:, c]
        fold = _two_folds(y, np.random.default_rng([seed, term]))
        aps = []
        for held in (0, 1):
            tr, te = fold != held, fold == held
            w, b = fit_linear_rls(X[tr], y[tr], reg)
            pred = X[te] @ w[0] + b[0]
            aps.append(average_precision(pred, y[te], [v for v, m in zip(ids, te) if m]).ap)
        scores[term] = float(np.mean(aps))
    return scores


def train_term_attributes(corpus: Corpus, m_sel: int, reg: float = 1.0, seed: int = 0,
                          modality_index: int = 0) -> TermAttributeModel:
    """Keep the ``m_sel`` terms with the best cross-validated AP, refit on all videos."""
    scores = term_cv_scores(corpus, reg, seed, modality_index)
    if len(scores) < m_sel:
        raise TooFewEligible(f"only {len(scores)} terms have two or more positives; need {m_sel}")
    ranked = sorted(scores, key=lambda t: (-scores[t], t))
    return _fit_attributes(corpus, ranked[:m_sel], reg, modality_index)


def description_embedding_state(corpus: Corpus, hyperparams: Hyperparams, modality_index: int = 0,
                                max_iters: int = 500, tol: float = 1e-8) -> tuple[TrainState, list[float]]:
    """Two-step solution and the step-one objective trace.

    Step one alternates exact ``A`` and ``S`` updates of the LSI loss from the
    SVD start; step two fits ``W`` by ridge regression onto the fixed ``S``.
    """
    hp = hyperparams
    Y = corpus.Y()
    A, S = svd_init(Y, hp.k)
    trace = [descriptiveness_loss(A, S, Y, hp.lambda_a, hp.lambda_s)]
    for _ in range(max_iters):
        S = closed_form_S(A, None, Y, None, hp.lambda_s)
        A = closed_form_A(Y, S, hp.lambda_a)
        trace.append(descriptiveness_loss(A, S, Y, hp.lambda_a, hp.lambda_s))
        if trace[-2] - trace[-1] < tol * max(abs(trace[-2]), np.finfo(float).tiny):
            break
    W = closed_form_W(corpus.X(modality_index), S, hp.lambda_w)
    return TrainState(A, [W], S), trace


def train_description_embedding(corpus: Corpus, hyperparams: Hyperparams, modality_index: int = 0) -> EmbeddingModel:
    state, _ = description_embedding_state(corpus, hyperparams, modality_index)
    return model_from_state(state, corpus, hyperparams, [modality_index])


# ---------------------------------------------------------------------------
# file format: "VSA1\n", "<m_sel> <D>\n", "<indices>\n", then m_sel x (D+1) float64 LE


def attributes_to_bytes(model: TermAttributeModel) -> bytes:
    m, D = model.weights.shape
    header = ATTRIBUTE_MAGIC + f"\n{m} {D}\n{' '.join(map(str, model.selected_terms))}\n".encode("ascii")
    body = np.hstack([model.weights, model.biases[:, None]]).astype("<f8").tobytes()
    return header + body


def attributes_from_bytes(raw: bytes) -> TermAttributeModel:
    if not raw.startswith(ATTRIBUTE_MAGIC + b"\n"):
        raise FormatError("not a VSA1 term-attribute file")
    try:
        _, dims, terms, body = raw.split(b"\n", 3)
        m, D = (int(v) for v in dims.split())
        selected = [int(t) for t in terms.split()]
    except ValueError as exc:
        raise FormatError(f"malformed VSA1 header: {exc}") from exc
    if len(selected) != m or len(body) != 8 * m * (D + 1):
        raise FormatError("VSA1 payload does not match its header")
    mat = np.frombuffer(body, dtype="<f8").reshape(m, D + 1)
    return TermAttributeModel(tuple(selected), mat[:, :D], mat[:, D])


def save_attributes(path, model: TermAttributeModel) -> None:
    with open(path, "wb") as fh:
        fh.write(attributes_to_bytes(model))


def load_attributes(path) -> TermAttributeModel:
    with open(path, "rb") as fh:
        return attributes_from_bytes(fh.read())
