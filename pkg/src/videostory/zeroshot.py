"""Zero-example event recognition.

An event is given only by its text.  Terms named in that text get a larger
reconstruction weight while training (one model per event), and test videos
are ranked by the cosine between their predicted term vector and the binary
event query.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import Corpus, FeatureMatrix, TermVocabulary, tokenize
from .embedding import (
    EmbeddingModel,
    Hyperparams,
    TrainState,
    _check_finite,
    _gradients,
    _weighted_reconstruction,
    model_from_state,
    run_sgd,
)
from .errors import BadAlpha, BadWeight, EmptyQuery, EmptyQueryWarning, FormatError, ShapeMismatch
from .fusion import _gammas

DEFAULT_ALPHA = 0.75


@dataclass(frozen=True)
class EventDefinition:
    event_id: str
    title: str = ""
    definition: str = ""

    def __post_init__(self):
        if not (self.title.strip() or self.definition.strip()):
            raise ValueError(f"event {self.event_id!r} has neither a title nor a definition")

    @property
    def text(self) -> str:
        return f"{self.title}\n{self.definition}"


@dataclass(frozen=True)
class ImportanceMatrix:
    """Diagonal of the per-event term importance matrix."""

    event_id: str
    alpha: float
    weights: np.ndarray


@dataclass(frozen=True)
class EventQuery:
    event_id: str
    y_e: np.ndarray


@dataclass(frozen=True)
class Ranking:
    event_id: str
    entries: tuple[tuple[str, float], ...]

    @property
    def video_ids(self) -> list[str]:
        return [v for v, _ in self.entries]

    @property
    def scores(self) -> np.ndarray:
        return np.array([s for _, s in self.entries])


def _event_terms(event: EventDefinition, vocab: TermVocabulary) -> np.ndarray:
    present = np.zeros(len(vocab), dtype=bool)
    for tok in tokenize(event.text):
        j = vocab.index.get(tok)
        if j is not None:
            present[j] = True
    return present


def build_importance(event: EventDefinition, vocab: TermVocabulary, alpha: float = DEFAULT_ALPHA) -> ImportanceMatrix:
    """``alpha`` for terms in the event text, ``1 - alpha`` for all others."""
    if not 0.5 < alpha < 1.0:
        raise BadAlpha(f"alpha must lie in (0.5, 1), got {alpha}")
    present = _event_terms(event, vocab)
    if not present.any():
        warnings.warn(f"event {event.event_id!r} shares no terms with the vocabulary", EmptyQueryWarning,
                      stacklevel=2)
    return ImportanceMatrix(event.event_id, alpha, np.where(present, alpha, 1.0 - alpha))


def _diagonal(H) -> np.ndarray:
    if isinstance(H, ImportanceMatrix):
        H = H.weights
    H = np.asarray(H, dtype=np.float64)
    if H.ndim == 2:
        if H.shape[0] != H.shape[1] or np.count_nonzero(H - np.diag(np.diag(H))):
            raise ShapeMismatch("importance matrix must be square and diagonal")
        H = np.diag(H).copy()
    if (H < 0).any():
        raise BadWeight("importance weights must be non-negative")
    return H


def term_sensitive_loss(A, S, Y, H, lambda_a: float, lambda_s: float) -> float:
    """Reconstruction loss with per-term weights from the diagonal of ``H``."""
    return _weighted_reconstruction(A, S, Y, _diagonal(H), lambda_a, lambda_s)


def sample_gradients_ts(A, projections, s_t, xs, y_t, H, hyperparams: Hyperparams, gammas=None):
    """Per-sample gradients of the term-sensitive multimodal objective."""
    projections, xs = list(projections), list(xs)
    if len(projections) != len(xs):
        raise ShapeMismatch("one feature vector per projection is required")
    h = _diagonal(H)
    _check_finite(A, s_t, y_t, h, *projections, *xs)
    k = s_t.shape[0]
    if A.shape != (y_t.shape[0], k) or h.shape != y_t.shape:
        raise ShapeMismatch("A, H, y_t and s_t are inconsistent")
    for W, x in zip(projections, xs):
        if W.shape != (x.shape[0], k):
            raise ShapeMismatch("projection does not match its feature vector")
    hp = hyperparams
    return _gradients(A, projections, s_t, xs, y_t, hp.lambda_a, hp.lambda_s, hp.lambda_w,
                      _gammas(gammas, len(xs)), h)


def train_zero(corpus: Corpus, hyperparams: Hyperparams, event: EventDefinition, gammas=None,
               alpha: float = DEFAULT_ALPHA, importance: ImportanceMatrix | None = None,
               init: TrainState | None = None) -> tuple[EmbeddingModel, ImportanceMatrix]:
    """Train an event-specific model on every modality of ``corpus``.

    ``importance`` overrides the matrix derived from ``event`` and ``alpha``.
    """
    if importance is None:
        importance = build_importance(event, corpus.vocabulary, alpha)
    h = _diagonal(importance)
    if h.shape != (corpus.M,):
        raise ShapeMismatch("importance weights do not match the vocabulary")
    gammas = _gammas(gammas, corpus.J)
    features = [corpus.X(j) for j in range(corpus.J)]
    state = run_sgd(corpus.term_matrix, features, hyperparams, gammas=gammas, weights=h, init=init)
    model = model_from_state(state, corpus, hyperparams, range(corpus.J), gammas=gammas,
                             alpha=importance.alpha)
    return model, importance


def build_event_query(event: EventDefinition, vocab: TermVocabulary) -> EventQuery:
    present = _event_terms(event, vocab)
    if not present.any():
        raise EmptyQuery(f"event {event.event_id!r} shares no terms with the vocabulary")
    return EventQuery(event.event_id, present.astype(np.float64))


def predicted_term_matrix(model: EmbeddingModel, features: Sequence[np.ndarray]) -> np.ndarray:
    """``A @ sum_j W_j.T @ X_j`` for D_j x N feature matrices; M x N."""
    if len(features) != model.J:
        raise ShapeMismatch(f"model expects {model.J} modalities, got {len(features)}")
    S = None
    for W, X in zip(model.projections, features):
        if X.shape[0] != W.shape[0]:
            raise ShapeMismatch(f"expected {W.shape[0]} features, got {X.shape[0]}")
        S = W.T @ X if S is None else S + W.T @ X
    return model.A @ S


def cosine_scores(y_e: np.ndarray, Y_hat: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(Y_hat, axis=0)
    q = np.linalg.norm(y_e)
    if q == 0:
        raise EmptyQuery("event query is all zeros")
    dots = y_e @ Y_hat
    out = np.zeros_like(dots)
    nz = norms > 0
    out[nz] = dots[nz] / (q * norms[nz])
    return np.clip(out, -1.0, 1.0)


def rank_videos(event_id: str, video_ids: Sequence[str], scores) -> Ranking:
    """Order by descending score; equal scores fall back to ascending video id."""
    order = sorted(range(len(video_ids)), key=lambda i: (-scores[i], video_ids[i]))
    return Ranking(event_id, tuple((video_ids[i], float(scores[i])) for i in order))


def cosine_rank(model: EmbeddingModel, query: EventQuery, videos: Corpus | Sequence[FeatureMatrix]) -> Ranking:
    """Rank test videos by cosine similarity of predicted terms and the query."""
    feats = list(videos.features) if isinstance(videos, Corpus) else list(videos)
    if len(feats) != model.J:
        raise ShapeMismatch(f"model expects {model.J} modalities, got {len(feats)}")
    ids = feats[0].video_ids
    feats = [fm.reorder(ids) for fm in feats]
    if query.y_e.shape != (model.M,):
        raise ShapeMismatch("query length differs from the model vocabulary")
    Y_hat = predicted_term_matrix(model, [fm.columns() for fm in feats])
    return rank_videos(query.event_id, ids, cosine_scores(query.y_e, Y_hat))


# ---------------------------------------------------------------------------
# file formats


def read_event(path) -> EventDefinition:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise FormatError(f"{path}: empty event file")
    event_id, sep, title = lines[0].partition("\t")
    if not sep or not event_id:
        raise FormatError(f"{path}: first line must be '<event_id>\\t<title>'")
    return EventDefinition(event_id, title, "\n".join(lines[1:]))


def write_event(path, event: EventDefinition) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{event.event_id}\t{event.title}\n")
        if event.definition:
            fh.write(event.definition.rstrip("\n") + "\n")


def format_number(x: float) -> str:
    return format(float(x), ".9g")


def write_ranking(path, ranking: Ranking) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r, (vid, score) in enumerate(ranking.entries, 1):
            fh.write(f"{r}\t{vid}\t{format_number(score)}\n")


def read_ranking(path, event_id: str | None = None) -> Ranking:
    path = Path(path)
    entries = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise FormatError(f"{path}:{lineno}: expected 'rank\\tvideo_id\\tscore'")
            entries.append((parts[1], float(parts[2])))
    return Ranking(event_id or path.stem, tuple(entries))
