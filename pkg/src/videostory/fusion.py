"""Multimodal embeddings: one shared ``S`` predicted from every modality."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .corpus import Corpus
from .embedding import (
    EmbeddingModel,
    Hyperparams,
    TrainState,
    _check_finite,
    _gradients,
    model_from_state,
    predictability_loss,
    run_sgd,
)
from .errors import BadParam, ShapeMismatch

# Unimodal and multimodal models share one representation; J is len(projections).
MultimodalModel = EmbeddingModel


def _gammas(gammas, J: int) -> list[float]:
    gammas = [1.0] * J if gammas is None else [float(g) for g in gammas]
    if len(gammas) != J:
        raise ShapeMismatch(f"expected {J} modality weights, got {len(gammas)}")
    if any(g < 0 for g in gammas):
        raise BadParam("modality weights must be >= 0")
    return gammas


def multimodal_predictability_loss(S, projections: Sequence[np.ndarray], features: Sequence[np.ndarray],
                                   gammas=None, lambda_w: float = 0.0) -> float:
    """Weighted sum of per-modality predictability losses."""
    if len(projections) != len(features):
        raise ShapeMismatch("one feature matrix per projection is required")
    gammas = _gammas(gammas, len(projections))
    total = gammas[0] * predictability_loss(S, projections[0], features[0], lambda_w)
    for g, W, X in zip(gammas[1:], projections[1:], features[1:]):
        total = total + g * predictability_loss(S, W, X, lambda_w)
    return total


def sample_gradients_fused(A, projections, s_t, xs, y_t, hyperparams: Hyperparams, gammas=None):
    """Per-sample gradients with the predictability residual summed over modalities.

    Returns ``(grad_A, [grad_W_1, ..., grad_W_J], grad_s)``.
    """
    projections, xs = list(projections), list(xs)
    if len(projections) != len(xs):
        raise ShapeMismatch("one feature vector per projection is required")
    _check_finite(A, s_t, y_t, *projections, *xs)
    k = s_t.shape[0]
    if A.shape != (y_t.shape[0], k):
        raise ShapeMismatch("A does not match y_t and s_t")
    for W, x in zip(projections, xs):
        if W.shape != (x.shape[0], k):
            raise ShapeMismatch("projection does not match its feature vector")
    hp = hyperparams
    return _gradients(A, projections, s_t, xs, y_t, hp.lambda_a, hp.lambda_s, hp.lambda_w,
                      _gammas(gammas, len(xs)), None)


def sgd_train_fused(corpus: Corpus, hyperparams: Hyperparams, gammas=None,
                    init: TrainState | None = None) -> MultimodalModel:
    """Jointly train ``A`` and one projection per corpus modality."""
    gammas = _gammas(gammas, corpus.J)
    features = [corpus.X(j) for j in range(corpus.J)]
    state = run_sgd(corpus.term_matrix, features, hyperparams, gammas=gammas, init=init)
    return model_from_state(state, corpus, hyperparams, range(corpus.J), gammas=gammas)


def embed_fused(model: MultimodalModel, xs: Sequence) -> np.ndarray:
    """Concatenate the per-modality embeddings ``W_j.T @ x_j`` in modality order."""
    if len(xs) != model.J:
        raise ShapeMismatch(f"model expects {model.J} modalities, got {len(xs)}")
    blocks = []
    for W, x in zip(model.projections, xs):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[0] != W.shape[0]:
            raise ShapeMismatch(f"expected {W.shape[0]} features, got {x.shape[0]}")
        blocks.append(W.T @ x)
    return np.concatenate(blocks)
