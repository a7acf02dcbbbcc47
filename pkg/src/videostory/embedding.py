"""Joint descriptiveness + predictability embedding learned by per-sample SGD.

Matrix orientation follows the usual column convention: ``Y`` is M x N
(terms x videos), ``X`` is D x N, ``S`` is k x N, ``A`` is M x k and ``W`` is
D x k.  A video is embedded as ``s = W.T @ x`` and its terms are predicted as
``y_hat = A @ s``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .corpus import Corpus, TermMatrix
from .errors import BadParam, Diverged, FormatError, NonFinite, RankTooLarge, ShapeMismatch

MODEL_MAGIC = b"VSM1"
MODEL_VERSION = 1
SCHEDULES = ("constant", "inverse")


@dataclass(frozen=True)
class Hyperparams:
    k: int = 2048
    lambda_a: float = 1e-3
    lambda_s: float = 1e-3
    lambda_w: float = 1e-3
    eta: float = 0.01
    epochs: int = 10
    seed: int = 0
    schedule: str = "constant"
    decay: float = 0.0

    def __post_init__(self):
        if self.k < 1:
            raise BadParam("k must be >= 1")
        if min(self.lambda_a, self.lambda_s, self.lambda_w) < 0:
            raise BadParam("regularizer coefficients must be >= 0")
        if not self.eta >= 0:
            raise BadParam("eta must be >= 0")
        if self.epochs < 1:
            raise BadParam("epochs must be >= 1")
        if self.schedule not in SCHEDULES:
            raise BadParam(f"schedule must be one of {SCHEDULES}")
        if self.decay < 0:
            raise BadParam("decay must be >= 0")

    def step_size(self, t: int) -> float:
        if self.schedule == "inverse":
            return self.eta / (1.0 + self.decay * t)
        return self.eta

    def with_(self, **changes) -> Hyperparams:
        return replace(self, **changes)


@dataclass(frozen=True)
class EmbeddingModel:
    """Trained projections: ``A`` for terms and one ``W`` per feature modality.

    A single-modality model exposes its projection as ``W``; multimodal models
    (the fused and zero-example variants) share the same class.
    """

    A: np.ndarray
    projections: tuple[np.ndarray, ...]
    hyperparams: Hyperparams
    vocab_fingerprint: bytes = bytes(32)
    modality_names: tuple[str, ...] = ()
    gammas: tuple[float, ...] = ()
    alpha: float = 0.0

    def __post_init__(self):
        A = np.array(self.A, dtype=np.float64)
        projections = tuple(np.array(W, dtype=np.float64) for W in self.projections)
        if not projections:
            raise ShapeMismatch("a model needs at least one projection")
        for W in (A, *projections):
            if W.ndim != 2 or W.shape[1] != A.shape[1]:
                raise ShapeMismatch("all projections need k columns")
            if not np.isfinite(W).all():
                raise NonFinite("model parameters must be finite")
            W.setflags(write=False)
        names = tuple(self.modality_names) or tuple(f"m{j}" for j in range(len(projections)))
        gammas = tuple(float(g) for g in self.gammas) or (1.0,) * len(projections)
        if len(names) != len(projections) or len(gammas) != len(projections):
            raise ShapeMismatch("one name and one gamma per modality")
        if len(self.vocab_fingerprint) != 32:
            raise ValueError("vocabulary fingerprint must be 32 bytes")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "projections", projections)
        object.__setattr__(self, "modality_names", names)
        object.__setattr__(self, "gammas", gammas)

    @property
    def W(self) -> np.ndarray:
        if len(self.projections) != 1:
            raise ShapeMismatch(f"model has {len(self.projections)} projections; use embed_fused")
        return self.projections[0]

    @property
    def J(self) -> int:
        return len(self.projections)

    @property
    def k(self) -> int:
        return self.A.shape[1]

    @property
    def M(self) -> int:
        return self.A.shape[0]


@dataclass
class TrainState:
    A: np.ndarray
    projections: list[np.ndarray]
    S: np.ndarray
    epoch: int = 0
    step: int = 0
    objective_trace: list[float] = field(default_factory=list)

    def copy(self) -> TrainState:
        return TrainState(
            self.A.copy(), [W.copy() for W in self.projections], self.S.copy(),
            self.epoch, self.step, list(self.objective_trace),
        )


def _as_dense(Y) -> np.ndarray:
    if isinstance(Y, TermMatrix):
        return Y.dense()
    return np.asarray(Y, dtype=np.float64)


def _check_finite(*arrays):
    for a in arrays:
        if not np.isfinite(a).all():
            raise NonFinite("non-finite input")


# ---------------------------------------------------------------------------
# initialization


def svd_init(Y, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Balanced rank-``k`` SVD factors ``A = U sqrt(Sigma)``, ``S = sqrt(Sigma) V.T``.

    Singular-vector signs are fixed so the largest-magnitude entry of every
    column of ``U`` is positive, which makes the factorization deterministic.
    """
    Y = _as_dense(Y)
    M, N = Y.shape
    if k > min(M, N):
        raise RankTooLarge(f"k={k} exceeds min(M, N)={min(M, N)}")
    U, sigma, Vt = np.linalg.svd(Y, full_matrices=False)
    U, sigma, Vt = U[:, :k], sigma[:k], Vt[:k]
    pivots = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[pivots, np.arange(k)])
    signs[signs == 0] = 1.0
    U = U * signs
    Vt = Vt * signs[:, None]
    root = np.sqrt(sigma)
    return U * root, root[:, None] * Vt


# ---------------------------------------------------------------------------
# objectives


def descriptiveness_loss(A, S, Y, lambda_a: float, lambda_s: float) -> float:
    """Regularized LSI reconstruction loss of the term matrix."""
    Y = _as_dense(Y)
    if A.shape[0] != Y.shape[0] or A.shape[1] != S.shape[0] or S.shape[1] != Y.shape[1]:
        raise ShapeMismatch(f"A{A.shape} @ S{S.shape} does not match Y{Y.shape}")
    R = Y - A @ S
    return 0.5 * np.sum(R**2) + lambda_a * 0.5 * np.sum(A**2) + lambda_s * 0.5 * np.sum(S**2)


def predictability_loss(S, W, X, lambda_w: float) -> float:
    """Ridge-style loss of predicting the embedding ``S`` as ``W.T @ X``."""
    if W.shape[0] != X.shape[0] or W.shape[1] != S.shape[0] or S.shape[1] != X.shape[1]:
        raise ShapeMismatch(f"W{W.shape}, X{X.shape} and S{S.shape} are inconsistent")
    R = S - W.T @ X
    return 0.5 * np.sum(R**2) + lambda_w * 0.5 * np.sum(W**2)


def _weighted_reconstruction(A, S, Y, weights, lambda_a, lambda_s) -> float:
    if weights is None:
        return descriptiveness_loss(A, S, Y, lambda_a, lambda_s)
    Y = _as_dense(Y)
    if A.shape[0] != Y.shape[0] or A.shape[1] != S.shape[0] or S.shape[1] != Y.shape[1]:
        raise ShapeMismatch(f"A{A.shape} @ S{S.shape} does not match Y{Y.shape}")
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (Y.shape[0],):
        raise ShapeMismatch("one importance weight per term is required")
    R = Y - A @ S
    return 0.5 * np.sum(weights[:, None] * R**2) + lambda_a * 0.5 * np.sum(A**2) + lambda_s * 0.5 * np.sum(S**2)


def _as_list(W) -> list[np.ndarray]:
    if isinstance(W, np.ndarray):
        return [W]
    return list(W)


def total_objective(A, W, S, Y, X, hyperparams: Hyperparams, gammas=None, weights=None) -> float:
    """Descriptiveness plus predictability loss at the given ``S``.

    ``W`` and ``X`` may be single arrays or per-modality sequences; ``gammas``
    weight the modalities and ``weights`` (the diagonal of the term importance
    matrix) switch to the term-sensitive reconstruction loss.
    """
    Ws, Xs = _as_list(W), _as_list(X)
    if len(Ws) != len(Xs):
        raise ShapeMismatch("one feature matrix per projection is required")
    gammas = [1.0] * len(Ws) if gammas is None else list(gammas)
    hp = hyperparams
    desc = _weighted_reconstruction(A, S, Y, weights, hp.lambda_a, hp.lambda_s)
    pred = gammas[0] * predictability_loss(S, Ws[0], Xs[0], hp.lambda_w)
    for g, Wj, Xj in zip(gammas[1:], Ws[1:], Xs[1:]):
        pred = pred + g * predictability_loss(S, Wj, Xj, hp.lambda_w)
    return desc + pred


# ---------------------------------------------------------------------------
# gradients


def sample_gradients(A, W, s_t, x_t, y_t, hyperparams: Hyperparams):
    """Per-sample gradients of the joint objective w.r.t. ``A``, ``W`` and ``s_t``."""
    _check_finite(A, W, s_t, x_t, y_t)
    if A.shape != (y_t.shape[0], s_t.shape[0]) or W.shape != (x_t.shape[0], s_t.shape[0]):
        raise ShapeMismatch("inconsistent sample shapes")
    hp = hyperparams
    r = y_t - A @ s_t
    res = s_t - W.T @ x_t
    grad_A = -np.outer(r, s_t) + hp.lambda_a * A
    grad_W = -np.outer(x_t, res) + hp.lambda_w * W
    grad_s = -A.T @ r + res + hp.lambda_s * s_t
    return grad_A, grad_W, grad_s


def _gradients(A, Ws, s_t, xs, y_t, lambda_a, lambda_s, lambda_w, gammas, weights):
    """Shared multimodal, optionally term-weighted, per-sample gradients."""
    r = y_t - A @ s_t
    hr = r if weights is None else weights * r
    grad_A = -np.outer(hr, s_t) + lambda_a * A
    grad_Ws = []
    acc = None
    for g, Wj, xj in zip(gammas, Ws, xs):
        res = s_t - Wj.T @ xj
        grad_Ws.append(g * (-np.outer(xj, res) + lambda_w * Wj))
        acc = g * res if acc is None else acc + g * res
    grad_s = -A.T @ hr + acc + lambda_s * s_t
    return grad_A, grad_Ws, grad_s


# ---------------------------------------------------------------------------
# training


def init_state(Y, features: Sequence[np.ndarray], hyperparams: Hyperparams) -> tuple[TrainState, np.random.Generator]:
    """SVD-initialized ``A``/``S`` and seeded zero-mean Gaussian projections.

    Returns the generator as well: the per-epoch permutations continue from it.
    """
    rng = np.random.default_rng(hyperparams.seed)
    A, S = svd_init(Y, hyperparams.k)
    Ws = [rng.standard_normal((X.shape[0], hyperparams.k)) / np.sqrt(X.shape[0]) for X in features]
    return TrainState(A, Ws, S), rng


def run_sgd(
    Y,
    features: Sequence[np.ndarray],
    hyperparams: Hyperparams,
    gammas: Sequence[float] | None = None,
    weights: np.ndarray | None = None,
    init: TrainState | None = None,
) -> TrainState:
    """Run the per-sample SGD loop and return the final parameters.

    ``Y`` is a :class:`TermMatrix` or dense M x N array; ``features`` holds one
    D_j x N float64 array per modality.  All three gradients are evaluated at
    the current parameters before any update is applied.
    """
    hp = hyperparams
    features = [np.asarray(X, dtype=np.float64) for X in features]
    gammas = [1.0] * len(features) if gammas is None else [float(g) for g in gammas]
    if len(gammas) != len(features):
        raise ShapeMismatch("one gamma per modality is required")
    if any(g < 0 for g in gammas):
        raise BadParam("modality weights must be >= 0")
    if weights is not None:
        weights = np.asarray(weights, dtype=np.float64)
        if (weights < 0).any():
            raise BadParam("importance weights must be >= 0")
    if isinstance(Y, TermMatrix):
        column = Y.column
        M, N = Y.shape
    else:
        Y = np.asarray(Y, dtype=np.float64)
        M, N = Y.shape
        column = lambda i: Y[:, i]  # noqa: E731
    if N == 0:
        raise ShapeMismatch("training corpus is empty")
    for X in features:
        if X.shape[1] != N:
            raise ShapeMismatch("feature columns must match term-matrix columns")

    if init is None:
        state, rng = init_state(Y, features, hp)
    else:
        state = init.copy()
        rng = np.random.default_rng(hp.seed)
    A, Ws, S = state.A, state.projections, state.S
    if A.shape != (M, S.shape[0]) or S.shape[1] != N:
        raise ShapeMismatch("initial state does not match the corpus")

    t = state.step
    with np.errstate(over="ignore", invalid="ignore"):  # non-finite values raise Diverged instead
        t = _sgd_epochs(A, Ws, S, state, features, column, hp, gammas, weights, rng, t, N)
    state.step = t
    return state


def _sgd_epochs(A, Ws, S, state, features, column, hp, gammas, weights, rng, t, N):
    for _ in range(hp.epochs):
        state.epoch += 1
        for i in rng.permutation(N):
            eta = hp.step_size(t)
            s_t = S[:, i]
            xs = [X[:, i] for X in features]
            gA, gWs, gs = _gradients(
                A, Ws, s_t, xs, column(i), hp.lambda_a, hp.lambda_s, hp.lambda_w, gammas, weights
            )
            A -= eta * gA
            for Wj, gWj in zip(Ws, gWs):
                Wj -= eta * gWj
            S[:, i] = s_t - eta * gs
            t += 1
            if not (np.isfinite(A.sum()) and np.isfinite(S[:, i]).all() and all(np.isfinite(Wj.sum()) for Wj in Ws)):
                raise Diverged(state.epoch, t)
    return t


def model_from_state(state: TrainState, corpus: Corpus, hyperparams: Hyperparams,
                     modality_indices: Sequence[int], gammas=None, alpha: float = 0.0) -> EmbeddingModel:
    return EmbeddingModel(
        A=state.A,
        projections=tuple(state.projections),
        hyperparams=hyperparams,
        vocab_fingerprint=corpus.vocabulary.fingerprint(),
        modality_names=tuple(corpus.features[j].modality_name for j in modality_indices),
        gammas=tuple(gammas) if gammas is not None else (),
        alpha=alpha,
    )


def sgd_train(corpus: Corpus, hyperparams: Hyperparams, modality_index: int = 0,
              init: TrainState | None = None) -> EmbeddingModel:
    """Learn ``A`` and ``W`` on one feature modality of ``corpus``."""
    if corpus.N == 0:
        raise ShapeMismatch("training corpus is empty")
    state = run_sgd(corpus.term_matrix, [corpus.X(modality_index)], hyperparams, init=init)
    return model_from_state(state, corpus, hyperparams, [modality_index])


def fused_embedding(model: EmbeddingModel, features: Sequence[np.ndarray]) -> np.ndarray:
    """``S = sum_j gamma_j W_j.T X_j / sum_j gamma_j``; equals ``W.T @ X`` for one modality."""
    if len(features) != model.J:
        raise ShapeMismatch(f"model expects {model.J} modalities, got {len(features)}")
    total = None
    for g, W, X in zip(model.gammas, model.projections, features):
        if X.shape[0] != W.shape[0]:
            raise ShapeMismatch(f"feature dimension {X.shape[0]} != projection rows {W.shape[0]}")
        part = g * (W.T @ X)
        total = part if total is None else total + part
    return total / sum(model.gammas)


def validation_objective(model: EmbeddingModel, corpus_val: Corpus) -> float:
    """Objective on held-out videos with the embedding predicted from features."""
    if corpus_val.vocabulary.fingerprint() != model.vocab_fingerprint:
        raise ShapeMismatch("model and validation corpus use different vocabularies")
    Xs = [corpus_val.X(j) for j in range(corpus_val.J)] if model.J > 1 else [corpus_val.X(_modality_position(model, corpus_val))]
    S_val = fused_embedding(model, Xs)
    return total_objective(model.A, list(model.projections), S_val, corpus_val.term_matrix, Xs,
                           model.hyperparams, gammas=model.gammas)


def _modality_position(model: EmbeddingModel, corpus: Corpus) -> int:
    names = corpus.modality_names
    name = model.modality_names[0]
    return names.index(name) if name in names else 0


def grid_search(corpus_train: Corpus, corpus_val: Corpus, grid: Iterable[Hyperparams],
                modality_index: int = 0) -> tuple[Hyperparams, list[tuple[Hyperparams, float]]]:
    """Train every grid point and keep the one with the lowest validation objective."""
    results = []
    for hp in grid:
        model = sgd_train(corpus_train, hp, modality_index)
        results.append((hp, validation_objective(model, corpus_val)))
    if not results:
        raise BadParam("empty hyperparameter grid")
    best = min(range(len(results)), key=lambda i: results[i][1])
    return results[best][0], results


# ---------------------------------------------------------------------------
# prediction


def embed(model: EmbeddingModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    W = model.W
    if x.shape[0] != W.shape[0]:
        raise ShapeMismatch(f"expected {W.shape[0]} features, got {x.shape[0]}")
    return W.T @ x


def predict_terms(model: EmbeddingModel, s) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    if s.shape[0] != model.k:
        raise ShapeMismatch(f"expected a {model.k}-dim embedding, got {s.shape[0]}")
    return model.A @ s


def top_terms(y_hat: np.ndarray, n: int) -> np.ndarray:
    """Indices of the ``n`` highest predicted terms; ties go to the lower index."""
    order = np.argsort(-np.asarray(y_hat), kind="stable")
    return order[:n]


# ---------------------------------------------------------------------------
# model file


def model_to_bytes(model: EmbeddingModel) -> bytes:
    hp = model.hyperparams
    parts = [MODEL_MAGIC, struct.pack("<IIII", MODEL_VERSION, model.M, model.k, model.J)]
    parts.append(np.ascontiguousarray(model.A, dtype="<f8").tobytes())
    for W in model.projections:
        parts.append(struct.pack("<I", W.shape[0]))
        parts.append(np.ascontiguousarray(W, dtype="<f8").tobytes())
    parts.append(struct.pack("<5d", hp.lambda_a, hp.lambda_s, hp.lambda_w, hp.eta, model.alpha))
    parts.append(struct.pack("<IQ", hp.epochs, hp.seed))
    parts.append(model.vocab_fingerprint)
    return b"".join(parts)


def model_from_bytes(raw: bytes) -> EmbeddingModel:
    if raw[:4] != MODEL_MAGIC:
        raise FormatError("not a VSM1 model file")
    try:
        version, M, k, J = struct.unpack_from("<IIII", raw, 4)
        if version != MODEL_VERSION:
            raise FormatError(f"unsupported model version {version}")
        off = 20
        A = np.frombuffer(raw, dtype="<f8", count=M * k, offset=off).reshape(M, k)
        off += 8 * M * k
        Ws = []
        for _ in range(J):
            (D,) = struct.unpack_from("<I", raw, off)
            off += 4
            Ws.append(np.frombuffer(raw, dtype="<f8", count=D * k, offset=off).reshape(D, k))
            off += 8 * D * k
        la, ls, lw, eta, alpha = struct.unpack_from("<5d", raw, off)
        off += 40
        epochs, seed = struct.unpack_from("<IQ", raw, off)
        off += 12
        fingerprint = raw[off:off + 32]
        off += 32
    except (struct.error, ValueError) as exc:
        raise FormatError(f"truncated model file: {exc}") from exc
    if len(fingerprint) != 32 or off != len(raw):
        raise FormatError("model file has the wrong length")
    hp = Hyperparams(k=k, lambda_a=la, lambda_s=ls, lambda_w=lw, eta=eta, epochs=epochs, seed=seed)
    return EmbeddingModel(A, tuple(Ws), hp, fingerprint, alpha=alpha)


def save_model(path, model: EmbeddingModel) -> None:
    with open(path, "wb") as fh:
        fh.write(model_to_bytes(model))


def load_model(path) -> EmbeddingModel:
    with open(path, "rb") as fh:
        return model_from_bytes(fh.read())
