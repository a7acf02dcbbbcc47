"""Reference machinery used to check the SGD learner.

Exact coordinate minimizers of the joint objective, an alternating
minimization trainer built from them, central finite differences, and a
seeded synthetic corpus with planted latent structure and events.
All computations run in float64.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .corpus import Corpus, FeatureMatrix, build_vocabulary, encode_term_matrix, save_corpus, write_descriptions
from .embedding import Hyperparams, _as_dense, svd_init, total_objective
from .errors import BadSpec, NonFinite, Singular
from .evaluation import LabeledSet, write_labels
from .zeroshot import EventDefinition, write_event


def _spd_solve(G: np.ndarray, B: np.ndarray) -> np.ndarray:
    try:
        return cho_solve(cho_factor(G), B)
    except LinAlgError as exc:
        raise Singular(f"system is not positive definite: {exc}") from exc


def closed_form_W(X, S, lambda_w: float) -> np.ndarray:
    """Ridge minimizer ``(X X.T + lambda_w I)^-1 X S.T`` of the predictability loss."""
    X = np.asarray(X, dtype=np.float64)
    G = X @ X.T + lambda_w * np.eye(X.shape[0])
    return _spd_solve(G, X @ S.T)


def closed_form_A(Y, S, lambda_a: float, weights=None) -> np.ndarray:
    """Row-wise ridge minimizer of the (optionally term-weighted) reconstruction loss."""
    Y = _as_dense(Y)
    k = S.shape[0]
    G = S @ S.T
    B = Y @ S.T
    if weights is None:
        return _spd_solve(G + lambda_a * np.eye(k), B.T).T
    weights = np.asarray(weights, dtype=np.float64)
    A = np.zeros((Y.shape[0], k))
    for h in np.unique(weights):
        rows = weights == h
        if h == 0:
            if lambda_a == 0:
                raise Singular("zero-weight terms with lambda_a = 0 have no unique minimizer")
            continue
        A[rows] = _spd_solve(h * G + lambda_a * np.eye(k), h * B[rows].T).T
    return A


def closed_form_S(A, W, Y, X, lambda_s: float, gammas=None, weights=None) -> np.ndarray:
    """Exact minimizer over ``S`` with ``A`` and the projections fixed.

    Each column solves ``(A.T H A + (sum gamma + lambda_s) I) s = A.T H y +
    sum_j gamma_j W_j.T x_j``.  Passing ``W=None`` drops the predictability
    term, which gives the regularized LSI update used by the two-step baseline.
    """
    Y = _as_dense(Y)
    k = A.shape[1]
    HA = A if weights is None else np.asarray(weights)[:, None] * A
    G = A.T @ HA
    B = HA.T @ Y
    if W is not None:
        Ws = [W] if isinstance(W, np.ndarray) else list(W)
        Xs = [X] if isinstance(X, np.ndarray) else list(X)
        gammas = [1.0] * len(Ws) if gammas is None else list(gammas)
        G = G + sum(gammas) * np.eye(k)
        for g, Wj, Xj in zip(gammas, Ws, Xs):
            B = B + g * (Wj.T @ Xj)
    return _spd_solve(G + lambda_s * np.eye(k), B)


def alternating_minimize(Y, X, hyperparams: Hyperparams, max_iters: int = 500, tol: float = 1e-10,
                         init=None, gammas=None, weights=None):
    """Cycle exact S, A and W updates until the relative decrease drops below ``tol``.

    ``X`` is a D x N array or a per-modality list; ``init`` is an optional
    ``(A, W, S)`` triple (``W`` matching ``X``).  Returns ``(A, W, S, trace)``
    where ``trace[0]`` is the starting objective and ``len(trace) - 1`` is the
    number of iterations run.
    """
    hp = hyperparams
    Y = _as_dense(Y)
    multi = not isinstance(X, np.ndarray)
    Xs = [np.asarray(x, dtype=np.float64) for x in (X if multi else [X])]
    gammas = [1.0] * len(Xs) if gammas is None else list(gammas)
    if init is None:
        A, S = svd_init(Y, hp.k)
        Ws = [closed_form_W(Xj, S, hp.lambda_w) for Xj in Xs]
    else:
        A, W0, S = init
        A, S = np.array(A, dtype=np.float64), np.array(S, dtype=np.float64)
        Ws = [np.array(w, dtype=np.float64) for w in (W0 if multi else [W0])]

    def objective():
        return total_objective(A, Ws, S, Y, Xs, hp, gammas=gammas, weights=weights)

    trace = [objective()]
    for _ in range(max_iters):
        S = closed_form_S(A, Ws, Y, Xs, hp.lambda_s, gammas=gammas, weights=weights)
        A = closed_form_A(Y, S, hp.lambda_a, weights=weights)
        Ws = [closed_form_W(Xj, S, hp.lambda_w) for Xj in Xs]
        trace.append(objective())
        prev = trace[-2]
        if prev - trace[-1] < tol * max(abs(prev), np.finfo(float).tiny):
            break
    return A, (Ws if multi else Ws[0]), S, trace


def finite_difference_grad(objective: Callable[[np.ndarray], float], point, h: float = 1e-6) -> np.ndarray:
    """Central differences of ``objective`` at ``point``, one coordinate at a time."""
    if not h > 0:
        raise ValueError("step h must be positive")
    x = np.array(point, dtype=np.float64)
    flat = x.reshape(-1)
    grad = np.empty_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        f_plus = objective(x)
        flat[i] = orig - h
        f_minus = objective(x)
        flat[i] = orig
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NonFinite(f"objective is not finite around coordinate {i}")
        grad[i] = (f_plus - f_minus) / (2 * h)
    return grad.reshape(x.shape)


# ---------------------------------------------------------------------------
# synthetic corpora


@dataclass(frozen=True)
class SynthSpec:
    """Generator settings.

    Background latents are standard normal; each event's positives sit near
    ``event_scale * u_e`` for a unit direction ``u_e``.  Every event owns
    ``terms_per_event`` rare terms whose rows in the true term projection point
    along ``u_e`` with norm ``event_term_norm``, so they mostly fire for that
    event's positives.  Background latents have standard deviation
    ``background_event_sigma`` along the event directions.
    """

    N: int = 500
    M: int = 40
    D: int | tuple[int, ...] = 20
    J: int = 1
    k_true: int = 5
    noise_sigma: float = 0.0
    term_threshold: float = 1.0
    n_events: int = 5
    positives_per_event: int = 20
    seed: int = 0
    terms_per_event: int = 3
    event_scale: float = 5.0
    event_spread: float = 0.3
    event_term_norm: float = 0.3
    distractor_scale: float = 0.3
    background_event_sigma: float = 1.0

    @property
    def dims(self) -> tuple[int, ...]:
        if isinstance(self.D, int):
            return (self.D,) * self.J
        return tuple(self.D)

    def validate(self) -> None:
        if self.J < 1 or len(self.dims) != self.J:
            raise BadSpec("need one feature dimensionality per modality")
        if self.k_true < 1 or self.k_true > min(self.M, *self.dims):
            raise BadSpec("k_true must not exceed M or any D")
        if self.positives_per_event < 1 and self.n_events > 0:
            raise BadSpec("positives_per_event must be >= 1")
        if self.n_events * self.positives_per_event > self.N:
            raise BadSpec("more planted positives than videos")
        if self.n_events * self.terms_per_event >= self.M:
            raise BadSpec("event terms must leave room for background terms")
        if self.noise_sigma < 0 or self.background_event_sigma < 0:
            raise BadSpec("noise_sigma and background_event_sigma must be >= 0")


def term_name(j: int) -> str:
    return f"w{j:03d}"


def synth_corpus(spec: SynthSpec):
    """Draw a corpus with planted structure.

    Returns ``(corpus, labeled_sets, events)``: the corpus holds generated
    captions encoded against their own vocabulary, one labeled set per event
    over all videos, and one textual definition per event listing its terms.
    """
    return _generate(spec)[:3]


def _generate(spec: SynthSpec):
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    k, M, N = spec.k_true, spec.M, spec.N

    A_true = rng.standard_normal((M, k))
    if spec.n_events <= k:
        U, _ = np.linalg.qr(rng.standard_normal((k, max(spec.n_events, 1))))
        directions = U[:, :spec.n_events].T
    else:
        directions = rng.standard_normal((spec.n_events, k))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    event_rows = []
    for e, u in enumerate(directions):
        rows = list(range(M - (e + 1) * spec.terms_per_event, M - e * spec.terms_per_event))
        jitter = 0.05 * rng.standard_normal((len(rows), k))
        A_true[rows] = spec.event_term_norm * (u + jitter)
        event_rows.append(rows)

    S_clean = rng.standard_normal((k, N))
    if spec.n_events and spec.background_event_sigma != 1.0:
        Q, _ = np.linalg.qr(directions.T)
        S_clean -= (1.0 - spec.background_event_sigma) * (Q @ (Q.T @ S_clean))
    perm = rng.permutation(N)
    positives = []
    for e, u in enumerate(directions):
        idx = np.sort(perm[e * spec.positives_per_event:(e + 1) * spec.positives_per_event])
        S_clean[:, idx] = spec.event_scale * u[:, None] + spec.event_spread * rng.standard_normal((k, idx.size))
        positives.append(idx)

    features = []
    for D in spec.dims:
        W_true = rng.standard_normal((D, k))
        Q, _ = np.linalg.qr(W_true)
        pinv = W_true @ np.linalg.inv(W_true.T @ W_true)
        Z = spec.distractor_scale / np.sqrt(D) * rng.standard_normal((D, N))
        X = pinv @ (S_clean / spec.J) + (Z - Q @ (Q.T @ Z))
        features.append(X)

    S_star = S_clean + spec.noise_sigma * rng.standard_normal((k, N))
    Y_true = (A_true @ S_star) > spec.term_threshold

    video_ids = [f"v{i:05d}" for i in range(N)]
    descriptions = [(vid, " ".join(term_name(j) for j in np.flatnonzero(Y_true[:, i])))
                    for i, vid in enumerate(video_ids)]
    vocab = build_vocabulary(descriptions, min_occurrences=1)
    tm = encode_term_matrix(descriptions, vocab, video_ids)
    names = [f"modality{j}" for j in range(spec.J)] if spec.J > 1 else ["features"]
    fms = [FeatureMatrix(name, X.T, video_ids) for name, X in zip(names, features)]
    corpus = Corpus(vocab, tm, fms)

    labeled, events = [], []
    for e, (idx, rows) in enumerate(zip(positives, event_rows)):
        labels = np.zeros(N, dtype=np.int8)
        labels[idx] = 1
        eid = f"E{e:03d}"
        labeled.append(LabeledSet(eid, tuple(video_ids), labels))
        words = " ".join(term_name(j) for j in rows)
        events.append(EventDefinition(eid, f"planted event {e}", f"Videos showing {words}."))
    return corpus, labeled, events, descriptions


def save_synth(directory, spec: SynthSpec) -> dict:
    """Write the generated corpus files, labels, event definitions and a manifest."""
    corpus, labeled, events, descriptions = _generate(spec)
    directory = Path(directory)
    paths = save_corpus(corpus, directory)
    write_descriptions(directory / "descriptions.txt", descriptions)
    write_labels(directory / "labels.tsv", labeled)
    event_dir = directory / "events"
    event_dir.mkdir(exist_ok=True)
    paths["events"] = []
    for ev in events:
        p = event_dir / f"{ev.event_id}.txt"
        write_event(p, ev)
        paths["events"].append(p)
    with open(directory / "manifest.txt", "w", encoding="utf-8", newline="\n") as fh:
        for key, value in asdict(spec).items():
            if isinstance(value, tuple):
                value = " ".join(str(v) for v in value)
            fh.write(f"{key} = {value}\n")
    paths["labels"] = directory / "labels.tsv"
    paths["descriptions"] = directory / "descriptions.txt"
    paths["manifest"] = directory / "manifest.txt"
    return paths
