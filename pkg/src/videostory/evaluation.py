"""Average precision, event labels, and the kernel event classifier.

AP uses raw prefix precision: videos are sorted by descending score with
ties going to the smaller video id, and precision is averaged over the ranks
of the positives.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.spatial.distance import cdist

from .errors import BadParam, Empty, FormatError, NoPositives


@dataclass(frozen=True)
class LabeledSet:
    event_id: str
    video_ids: tuple[str, ...]
    labels: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int8)
        if labels.shape != (len(self.video_ids),):
            raise ValueError("one label per video is required")
        if not np.isin(labels, (0, 1)).all():
            raise ValueError("labels must be 0 or 1")
        object.__setattr__(self, "video_ids", tuple(self.video_ids))
        object.__setattr__(self, "labels", labels)

    @property
    def positives(self) -> list[str]:
        return [v for v, l in zip(self.video_ids, self.labels) if l]

    def restrict(self, video_ids: Sequence[str]) -> LabeledSet:
        """Labels for ``video_ids`` in that order; unknown videos count as negatives."""
        lookup = dict(zip(self.video_ids, self.labels))
        return LabeledSet(self.event_id, tuple(video_ids), [lookup.get(v, 0) for v in video_ids])


@dataclass(frozen=True)
class APResult:
    event_id: str
    ap: float
    n_pos: int
    n_total: int


def ap_of_ranked_labels(ranked_labels) -> float:
    """AP of a 0/1 label sequence already in rank order.

    Summed in exact rationals, so the result is the correctly rounded AP.
    """
    ranks = np.flatnonzero(np.asarray(ranked_labels)) + 1
    if ranks.size == 0:
        raise NoPositives("average precision needs at least one positive")
    total = sum(Fraction(hits, int(r)) for hits, r in enumerate(ranks, 1))
    return float(total / ranks.size)


def ranking_order(scores, video_ids: Sequence[str] | None = None) -> list[int]:
    scores = np.asarray(scores, dtype=np.float64)
    if video_ids is None:
        return sorted(range(scores.size), key=lambda i: (-scores[i], i))
    return sorted(range(scores.size), key=lambda i: (-scores[i], video_ids[i]))


def average_precision(scores, labels, video_ids: Sequence[str] | None = None, event_id: str = "") -> APResult:
    """AP of ``scores`` against binary ``labels``.

    Without ``video_ids`` ties fall back to the original position.
    """
    labels = np.asarray(labels)
    scores = np.asarray(scores, dtype=np.float64)
    if labels.shape != scores.shape:
        raise ValueError("scores and labels differ in length")
    order = ranking_order(scores, video_ids)
    ap = ap_of_ranked_labels(labels[order])
    return APResult(event_id, ap, int(labels.sum()), int(labels.size))


def mean_average_precision(results: Sequence[APResult]) -> float:
    if not results:
        raise Empty("no AP results to average")
    return float(np.mean([r.ap for r in results]))


# ---------------------------------------------------------------------------
# kernel regularized least squares


def rbf_kernel(U, V, gamma: float) -> np.ndarray:
    return np.exp(-gamma * cdist(np.atleast_2d(U), np.atleast_2d(V), "sqeuclidean"))


class KernelScorer:
    """Kernel RLS on {-1, +1} labels with an RBF kernel."""

    def __init__(self, train: np.ndarray, coef: np.ndarray, rbf_gamma: float):
        self.train = train
        self.coef = coef
        self.rbf_gamma = rbf_gamma

    def __call__(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return rbf_kernel(X, self.train, self.rbf_gamma) @ self.coef


def train_event_classifier(representations, labels, reg: float = 1.0, rbf_gamma: float = 1.0) -> KernelScorer:
    """Solve ``(K + reg I) c = y`` on one row per training video."""
    if reg <= 0:
        raise BadParam("reg must be > 0")
    if rbf_gamma < 0:
        raise BadParam("rbf_gamma must be >= 0")
    X = np.atleast_2d(np.asarray(representations, dtype=np.float64))
    labels = np.asarray(labels)
    if labels.shape != (X.shape[0],):
        raise ValueError("one label per representation row is required")
    if not labels.any():
        raise NoPositives("classifier needs at least one positive")
    y = np.where(labels > 0, 1.0, -1.0)
    K = rbf_kernel(X, X, rbf_gamma)
    coef = cho_solve(cho_factor(K + reg * np.eye(X.shape[0])), y)
    return KernelScorer(X, coef, rbf_gamma)


# ---------------------------------------------------------------------------
# files


def read_labels(path) -> list[LabeledSet]:
    """``<event_id>\\t<video_id>\\t<0|1>`` lines, grouped by event in file order."""
    grouped: dict[str, tuple[list[str], list[int]]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3 or parts[2] not in ("0", "1"):
                raise FormatError(f"{path}:{lineno}: expected '<event_id>\\t<video_id>\\t<0|1>'")
            ids, labels = grouped.setdefault(parts[0], ([], []))
            ids.append(parts[1])
            labels.append(int(parts[2]))
    return [LabeledSet(eid, tuple(ids), labels) for eid, (ids, labels) in grouped.items()]


def write_labels(path, labeled_sets: Sequence[LabeledSet]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for ls in labeled_sets:
            for vid, label in zip(ls.video_ids, ls.labels):
                fh.write(f"{ls.event_id}\t{vid}\t{int(label)}\n")


def format_report(results: Sequence[APResult]) -> str:
    lines = [f"{r.event_id}\t{format(r.ap, '.9g')}\t{r.n_pos}\t{r.n_total}" for r in results]
    lines.append(f"mAP\t{format(mean_average_precision(results), '.9g')}")
    return "\n".join(lines) + "\n"


def write_report(path, results: Sequence[APResult]) -> None:
    Path(path).write_text(format_report(results), encoding="utf-8")


def evaluate_ranking(ranked_video_ids: Sequence[str], labeled: LabeledSet) -> APResult:
    """AP of a stored ranking, taken in its given order."""
    restricted = labeled.restrict(ranked_video_ids)
    ap = ap_of_ranked_labels(restricted.labels)
    return APResult(labeled.event_id, ap, int(restricted.labels.sum()), len(ranked_video_ids))
