"""Few-example event recognition on top of a learned representation.

A representation is trained once on the description corpus; each event then
gets a kernel classifier trained on its few labeled videos and is scored by
AP on the test videos.

Strategies for combining modalities:

``early``     per-modality representations concatenated, one classifier
``late``      one classifier per modality, scores averaged
``vs-early``  one embedding trained on the concatenated raw features
``vs-late``   one embedding per modality, representations concatenated
``vs-joint``  one multimodal embedding with a shared latent space
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .baselines import train_description_embedding, train_term_attributes, train_term_attributes_f
from .corpus import Corpus, FeatureMatrix
from .embedding import EmbeddingModel, Hyperparams, sgd_train
from .errors import BadParam, ShapeMismatch
from .evaluation import APResult, LabeledSet, average_precision, mean_average_precision, train_event_classifier
from .fusion import sgd_train_fused

REPRESENTATIONS = ("raw-features", "videostory", "term-attributes", "term-attributes-f", "description-embedding")
STRATEGIES = ("early", "late", "vs-early", "vs-late", "vs-joint")

Encoder = Callable[[Sequence[np.ndarray]], np.ndarray]  # per-modality N x D_j rows -> N x d


@dataclass(frozen=True)
class EvalReport:
    results: tuple[APResult, ...]

    @property
    def mAP(self) -> float:
        return mean_average_precision(self.results)


def concat_modalities(features: Sequence[FeatureMatrix], name: str = "concat") -> FeatureMatrix:
    ids = features[0].video_ids
    values = np.hstack([fm.reorder(ids).values for fm in features])
    return FeatureMatrix(name, values, ids)


def _linear(model: EmbeddingModel) -> Callable[[np.ndarray], np.ndarray]:
    W = model.W
    return lambda rows: rows @ W


def _modality_encoder(corpus: Corpus, j: int, representation: str, hp: Hyperparams,
                      m_sel: int | None, term_reg: float) -> Callable[[np.ndarray], np.ndarray]:
    if representation == "raw-features":
        return lambda rows: rows
    if representation == "videostory":
        return _linear(sgd_train(corpus, hp, j))
    if representation == "description-embedding":
        return _linear(train_description_embedding(corpus, hp, j))
    m = hp.k if m_sel is None else m_sel
    if representation == "term-attributes":
        return train_term_attributes(corpus, m, term_reg, hp.seed, j).represent
    if representation == "term-attributes-f":
        return train_term_attributes_f(corpus, m, term_reg, j).represent
    raise BadParam(f"unknown representation {representation!r}")


def build_encoders(corpus: Corpus, representation: str, strategy: str, hyperparams: Hyperparams,
                   gammas=None, m_sel: int | None = None, term_reg: float = 1.0) -> list[Encoder]:
    """Train what the strategy needs and return one or more encoders.

    ``late`` yields one encoder per modality (one classifier each); every other
    strategy yields a single encoder over all modalities.
    """
    if representation not in REPRESENTATIONS:
        raise BadParam(f"representation must be one of {REPRESENTATIONS}")
    if strategy not in STRATEGIES:
        raise BadParam(f"strategy must be one of {STRATEGIES}")
    if strategy.startswith("vs-") and representation != "videostory":
        raise BadParam(f"strategy {strategy!r} needs the videostory representation")
    J = corpus.J

    if strategy in ("early", "vs-late"):
        parts = [_modality_encoder(corpus, j, representation, hyperparams, m_sel, term_reg) for j in range(J)]
        return [lambda xs: np.hstack([f(x) for f, x in zip(parts, xs)])]
    if strategy == "late":
        parts = [_modality_encoder(corpus, j, representation, hyperparams, m_sel, term_reg) for j in range(J)]
        return [lambda xs, f=f, j=j: f(xs[j]) for j, f in enumerate(parts)]
    if strategy == "vs-early":
        joined = corpus.with_features([concat_modalities(corpus.features)])
        f = _linear(sgd_train(joined, hyperparams, 0))
        return [lambda xs: f(np.hstack(xs))]
    model = sgd_train_fused(corpus, hyperparams, gammas)
    return [lambda xs: np.hstack([x @ W for x, W in zip(xs, model.projections)])]


def _rows(features: Sequence[FeatureMatrix], video_ids: Sequence[str]) -> list[np.ndarray]:
    return [fm.reorder(video_ids).values.astype(np.float64) for fm in features]


def few_example_harness(
    embed_corpus: Corpus,
    event_videos: Sequence[FeatureMatrix],
    train_labels: Sequence[LabeledSet],
    test_labels: Sequence[LabeledSet],
    representation: str = "videostory",
    strategy: str = "early",
    hyperparams: Hyperparams | None = None,
    gammas=None,
    m_sel: int | None = None,
    term_reg: float = 1.0,
    reg: float = 1.0,
    rbf_gamma: float = 1.0,
    threads: int = 1,
) -> EvalReport:
    """Per-event AP on the test videos, plus mAP via ``EvalReport.mAP``.

    ``event_videos`` supplies features (same modalities and order as
    ``embed_corpus``) for every video named in the label sets; train and test
    membership comes from the label sets themselves.
    """
    hp = hyperparams or Hyperparams(k=min(64, embed_corpus.M, embed_corpus.N))
    if len(event_videos) != embed_corpus.J:
        raise ShapeMismatch(f"expected {embed_corpus.J} feature modalities, got {len(event_videos)}")
    encoders = build_encoders(embed_corpus, representation, strategy, hp, gammas, m_sel, term_reg)
    test_by_event = {ls.event_id: ls for ls in test_labels}
    missing = [ls.event_id for ls in train_labels if ls.event_id not in test_by_event]
    if missing:
        raise ShapeMismatch(f"no test labels for event(s) {missing}")

    def run(train: LabeledSet) -> APResult:
        test = test_by_event[train.event_id]
        tr_rows = _rows(event_videos, train.video_ids)
        te_rows = _rows(event_videos, test.video_ids)
        total = None
        for enc in encoders:
            clf = train_event_classifier(enc(tr_rows), train.labels, reg, rbf_gamma)
            s = clf(enc(te_rows))
            total = s if total is None else total + s
        scores = total / len(encoders)
        return average_precision(scores, test.labels, test.video_ids, train.event_id)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        results = tuple(pool.map(run, train_labels))
    return EvalReport(results)
