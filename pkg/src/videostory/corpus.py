"""Captions, term vocabularies, binary term matrices and video features.

On-disk formats
---------------
descriptions   ``<video_id>\\t<free text>`` per line, UTF-8
vocabulary     ``<term>\\t<count>`` per line; line order is the term index
term matrix    ``<video_id>\\t<sorted space-separated term indices>`` per line
features       ``VSF1`` magic, u32 D, u32 N, N rows of D float32 (all little
               endian), plus a ``<file>.ids`` sidecar with one video id per line
"""

from __future__ import annotations

import hashlib
import math
import re
import struct
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyCorpus, FormatError, IdMismatch, TooFewVideos

_TOKEN_SPLIT = re.compile(r"[^0-9a-z]+")
FEATURE_MAGIC = b"VSF1"


def tokenize(text: str) -> list[str]:
    """Lowercase ``text`` and split it on every non-alphanumeric character."""
    return [tok for tok in _TOKEN_SPLIT.split(text.lower()) if tok]


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class TermVocabulary:
    terms: tuple[str, ...]
    counts: tuple[int, ...]
    index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(self.terms) != len(self.counts):
            raise ValueError("terms and counts differ in length")
        index = {t: i for i, t in enumerate(self.terms)}
        if len(index) != len(self.terms):
            raise ValueError("duplicate terms in vocabulary")
        object.__setattr__(self, "terms", tuple(self.terms))
        object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))
        object.__setattr__(self, "index", index)

    def __len__(self) -> int:
        return len(self.terms)

    def fingerprint(self) -> bytes:
        """SHA-256 over the ordered term list; identifies the index mapping."""
        return hashlib.sha256("\n".join(self.terms).encode("utf-8")).digest()


@dataclass(frozen=True)
class TermMatrix:
    """Binary M x N term matrix stored as one sorted index array per video."""

    n_terms: int
    video_ids: tuple[str, ...]
    indices: tuple[np.ndarray, ...]

    def __post_init__(self):
        if len(self.video_ids) != len(self.indices):
            raise IdMismatch("one index list is required per video")
        cleaned = []
        for idx in self.indices:
            idx = np.unique(np.asarray(idx, dtype=np.int64))
            if idx.size and (idx[0] < 0 or idx[-1] >= self.n_terms):
                raise ValueError("term index out of range")
            cleaned.append(_frozen(idx))
        object.__setattr__(self, "video_ids", tuple(self.video_ids))
        object.__setattr__(self, "indices", tuple(cleaned))

    @property
    def shape(self) -> tuple[int, int]:
        return self.n_terms, len(self.video_ids)

    def column(self, i: int) -> np.ndarray:
        y = np.zeros(self.n_terms)
        y[self.indices[i]] = 1.0
        return y

    def dense(self) -> np.ndarray:
        """The M x N float64 matrix Y."""
        Y = np.zeros(self.shape)
        for i, idx in enumerate(self.indices):
            Y[idx, i] = 1.0
        return Y

    def take(self, cols: Sequence[int]) -> TermMatrix:
        return TermMatrix(
            self.n_terms,
            tuple(self.video_ids[i] for i in cols),
            tuple(self.indices[i] for i in cols),
        )


@dataclass(frozen=True)
class FeatureMatrix:
    """Features of one modality: float32 values with one row per video."""

    modality_name: str
    values: np.ndarray
    video_ids: tuple[str, ...]

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float32, order="C")
        if values.ndim != 2:
            raise ValueError("feature values must be a 2-d array")
        if not np.isfinite(values).all():
            raise ValueError(f"non-finite feature values in modality {self.modality_name!r}")
        ids = tuple(self.video_ids)
        if len(ids) != values.shape[0]:
            raise IdMismatch("feature rows and video ids differ in length")
        if len(set(ids)) != len(ids):
            raise IdMismatch("duplicate video ids in feature matrix")
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "video_ids", ids)

    @property
    def D(self) -> int:
        return self.values.shape[1]

    @property
    def N(self) -> int:
        return self.values.shape[0]

    def columns(self) -> np.ndarray:
        """Float64 D x N matrix with one column per video."""
        return self.values.T.astype(np.float64)

    def take(self, rows: Sequence[int]) -> FeatureMatrix:
        rows = list(rows)
        return FeatureMatrix(self.modality_name, self.values[rows], [self.video_ids[i] for i in rows])

    def reorder(self, video_ids: Sequence[str]) -> FeatureMatrix:
        """Rows rearranged to follow ``video_ids``; every id must be present."""
        pos = {v: i for i, v in enumerate(self.video_ids)}
        missing = [v for v in video_ids if v not in pos]
        if missing:
            raise IdMismatch(
                f"modality {self.modality_name!r} has no features for {len(missing)} "
                f"video(s), e.g. {missing[0]!r}"
            )
        return self.take([pos[v] for v in video_ids])


@dataclass(frozen=True)
class Corpus:
    vocabulary: TermVocabulary
    term_matrix: TermMatrix
    features: tuple[FeatureMatrix, ...]

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(self.features))
        if not self.features:
            raise ValueError("a corpus needs at least one feature modality")
        if self.term_matrix.n_terms != len(self.vocabulary):
            raise IdMismatch("term matrix rows do not match the vocabulary size")
        for fm in self.features:
            if fm.video_ids != self.term_matrix.video_ids:
                raise IdMismatch(f"modality {fm.modality_name!r} is not aligned with the term matrix")
        names = [fm.modality_name for fm in self.features]
        if len(set(names)) != len(names):
            raise ValueError("duplicate modality names")

    @property
    def video_ids(self) -> tuple[str, ...]:
        return self.term_matrix.video_ids

    @property
    def N(self) -> int:
        return len(self.video_ids)

    @property
    def M(self) -> int:
        return len(self.vocabulary)

    @property
    def J(self) -> int:
        return len(self.features)

    @property
    def modality_names(self) -> list[str]:
        return [fm.modality_name for fm in self.features]

    def X(self, j: int = 0) -> np.ndarray:
        return self.features[j].columns()

    def Y(self) -> np.ndarray:
        return self.term_matrix.dense()

    def take(self, cols: Sequence[int]) -> Corpus:
        cols = list(cols)
        return Corpus(self.vocabulary, self.term_matrix.take(cols), [fm.take(cols) for fm in self.features])

    def with_features(self, features: Iterable[FeatureMatrix]) -> Corpus:
        return Corpus(self.vocabulary, self.term_matrix, tuple(features))


def build_vocabulary(descriptions: Iterable[tuple[str, str]], min_occurrences: int = 2) -> TermVocabulary:
    """Count in how many videos each term occurs and keep the frequent ones.

    Terms are ordered by descending count, ties broken lexicographically, so the
    ``m`` most frequent terms are always the first ``m`` indices.
    """
    if min_occurrences < 1:
        raise ValueError("min_occurrences must be >= 1")
    counts: Counter[str] = Counter()
    n_videos = 0
    for _, text in descriptions:
        n_videos += 1
        counts.update(set(tokenize(text)))
    if n_videos == 0:
        raise EmptyCorpus("no descriptions given")
    kept = sorted((t for t, c in counts.items() if c >= min_occurrences), key=lambda t: (-counts[t], t))
    return TermVocabulary(tuple(kept), tuple(counts[t] for t in kept))


def encode_term_matrix(
    descriptions: Sequence[tuple[str, str]],
    vocab: TermVocabulary,
    video_ids: Sequence[str] | None = None,
) -> TermMatrix:
    """Binary presence of vocabulary terms per description.

    When ``video_ids`` is given the descriptions must list exactly those videos
    in that order.
    """
    ids = [vid for vid, _ in descriptions]
    if video_ids is not None and list(video_ids) != ids:
        raise IdMismatch("description video ids do not follow the corpus ordering")
    if len(set(ids)) != len(ids):
        raise IdMismatch("duplicate video ids in descriptions")
    indices = []
    for _, text in descriptions:
        present = {vocab.index[t] for t in tokenize(text) if t in vocab.index}
        indices.append(np.array(sorted(present), dtype=np.int64))
    return TermMatrix(len(vocab), tuple(ids), tuple(indices))


def split_corpus(corpus: Corpus, train_fraction: float = 0.75, seed: int = 0) -> tuple[Corpus, Corpus]:
    """Seeded shuffle; the first ``ceil(train_fraction * N)`` videos train."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie strictly between 0 and 1")
    if corpus.N < 2:
        raise TooFewVideos(f"need at least 2 videos to split, got {corpus.N}")
    perm = np.random.default_rng(seed).permutation(corpus.N)
    n_train = min(math.ceil(train_fraction * corpus.N), corpus.N - 1)
    return corpus.take(perm[:n_train]), corpus.take(perm[n_train:])


# ---------------------------------------------------------------------------
# file formats


def read_descriptions(path) -> list[tuple[str, str]]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line:
                continue
            vid, sep, text = line.partition("\t")
            if not sep:
                raise FormatError(f"{path}:{lineno}: expected '<video_id>\\t<text>'")
            out.append((vid, text))
    return out


def write_descriptions(path, descriptions: Iterable[tuple[str, str]]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for vid, text in descriptions:
            fh.write(f"{vid}\t{text}\n")


def read_vocabulary(path) -> TermVocabulary:
    terms, counts = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            term, sep, count = line.partition("\t")
            if not sep:
                raise FormatError(f"{path}:{lineno}: expected '<term>\\t<count>'")
            terms.append(term)
            counts.append(int(count))
    return TermVocabulary(tuple(terms), tuple(counts))


def write_vocabulary(path, vocab: TermVocabulary) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for term, count in zip(vocab.terms, vocab.counts):
            fh.write(f"{term}\t{count}\n")


def read_term_matrix(path, n_terms: int) -> TermMatrix:
    ids, indices = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            vid, sep, rest = line.partition("\t")
            if not sep:
                raise FormatError(f"{path}:{lineno}: expected '<video_id>\\t<indices>'")
            ids.append(vid)
            indices.append(np.array([int(t) for t in rest.split()], dtype=np.int64))
    return TermMatrix(n_terms, tuple(ids), tuple(indices))


def write_term_matrix(path, tm: TermMatrix) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for vid, idx in zip(tm.video_ids, tm.indices):
            fh.write(f"{vid}\t{' '.join(str(int(i)) for i in idx)}\n")


def read_features(path, modality_name: str | None = None) -> FeatureMatrix:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != FEATURE_MAGIC or len(raw) < 12:
        raise FormatError(f"{path}: not a VSF1 feature file")
    D, N = struct.unpack_from("<II", raw, 4)
    if len(raw) != 12 + 4 * D * N:
        raise FormatError(f"{path}: expected {N}x{D} float32 payload")
    values = np.frombuffer(raw, dtype="<f4", count=D * N, offset=12).reshape(N, D)
    ids_path = Path(str(path) + ".ids")
    ids = ids_path.read_text(encoding="utf-8").splitlines()
    if len(ids) != N:
        raise IdMismatch(f"{ids_path}: {len(ids)} ids for {N} feature rows")
    return FeatureMatrix(modality_name or path.stem, values, ids)


def write_features(path, fm: FeatureMatrix) -> None:
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<II", fm.D, fm.N))
        fh.write(np.ascontiguousarray(fm.values, dtype="<f4").tobytes())
    with open(str(path) + ".ids", "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(f"{v}\n" for v in fm.video_ids)


def load_corpus(vocab_path, terms_path, feature_paths: Sequence) -> Corpus:
    """Assemble a corpus from its files; features are reordered to the term matrix."""
    vocab = read_vocabulary(vocab_path)
    tm = read_term_matrix(terms_path, len(vocab))
    feats = [read_features(p).reorder(tm.video_ids) for p in feature_paths]
    return Corpus(vocab, tm, feats)


def save_corpus(corpus: Corpus, directory) -> dict[str, object]:
    """Write ``vocab.tsv``, ``terms.tsv`` and one ``<modality>.vsf`` per modality."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {
        "vocab": directory / "vocab.tsv",
        "terms": directory / "terms.tsv",
        "features": [directory / f"{fm.modality_name}.vsf" for fm in corpus.features],
    }
    write_vocabulary(paths["vocab"], corpus.vocabulary)
    write_term_matrix(paths["terms"], corpus.term_matrix)
    for fm, p in zip(corpus.features, paths["features"]):
        write_features(p, fm)
    return paths
