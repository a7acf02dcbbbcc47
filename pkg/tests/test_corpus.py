import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from videostory.corpus import (
    Corpus,
    FeatureMatrix,
    TermMatrix,
    TermVocabulary,
    build_vocabulary,
    encode_term_matrix,
    load_corpus,
    read_descriptions,
    read_features,
    read_term_matrix,
    read_vocabulary,
    save_corpus,
    split_corpus,
    tokenize,
    write_descriptions,
    write_features,
)
from videostory.errors import EmptyCorpus, FormatError, IdMismatch, TooFewVideos


def small_corpus(n=6, d=3, seed=0):
    rng = np.random.default_rng(seed)
    words = ["dog", "cat", "ball", "park", "run"]
    descriptions = [(f"v{i}", " ".join(rng.choice(words, 3))) for i in range(n)]
    vocab = build_vocabulary(descriptions, 1)
    tm = encode_term_matrix(descriptions, vocab)
    ids = [d[0] for d in descriptions]
    feats = [FeatureMatrix("rgb", rng.standard_normal((n, d)), ids),
             FeatureMatrix("audio", rng.standard_normal((n, d + 1)), ids)]
    return Corpus(vocab, tm, feats)


class TestTokenize:
    def test_examples(self):
        assert tokenize("") == []
        assert tokenize("Cute tabby CAT!") == ["cute", "tabby", "cat"]
        assert tokenize("1/2 size Jeep") == ["1", "2", "size", "jeep"]

    @given(st.text())
    def test_tokens_are_lowercase_alphanumeric(self, text):
        for tok in tokenize(text):
            assert tok and tok == tok.lower()
            assert all(c.isascii() and c.isalnum() for c in tok)
        assert tokenize(text) == tokenize(text)


class TestVocabulary:
    def test_min_two(self):
        vocab = build_vocabulary([("a", "dog runs"), ("b", "dog jumps"), ("c", "cat")], 2)
        assert vocab.terms == ("dog",)
        assert vocab.counts == (2,)

    def test_min_one_keeps_every_token(self):
        desc = [("a", "dog runs"), ("b", "dog jumps"), ("c", "cat")]
        vocab = build_vocabulary(desc, 1)
        assert set(vocab.terms) == {"dog", "runs", "jumps", "cat"}

    def test_presence_counted_once_per_video(self):
        assert build_vocabulary([("a", "cat cat")], 2).terms == ()

    def test_order_count_then_lexicographic(self):
        desc = [("a", "b c a"), ("b", "c a"), ("c", "c z")]
        vocab = build_vocabulary(desc, 1)
        assert vocab.terms == ("c", "a", "b", "z")
        assert vocab.counts == (3, 2, 1, 1)
        assert vocab.index == {"c": 0, "a": 1, "b": 2, "z": 3}

    def test_empty_descriptions(self):
        with pytest.raises(EmptyCorpus):
            build_vocabulary([], 2)

    def test_duplicate_terms_rejected(self):
        with pytest.raises(ValueError):
            TermVocabulary(("a", "a"), (1, 1))

    @given(st.lists(st.text(alphabet="abc ", max_size=12), min_size=1, max_size=10), st.integers(1, 3))
    def test_invariants(self, texts, min_occ):
        desc = [(f"v{i}", t) for i, t in enumerate(texts)]
        vocab = build_vocabulary(desc, min_occ)
        assert len(set(vocab.terms)) == len(vocab.terms)
        assert all(c >= min_occ for c in vocab.counts)
        assert sorted(vocab.index.values()) == list(range(len(vocab)))
        keys = [(-c, t) for t, c in zip(vocab.terms, vocab.counts)]
        assert keys == sorted(keys)


class TestEncode:
    def test_binary_presence(self):
        vocab = TermVocabulary(("dog", "cat"), (1, 1))
        tm = encode_term_matrix([("a", "dog dog cat")], vocab)
        assert tm.column(0).tolist() == [1, 1]

    def test_oov_ignored(self):
        vocab = TermVocabulary(("dog", "cat"), (1, 1))
        assert encode_term_matrix([("a", "bird")], vocab).column(0).tolist() == [0, 0]

    def test_empty_vocabulary(self):
        tm = encode_term_matrix([("a", "anything at all")], TermVocabulary((), ()))
        assert tm.shape == (0, 1)
        assert tm.column(0).size == 0

    def test_id_mismatch(self):
        vocab = TermVocabulary(("dog",), (1,))
        with pytest.raises(IdMismatch):
            encode_term_matrix([("a", "dog"), ("b", "dog")], vocab, video_ids=["a", "c"])

    @given(st.lists(st.text(alphabet="abcd ", max_size=15), min_size=1, max_size=8))
    def test_reencoding_is_idempotent(self, texts):
        desc = [(f"v{i}", t) for i, t in enumerate(texts)]
        vocab = build_vocabulary(desc, 1)
        a = encode_term_matrix(desc, vocab)
        b = encode_term_matrix(desc, vocab)
        assert np.array_equal(a.dense(), b.dense())
        for idx in a.indices:
            assert np.all(np.diff(idx) > 0)


class TestCorpus:
    def test_shapes_agree(self):
        c = small_corpus()
        assert c.term_matrix.shape[1] == c.N == len(c.video_ids)
        assert all(fm.N == c.N for fm in c.features)
        assert c.J == 2

    def test_feature_values_must_be_finite(self):
        with pytest.raises(ValueError):
            FeatureMatrix("x", np.array([[np.nan]]), ["a"])

    def test_reorder_missing_row_is_an_error(self):
        fm = FeatureMatrix("x", np.zeros((2, 1)), ["a", "b"])
        with pytest.raises(IdMismatch):
            fm.reorder(["a", "c"])

    def test_misaligned_features_rejected(self):
        c = small_corpus()
        other = FeatureMatrix("x", np.zeros((c.N, 2)), list(reversed(c.video_ids)))
        with pytest.raises(IdMismatch):
            Corpus(c.vocabulary, c.term_matrix, [other])


class TestSplit:
    def test_sizes(self):
        c = small_corpus(n=4)
        for seed in range(5):
            train, test = split_corpus(c, 0.75, seed)
            assert (train.N, test.N) == (3, 1)

    def test_deterministic(self):
        c = small_corpus(n=20)
        a = split_corpus(c, 0.5, 7)
        b = split_corpus(c, 0.5, 7)
        assert a[0].video_ids == b[0].video_ids and a[1].video_ids == b[1].video_ids

    def test_too_few_videos(self):
        with pytest.raises(TooFewVideos):
            split_corpus(small_corpus(n=1), 0.5, 0)

    @given(st.integers(2, 30), st.floats(0.01, 0.99), st.integers(0, 2**31))
    @settings(max_examples=50, deadline=None)
    def test_partition(self, n, fraction, seed):
        c = small_corpus(n=n)
        train, test = split_corpus(c, fraction, seed)
        assert set(train.video_ids).isdisjoint(test.video_ids)
        assert set(train.video_ids) | set(test.video_ids) == set(c.video_ids)
        assert train.N == min(math.ceil(fraction * n), n - 1)
        assert train.vocabulary == c.vocabulary
        assert train.modality_names == c.modality_names == test.modality_names

    def test_columns_follow_their_videos(self):
        c = small_corpus(n=10)
        train, _ = split_corpus(c, 0.6, 3)
        pos = {v: i for i, v in enumerate(c.video_ids)}
        for i, vid in enumerate(train.video_ids):
            assert np.array_equal(train.Y()[:, i], c.Y()[:, pos[vid]])
            assert np.array_equal(train.X(1)[:, i], c.X(1)[:, pos[vid]])


class TestFiles:
    def test_corpus_round_trip_is_bit_identical(self, tmp_path):
        c = small_corpus(n=7)
        paths = save_corpus(c, tmp_path)
        back = load_corpus(paths["vocab"], paths["terms"], paths["features"])
        assert back.vocabulary == c.vocabulary
        assert back.video_ids == c.video_ids
        assert np.array_equal(back.Y(), c.Y())
        for a, b in zip(back.features, c.features):
            assert a.modality_name == b.modality_name
            assert a.values.tobytes() == b.values.tobytes()

    def test_feature_file_layout(self, tmp_path):
        fm = FeatureMatrix("m", np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]), ["a", "b", "c"])
        write_features(tmp_path / "m.vsf", fm)
        raw = (tmp_path / "m.vsf").read_bytes()
        assert raw[:4] == b"VSF1"
        assert np.frombuffer(raw[4:12], "<u4").tolist() == [2, 3]
        assert np.frombuffer(raw[12:], "<f4").tolist() == [1, 2, 3, 4, 5, 6]
        assert (tmp_path / "m.vsf.ids").read_text().split() == ["a", "b", "c"]
        assert read_features(tmp_path / "m.vsf").values.tolist() == fm.values.tolist()

    def test_truncated_feature_file(self, tmp_path):
        fm = FeatureMatrix("m", np.ones((2, 2)), ["a", "b"])
        write_features(tmp_path / "m.vsf", fm)
        p = tmp_path / "m.vsf"
        p.write_bytes(p.read_bytes()[:-3])
        with pytest.raises(FormatError):
            read_features(p)

    def test_text_formats(self, tmp_path):
        desc = [("a", "dog runs"), ("b", "dogé jumps")]
        write_descriptions(tmp_path / "d.txt", desc)
        assert read_descriptions(tmp_path / "d.txt") == desc
        (tmp_path / "v.tsv").write_text("dog\t2\ncat\t1\n")
        vocab = read_vocabulary(tmp_path / "v.tsv")
        assert vocab.terms == ("dog", "cat") and vocab.counts == (2, 1)
        (tmp_path / "t.tsv").write_text("a\t0 1\nb\t\n")
        tm = read_term_matrix(tmp_path / "t.tsv", 2)
        assert isinstance(tm, TermMatrix)
        assert tm.dense().tolist() == [[1, 0], [1, 0]]
