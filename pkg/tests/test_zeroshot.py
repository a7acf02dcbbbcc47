import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from videostory.corpus import FeatureMatrix, TermVocabulary
from videostory.embedding import EmbeddingModel, Hyperparams, descriptiveness_loss, model_to_bytes, run_sgd
from videostory.errors import BadAlpha, BadWeight, EmptyQuery, EmptyQueryWarning, FormatError
from videostory.fusion import sample_gradients_fused
from videostory.oracle import SynthSpec, finite_difference_grad, synth_corpus
from videostory.zeroshot import (
    EventDefinition,
    EventQuery,
    ImportanceMatrix,
    Ranking,
    build_event_query,
    build_importance,
    cosine_rank,
    cosine_scores,
    read_event,
    read_ranking,
    sample_gradients_ts,
    term_sensitive_loss,
    train_zero,
    write_event,
    write_ranking,
)

VOCAB = TermVocabulary(("race", "vehicle", "dog", "cat"), (4, 3, 2, 1))


class TestImportance:
    def test_present_and_absent(self):
        H = build_importance(EventDefinition("E1", "Dog show", "a dog in a race"), VOCAB)
        assert H.alpha == 0.75
        assert H.weights.tolist() == [0.75, 0.25, 0.75, 0.25]

    @pytest.mark.parametrize("alpha", [0.5, 1.0, 0.2, 1.5])
    def test_alpha_out_of_range(self, alpha):
        with pytest.raises(BadAlpha):
            build_importance(EventDefinition("E1", "dog"), VOCAB, alpha)

    def test_alpha_near_half_flattens_weights(self):
        H = build_importance(EventDefinition("E1", "dog"), VOCAB, 0.5 + 1e-12)
        assert np.ptp(H.weights) < 1e-11

    def test_no_overlap_warns(self):
        with pytest.warns(EmptyQueryWarning):
            H = build_importance(EventDefinition("E1", "bird", "only birds"), VOCAB)
        assert np.all(H.weights == 0.25)

    @given(st.text(alphabet="racedogvhilt ", max_size=40), st.floats(0.51, 0.99))
    def test_weights_follow_the_event_text(self, text, alpha):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", EmptyQueryWarning)
            H = build_importance(EventDefinition("E", "x", text), VOCAB, alpha)
        words = set(text.split())
        for term, h in zip(VOCAB.terms, H.weights):
            assert h == (alpha if term in words else 1 - alpha)


def random_problem(seed, M=8, N=6, k=3):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((M, k)), rng.standard_normal((k, N)), (rng.random((M, N)) < 0.5).astype(float), rng


class TestTermSensitiveLoss:
    def test_identity_is_bitwise_descriptiveness(self):
        for seed in range(10):
            A, S, Y, _ = random_problem(seed)
            assert term_sensitive_loss(A, S, Y, np.eye(8), 0.3, 0.2) == descriptiveness_loss(A, S, Y, 0.3, 0.2)
            assert term_sensitive_loss(A, S, Y, np.ones(8), 0.3, 0.2) == descriptiveness_loss(A, S, Y, 0.3, 0.2)

    def test_half_weights_halve_reconstruction(self):
        A, S, Y, _ = random_problem(1)
        assert term_sensitive_loss(A, S, Y, 0.5 * np.eye(8), 0, 0) == 0.5 * descriptiveness_loss(A, S, Y, 0, 0)

    @given(st.integers(0, 1000), st.floats(0, 4))
    def test_uniform_weight_scales_reconstruction_only(self, seed, w):
        A, S, Y, _ = random_problem(seed)
        reg = 0.5 * 0.3 * np.sum(A ** 2) + 0.5 * 0.2 * np.sum(S ** 2)
        got = term_sensitive_loss(A, S, Y, np.full(8, w), 0.3, 0.2)
        assert got == pytest.approx(w * descriptiveness_loss(A, S, Y, 0, 0) + reg, rel=1e-12)

    def test_matches_explicit_square_root(self):
        A, S, Y, rng = random_problem(2)
        h = rng.random(8)
        root = np.diag(np.sqrt(h))
        expected = 0.5 * sum(np.sum((root @ (Y[:, i] - A @ S[:, i])) ** 2) for i in range(6))
        expected += 0.5 * 0.1 * np.sum(A ** 2) + 0.5 * 0.4 * np.sum(S ** 2)
        assert term_sensitive_loss(A, S, Y, np.diag(h), 0.1, 0.4) == pytest.approx(expected, rel=1e-13)

    def test_negative_weight(self):
        A, S, Y, _ = random_problem(3)
        with pytest.raises(BadWeight):
            term_sensitive_loss(A, S, Y, -np.ones(8), 0, 0)


def gradient_instance(seed, dims=(5, 4)):
    rng = np.random.default_rng(seed)
    M, k = 8, 3
    A = rng.standard_normal((M, k))
    Ws = [rng.standard_normal((D, k)) for D in dims]
    xs = [rng.standard_normal(D) for D in dims]
    s, y = rng.standard_normal(k), (rng.random(M) < 0.5).astype(float)
    hp = Hyperparams(k=k, lambda_a=rng.random(), lambda_s=rng.random(), lambda_w=rng.random())
    return A, Ws, s, xs, y, hp, rng


class TestTermSensitiveGradients:
    def test_identity_is_bitwise_fused(self):
        for seed in range(10):
            A, Ws, s, xs, y, hp, _ = gradient_instance(seed)
            got = sample_gradients_ts(A, Ws, s, xs, y, np.ones(8), hp)
            ref = sample_gradients_fused(A, Ws, s, xs, y, hp)
            assert np.array_equal(got[0], ref[0]) and np.array_equal(got[2], ref[2])
            assert all(np.array_equal(a, b) for a, b in zip(got[1], ref[1]))

    def test_zero_weights_remove_descriptive_terms(self):
        A, Ws, s, xs, y, hp, _ = gradient_instance(4)
        gA, _, gs = sample_gradients_ts(A, Ws, s, xs, y, np.zeros(8), hp)
        assert np.array_equal(gA, hp.lambda_a * A)
        expected = sum(s - W.T @ x for W, x in zip(Ws, xs)) + hp.lambda_s * s
        np.testing.assert_allclose(gs, expected, rtol=1e-13)

    @pytest.mark.parametrize("seed", range(10))
    def test_finite_differences(self, seed):
        A, Ws, s, xs, y, hp, rng = gradient_instance(seed)
        h = rng.random(8)
        gammas = [0.7, 1.3]

        def f(A_, Ws_, s_):
            r = y - A_ @ s_
            val = 0.5 * np.sum(h * r * r) + 0.5 * hp.lambda_a * np.sum(A_ ** 2) + 0.5 * hp.lambda_s * s_ @ s_
            for g, W, x in zip(gammas, Ws_, xs):
                val += g * (0.5 * np.sum((s_ - W.T @ x) ** 2) + 0.5 * hp.lambda_w * np.sum(W ** 2))
            return val

        gA, gWs, gs = sample_gradients_ts(A, Ws, s, xs, y, h, hp, gammas)
        for g, fd in [(gA, finite_difference_grad(lambda a: f(a, Ws, s), A)),
                      (gs, finite_difference_grad(lambda v: f(A, Ws, v), s)),
                      (gWs[0], finite_difference_grad(lambda w: f(A, [w, Ws[1]], s), Ws[0])),
                      (gWs[1], finite_difference_grad(lambda w: f(A, [Ws[0], w], s), Ws[1]))]:
            assert np.linalg.norm(g - fd) <= 1e-6 * np.linalg.norm(fd)


@pytest.fixture(scope="module")
def planted():
    return synth_corpus(SynthSpec(N=120, M=20, D=8, k_true=4, n_events=2, positives_per_event=8, seed=3))


class TestTrainZero:
    def test_uniform_half_weights_equal_plain_weighted_run(self, planted):
        corpus, _, events = planted
        hp = Hyperparams(k=4, eta=0.02, epochs=2, seed=1)
        H = ImportanceMatrix(events[0].event_id, 0.5, np.full(corpus.M, 0.5))
        model, _ = train_zero(corpus, hp, events[0], importance=H)
        state = run_sgd(corpus.term_matrix, [corpus.X(0)], hp, weights=0.5 * np.ones(corpus.M))
        assert np.array_equal(model.A, state.A) and np.array_equal(model.W, state.projections[0])

    def test_deterministic(self, planted):
        corpus, _, events = planted
        hp = Hyperparams(k=4, eta=0.02, epochs=2, seed=1)
        a, Ha = train_zero(corpus, hp, events[1])
        b, Hb = train_zero(corpus, hp, events[1])
        assert model_to_bytes(a) == model_to_bytes(b)
        assert np.array_equal(Ha.weights, Hb.weights)
        assert a.alpha == 0.75

    def test_event_terms_weighted(self, planted):
        corpus, _, events = planted
        _, H = train_zero(corpus, Hyperparams(k=4, eta=0.0, epochs=1), events[0], alpha=0.9)
        present = [corpus.vocabulary.terms[j] for j in np.flatnonzero(H.weights == 0.9)]
        assert present and all(t in events[0].definition for t in present)


class TestQuery:
    def test_oov_only(self):
        with pytest.raises(EmptyQuery):
            build_event_query(EventDefinition("E", "bird", "flying birds"), VOCAB)

    def test_race_vehicle(self):
        vocab = TermVocabulary(("race", "vehicle"), (1, 1))
        q = build_event_query(EventDefinition("E", "", "winning a race without a vehicle"), vocab)
        assert q.y_e.tolist() == [1, 1]

    def test_duplicates_do_not_matter(self):
        a = build_event_query(EventDefinition("E", "dog", "dog dog dog"), VOCAB)
        b = build_event_query(EventDefinition("E", "", "dog"), VOCAB)
        assert np.array_equal(a.y_e, b.y_e)

    def test_title_is_used(self):
        q = build_event_query(EventDefinition("E", "Cat", "a race"), VOCAB)
        assert q.y_e.tolist() == [1, 0, 0, 1]


class TestCosine:
    def test_examples(self):
        y_e = np.array([1.0, 1.0, 0.0])
        Y_hat = np.array([[2.0, 1.0, 0.0, 1.0], [2.0, -1.0, 0.0, 0.0], [0.0, 0.0, 0.0, 0.0]])
        assert cosine_scores(y_e, Y_hat).tolist() == pytest.approx([1.0, 0.0, 0.0, 1 / math.sqrt(2)], abs=1e-15)
        assert cosine_scores(y_e, Y_hat)[3] == pytest.approx(0.70710678, abs=1e-8)

    def test_empty_query(self):
        with pytest.raises(EmptyQuery):
            cosine_scores(np.zeros(3), np.ones((3, 2)))


def rank_setup(seed, N=12, D=4, M=5, k=3):
    rng = np.random.default_rng(seed)
    model = EmbeddingModel(rng.standard_normal((M, k)), (rng.standard_normal((D, k)),), Hyperparams(k=k))
    ids = [f"v{i:02d}" for i in rng.permutation(N)]
    X = rng.standard_normal((N, D))
    y_e = (rng.random(M) < 0.5).astype(float)
    y_e[0] = 1
    return model, EventQuery("E", y_e), FeatureMatrix("f", X, ids), rng


class TestCosineRank:
    @given(st.integers(0, 10_000))
    @settings(max_examples=40, deadline=None)
    def test_brute_force(self, seed):
        model, query, fm, _ = rank_setup(seed)
        ranking = cosine_rank(model, query, [fm])
        brute = []
        for vid, x in zip(fm.video_ids, fm.values.astype(np.float64)):
            y_hat = model.A @ (model.W.T @ x)
            norm = math.sqrt(sum(v * v for v in y_hat))
            score = 0.0 if norm == 0 else float(query.y_e @ y_hat) / (np.linalg.norm(query.y_e) * norm)
            brute.append((vid, score))
        best_first = []
        remaining = list(brute)
        while remaining:
            pick = remaining[0]
            for cand in remaining[1:]:
                if cand[1] > pick[1] + 1e-12 or (abs(cand[1] - pick[1]) <= 1e-12 and cand[0] < pick[0]):
                    pick = cand
            best_first.append(pick)
            remaining.remove(pick)
        assert ranking.video_ids == [v for v, _ in best_first]
        np.testing.assert_allclose(ranking.scores, [s for _, s in best_first], atol=1e-12)
        assert all(-1 <= s <= 1 for s in ranking.scores)
        assert all(a >= b for a, b in zip(ranking.scores, ranking.scores[1:]))

    @given(st.integers(0, 10_000), st.floats(1e-3, 1e3))
    @settings(max_examples=40, deadline=None)
    def test_scale_invariance(self, seed, c):
        model, query, fm, _ = rank_setup(seed)
        base = cosine_rank(model, query, [fm])
        scaled_fm = FeatureMatrix("f", fm.values.astype(np.float64) * c, fm.video_ids)
        scaled_model_input = cosine_rank(model, query, [scaled_fm])
        # float32 storage rounds c * x, so compare scores, not bit patterns
        np.testing.assert_allclose(sorted(scaled_model_input.scores), sorted(base.scores), atol=1e-6)

    def test_scale_invariance_exact_in_float64(self):
        from videostory.zeroshot import predicted_term_matrix
        model, query, fm, _ = rank_setup(5)
        X = fm.columns()
        for c in (0.5, 3.0, 1e3):
            a = cosine_scores(query.y_e, predicted_term_matrix(model, [X]))
            b = cosine_scores(query.y_e, predicted_term_matrix(model, [c * X]))
            np.testing.assert_allclose(a, b, atol=1e-12)

    def test_ties_and_zero_predictions(self):
        model = EmbeddingModel(np.eye(2), (np.eye(2),), Hyperparams(k=2))
        fm = FeatureMatrix("f", np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [0.0, 1.0]]), ["d", "c", "b", "a"])
        ranking = cosine_rank(model, EventQuery("E", np.array([1.0, 0.0])), [fm])
        assert ranking.entries == (("b", 1.0), ("c", 1.0), ("a", 0.0), ("d", 0.0))


class TestFiles:
    def test_event_round_trip(self, tmp_path):
        ev = EventDefinition("E007", "Attempting a bike trick", "One or more people\nperform a trick.")
        write_event(tmp_path / "e.txt", ev)
        assert read_event(tmp_path / "e.txt") == ev
        assert (tmp_path / "e.txt").read_text().splitlines()[0] == "E007\tAttempting a bike trick"

    def test_bad_event_file(self, tmp_path):
        (tmp_path / "e.txt").write_text("no tab here\n")
        with pytest.raises(FormatError):
            read_event(tmp_path / "e.txt")

    def test_ranking_format(self, tmp_path):
        r = Ranking("E1", (("b", 2 / 3), ("a", 0.125), ("c", -1e-20)))
        write_ranking(tmp_path / "E1.tsv", r)
        assert (tmp_path / "E1.tsv").read_text() == "1\tb\t0.666666667\n2\ta\t0.125\n3\tc\t-1e-20\n"
        back = read_ranking(tmp_path / "E1.tsv")
        assert back.event_id == "E1" and back.video_ids == ["b", "a", "c"]
