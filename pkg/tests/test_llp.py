import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dllp.errors import DataError, NumericError, ShapeError, UsageError
from dllp.llp import (Bag, TrainConfig, batch_average, kl_bag_grad, kl_bag_loss,
                      load_bags, make_batches, save_bags, train_llp, validate_bag)
from dllp.network import dense, init_model, predict
from dllp.numcore import Rng, finite_diff_grad


def random_simplex_rows(rng, n, k, floor=0.0):
    raw = rng.uniform(floor, 1.0, (n, k)) + 1e-9
    return raw / raw.sum(axis=1, keepdims=True)


simplexes = st.integers(min_value=2, max_value=5).flatmap(
    lambda k: st.lists(st.floats(min_value=1e-6, max_value=1.0), min_size=k, max_size=k))

simplex_pairs = st.integers(min_value=2, max_value=5).flatmap(
    lambda k: st.tuples(
        st.lists(st.floats(min_value=1e-6, max_value=1.0), min_size=k, max_size=k),
        st.lists(st.floats(min_value=1e-6, max_value=1.0), min_size=k, max_size=k)))


def _normalize(raw):
    arr = np.asarray(raw)
    return arr / arr.sum()


class TestBatchAverage:
    def test_singleton_identity(self):
        np.testing.assert_array_equal(batch_average([[0.3, 0.7]]), [0.3, 0.7])

    def test_two_rows(self):
        np.testing.assert_allclose(batch_average([[0.2, 0.8], [0.6, 0.4]]), [0.4, 0.6])

    def test_matches_brute_force_sum(self):
        rows = random_simplex_rows(Rng(13), 64, 3)
        brute = np.zeros(3)
        for row in rows:
            brute += row
        brute /= 64
        np.testing.assert_allclose(batch_average(rows), brute, atol=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(UsageError):
            batch_average(np.zeros((0, 2)))

    def test_permutation_invariant(self):
        rows = random_simplex_rows(Rng(14), 10, 4)
        perm = Rng(15).permutation(10)
        np.testing.assert_allclose(batch_average(rows), batch_average(rows[perm]),
                                   atol=1e-12)


class TestKlBagLoss:
    def test_identical_distributions(self):
        assert kl_bag_loss([0.5, 0.5], [0.5, 0.5]) == 0.0

    def test_direct_evaluation(self):
        expected = 0.5 * math.log(2.0) + 0.5 * math.log(2.0 / 3.0)
        assert kl_bag_loss([0.5, 0.5], [0.25, 0.75]) == pytest.approx(expected, abs=1e-12)
        assert expected == pytest.approx(0.1438, abs=1e-4)

    def test_one_hot_prior(self):
        assert kl_bag_loss([1.0, 0.0], [0.5, 0.5]) == pytest.approx(math.log(2.0), abs=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            kl_bag_loss([0.5, 0.5], [0.2, 0.3, 0.5])

    @given(simplex_pairs)
    def test_nonnegative(self, pair):
        raw_p, raw_q = pair
        assert kl_bag_loss(_normalize(raw_p), _normalize(raw_q)) >= 0.0

    @given(simplexes)
    def test_zero_iff_equal(self, raw):
        p = _normalize(raw)
        assert kl_bag_loss(p, p) == 0.0

    @given(simplexes)
    def test_positive_when_clearly_different(self, raw):
        p = _normalize(np.asarray(raw) + 0.05)  # entries comfortably above the clamp
        q = p.copy()
        q[0], q[-1] = q[-1], q[0]
        if abs(q[0] - p[0]) > 1e-3:
            assert kl_bag_loss(p, q) > 0.0


class TestKlBagGrad:
    def test_matches_finite_differences(self):
        rng = Rng(20)
        post = random_simplex_rows(rng.substream("post"), 8, 3)
        prior = _normalize(rng.substream("prior").uniform(0.1, 1.0, 3))
        analytic = kl_bag_grad(prior, post)
        fd = finite_diff_grad(lambda m: kl_bag_loss(prior, batch_average(m)), post, 1e-6)
        rel = np.linalg.norm(analytic - fd) / np.linalg.norm(fd)
        assert rel < 1e-4

    def test_uniform_case(self):
        prior = np.array([0.25, 0.25, 0.25, 0.25])
        post = np.full((8, 4), 0.25)
        np.testing.assert_allclose(kl_bag_grad(prior, post), np.full((8, 4), -1.0 / 8.0),
                                   atol=1e-12)

    def test_zero_prior_class_contributes_nothing(self):
        grad = kl_bag_grad([1.0, 0.0], np.array([[0.6, 0.4], [0.2, 0.8]]))
        np.testing.assert_array_equal(grad[:, 1], [0.0, 0.0])

    def test_instance_contributions_sum_to_bag_gradient(self):
        rng = Rng(21)
        post = random_simplex_rows(rng.substream("post"), 12, 3)
        prior = _normalize(rng.substream("prior").uniform(0.1, 1.0, 3))
        grad = kl_bag_grad(prior, post)
        bag_level = -prior / batch_average(post)
        np.testing.assert_allclose(grad.sum(axis=0), bag_level, rtol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            kl_bag_grad([0.5, 0.5], np.ones((4, 3)) / 3.0)


class TestMakeBatches:
    def config(self, max_batch=32):
        return TrainConfig(epochs=1, max_batch_size=max_batch)

    def test_bag_of_64_splits_into_two_of_32(self):
        bag = Bag(tuple(range(64)), (0.7, 0.3))
        out = make_batches([bag], self.config(32), Rng(1))
        assert sorted(b.size for b in out) == [32, 32]
        for b in out:
            assert b.proportions == (0.7, 0.3)

    def test_bag_of_70_keeps_remainder(self):
        bag = Bag(tuple(range(70)), (0.5, 0.5))
        out = make_batches([bag], self.config(32), Rng(2))
        assert sorted(b.size for b in out) == [6, 32, 32]

    def test_small_bag_passes_through(self):
        bag = Bag(tuple(range(10)), (0.5, 0.5), source="tiny")
        out = make_batches([bag], self.config(32), Rng(3))
        assert out == [bag]

    def test_split_partitions_parent_indices(self):
        bag = Bag(tuple(range(100, 200)), (0.4, 0.6))
        out = make_batches([bag], self.config(32), Rng(4))
        union = sorted(i for b in out for i in b.instance_indices)
        assert union == list(range(100, 200))

    def test_resplit_differs_across_streams(self):
        bag = Bag(tuple(range(64)), (0.5, 0.5))
        first = make_batches([bag], self.config(32), Rng(5).substream("epoch-0"))
        second = make_batches([bag], self.config(32), Rng(5).substream("epoch-1"))
        assert [b.instance_indices for b in first] != [b.instance_indices for b in second]

    def test_deterministic_under_stream(self):
        bags = [Bag(tuple(range(64)), (0.5, 0.5)), Bag((64, 65), (1.0, 0.0))]
        a = make_batches(bags, self.config(32), Rng(6))
        b = make_batches(bags, self.config(32), Rng(6))
        assert a == b

    def test_empty_bag_list(self):
        assert make_batches([], self.config(), Rng(0)) == []


class TestValidateBag:
    def test_bad_proportions(self):
        with pytest.raises(ShapeError):
            validate_bag(Bag((0, 1), (0.5, 0.4)))

    def test_duplicate_indices(self):
        with pytest.raises(ShapeError):
            validate_bag(Bag((3, 3), (0.5, 0.5)))

    def test_out_of_range_indices(self):
        with pytest.raises(ShapeError):
            validate_bag(Bag((0, 99), (0.5, 0.5)), dataset_size=10)


class TestTrainLlp:
    def test_single_pure_bag_drives_posterior_up(self):
        x = np.array([[1.0]])
        bag = Bag((0,), (1.0, 0.0))
        model = init_model([], 1, 2, rng=Rng(1))
        config = TrainConfig(epochs=200, max_batch_size=32, learning_rate=0.01,
                             shuffle_seed=1)
        train_llp(model, x, [bag], config)
        # Adam's effective step decays as the gradient saturates, so 200
        # epochs at lr 0.01 lands around 0.94; 800 epochs clears 0.99.
        assert predict(model, x)[0, 0] > 0.9
        config = TrainConfig(epochs=800, max_batch_size=32, learning_rate=0.01,
                             shuffle_seed=1)
        model = init_model([], 1, 2, rng=Rng(1))
        train_llp(model, x, [bag], config)
        assert predict(model, x)[0, 0] > 0.99

    def test_separable_gaussians_with_pure_bags(self):
        rng = Rng(2)
        n = 120
        x = np.vstack([rng.substream("a").normal(-2.0, 0.5, (n, 2)),
                       rng.substream("b").normal(2.0, 0.5, (n, 2))])
        bags = []
        for start in range(0, n, 30):
            bags.append(Bag(tuple(range(start, start + 30)), (1.0, 0.0)))
        for start in range(n, 2 * n, 30):
            bags.append(Bag(tuple(range(start, start + 30)), (0.0, 1.0)))
        model = init_model([dense(8)], 2, 2, rng=Rng(3))
        config = TrainConfig(epochs=40, max_batch_size=32, learning_rate=0.01,
                             shuffle_seed=3)
        train_llp(model, x, bags, config)
        labels = predict(model, x).argmax(axis=1)
        truth = np.array([0] * n + [1] * n)
        assert np.mean(labels == truth) >= 0.98

    def test_zero_epochs_is_noop(self):
        model = init_model([dense(4)], 2, 2, rng=Rng(4))
        before = [p.copy() for p in model.params]
        history = train_llp(model, np.zeros((4, 2)), [Bag((0, 1), (0.5, 0.5))],
                            TrainConfig(epochs=0))
        assert history == []
        for p, q in zip(model.params, before):
            np.testing.assert_array_equal(p, q)

    def test_empty_bags_rejected(self):
        model = init_model([], 2, 2, rng=Rng(5))
        with pytest.raises(UsageError):
            train_llp(model, np.zeros((4, 2)), [], TrainConfig(epochs=1))

    def test_nonfinite_features_abort_with_bag_named(self):
        model = init_model([], 2, 2, rng=Rng(6))
        x = np.array([[np.inf, 0.0], [0.0, 1.0]])
        bag = Bag((0, 1), (0.5, 0.5), source="bad-bag")
        with np.errstate(invalid="ignore"):
            with pytest.raises(NumericError) as err:
                train_llp(model, x, [bag], TrainConfig(epochs=1))
        assert "bad-bag" in str(err.value)

    def test_wrong_class_count_rejected(self):
        model = init_model([], 2, 3, rng=Rng(7))
        with pytest.raises(ShapeError):
            train_llp(model, np.zeros((2, 2)), [Bag((0,), (0.5, 0.5))],
                      TrainConfig(epochs=1))

    def test_training_is_reproducible(self):
        def fit():
            rng = Rng(8)
            x = rng.substream("x").normal(size=(40, 3))
            bags = [Bag(tuple(range(i, i + 10)), (0.6, 0.4)) for i in range(0, 40, 10)]
            model = init_model([dense(5)], 3, 2, rng=Rng(9))
            history = train_llp(model, x, bags, TrainConfig(epochs=5, shuffle_seed=8))
            return history, model.params

        h1, p1 = fit()
        h2, p2 = fit()
        assert h1 == h2
        for a, b in zip(p1, p2):
            np.testing.assert_array_equal(a, b)

    def test_resume_matches_uninterrupted(self):
        rng = Rng(10)
        x = rng.substream("x").normal(size=(40, 3))
        bags = [Bag(tuple(range(i, i + 10)), (0.7, 0.3)) for i in range(0, 40, 10)]

        from dllp.network import AdamState
        straight = init_model([dense(5)], 3, 2, rng=Rng(11))
        state_a = AdamState(learning_rate=1e-3)
        h_straight = train_llp(straight, x, bags, TrainConfig(epochs=6, shuffle_seed=10),
                               adam_state=state_a)

        resumed = init_model([dense(5)], 3, 2, rng=Rng(11))
        state_b = AdamState(learning_rate=1e-3)
        h1 = train_llp(resumed, x, bags, TrainConfig(epochs=3, shuffle_seed=10),
                       adam_state=state_b)
        h2 = train_llp(resumed, x, bags, TrainConfig(epochs=6, shuffle_seed=10),
                       adam_state=state_b, start_epoch=3)
        assert h1 + h2 == h_straight
        for a, b in zip(straight.params, resumed.params):
            np.testing.assert_array_equal(a, b)


class TestBagIo:
    def test_roundtrip(self, tmp_path):
        bags = [Bag((0, 2, 4), (0.25, 0.75), source="county"),
                Bag((1,), (1.0, 0.0), source="pseudo")]
        path = tmp_path / "bags.jsonl"
        save_bags(path, bags)
        assert load_bags(path) == bags

    def test_malformed_line_reports_line_number(self, tmp_path):
        path = tmp_path / "bags.jsonl"
        path.write_text('{"source": "a", "proportions": [0.5, 0.5], "instances": [0]}\n'
                        "not json\n")
        with pytest.raises(DataError) as err:
            load_bags(path)
        assert "line 2" in str(err.value)

    def test_invalid_bag_rejected(self, tmp_path):
        path = tmp_path / "bags.jsonl"
        path.write_text('{"source": "a", "proportions": [0.9, 0.9], "instances": [0]}\n')
        with pytest.raises(ShapeError):
            load_bags(path)
