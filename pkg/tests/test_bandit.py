import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from offerbandit.bandit import (
    LOGIT_CLAMP,
    BackfitReport,
    CategoryModel,
    LearnerConfig,
    ModelStore,
    TrainingEvent,
    aggregate_offer,
    backfit,
    load_checkpoint,
    log_loss,
    logit,
    predict_category,
    renormalize_shares,
    save_checkpoint,
    sgd_update,
    sigmoid,
)
from offerbandit.errors import ConfigError
from offerbandit.features import FEATURE_NAMES, N_FEATURES


class TestSigmoid:
    def test_known_values(self):
        assert sigmoid(0.0) == 0.5
        assert sigmoid(1.0) == pytest.approx(0.7310585786300049, rel=1e-12)
        assert sigmoid(-1.0) == pytest.approx(1.0 - 0.7310585786300049, rel=1e-12)

    def test_stable_at_extreme_arguments(self):
        assert sigmoid(800.0) == 1.0
        assert sigmoid(-800.0) == pytest.approx(0.0, abs=1e-300)
        assert sigmoid(5000.0) == 1.0
        assert math.isfinite(sigmoid(-5000.0))

    @given(st.floats(-1e6, 1e6))
    def test_bounded_and_monotone(self, z):
        p = sigmoid(z)
        assert 0.0 <= p <= 1.0
        assert sigmoid(z + 1.0) >= p

    @given(st.floats(1e-6, 1 - 1e-6))
    def test_logit_inverts_sigmoid(self, p):
        assert sigmoid(logit(p)) == pytest.approx(p, rel=1e-9)


class TestPredict:
    def test_dot_product_through_sigmoid(self):
        w = np.zeros(N_FEATURES)
        w[0], w[1] = 0.3, -0.5
        x = np.zeros(N_FEATURES)
        x[0], x[1] = 1.0, 2.0
        model = CategoryModel(w)
        assert predict_category(model, x) == pytest.approx(sigmoid(0.3 - 1.0), rel=1e-12)

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ValueError, match="dim"):
            predict_category(CategoryModel(np.zeros(9)), np.zeros(4))


class TestSGDUpdate:
    def test_single_step_from_zero_weights(self):
        # From w=0 the prediction is 0.5, so the plain step on a positive
        # label is lr * 0.5 * x on every active feature.
        x = np.zeros(N_FEATURES)
        x[0], x[1] = 1.0, 1.0
        model = CategoryModel(np.zeros(N_FEATURES))
        sgd_update(model, x, 1, LearnerConfig(learning_rate=0.1, positive_boost=1.0))
        assert model.weights[0] == 0.1 * 0.5
        assert model.weights[1] == 0.1 * 0.5
        assert np.all(model.weights[2:] == 0.0)
        assert model.update_count == 1

    def test_positive_boost_doubles_that_step(self):
        x = np.zeros(N_FEATURES)
        x[0], x[1] = 1.0, 1.0
        model = CategoryModel(np.zeros(N_FEATURES))
        sgd_update(model, x, 1, LearnerConfig(learning_rate=0.1, positive_boost=2.0))
        assert model.weights[0] == 0.1
        assert model.weights[1] == 0.1

    @given(st.floats(1.0, 8.0), st.integers(0, 2**32 - 1))
    def test_boosted_positive_step_is_exactly_alpha_times_plain(self, alpha, seed):
        # Bitwise equality, not approximate: the boost scales the step
        # vector itself. Differencing final weights would reintroduce
        # addition rounding, so the plain step is recomputed independently
        # and the boosted result compared against w0 + alpha * step.
        rng = np.random.default_rng(seed)
        w0 = rng.normal(0.0, 0.5, N_FEATURES)
        x = rng.normal(0.0, 1.0, N_FEATURES)
        plain = CategoryModel(w0.copy())
        sgd_update(plain, x, 1, LearnerConfig(learning_rate=0.05, positive_boost=1.0))
        boosted = CategoryModel(w0.copy())
        sgd_update(boosted, x, 1, LearnerConfig(learning_rate=0.05, positive_boost=alpha))
        p = sigmoid(float(w0 @ x))
        step = (0.05 * (1.0 - p)) * x
        np.testing.assert_array_equal(plain.weights, w0 + step)
        np.testing.assert_array_equal(boosted.weights, w0 + alpha * step)

    def test_negative_label_step_is_never_boosted(self, rng):
        w0 = rng.normal(0.0, 0.5, N_FEATURES)
        x = rng.normal(0.0, 1.0, N_FEATURES)
        a = CategoryModel(w0.copy())
        sgd_update(a, x, 0, LearnerConfig(learning_rate=0.05, positive_boost=1.0))
        b = CategoryModel(w0.copy())
        sgd_update(b, x, 0, LearnerConfig(learning_rate=0.05, positive_boost=7.0))
        np.testing.assert_array_equal(a.weights, b.weights)

    def test_matches_analytic_gradient(self, rng):
        for _ in range(20):
            w0 = rng.normal(0.0, 0.4, N_FEATURES)
            x = rng.normal(0.0, 1.0, N_FEATURES)
            y = int(rng.integers(0, 2))
            model = CategoryModel(w0.copy())
            cfg = LearnerConfig(learning_rate=0.03, positive_boost=1.0)
            p = predict_category(model, x)
            sgd_update(model, x, y, cfg)
            np.testing.assert_allclose(
                model.weights - w0, 0.03 * (y - p) * x, rtol=1e-12, atol=1e-15
            )

    def test_l2_decay_shrinks_toward_zero(self):
        w0 = np.full(N_FEATURES, 2.0)
        x = np.zeros(N_FEATURES)
        model = CategoryModel(w0.copy())
        cfg = LearnerConfig(learning_rate=0.1, positive_boost=1.0, l2_lambda=0.5)
        sgd_update(model, x, 0, cfg)
        # With x=0 the only movement is the decay term -lr*l2*w.
        np.testing.assert_allclose(model.weights, w0 - 0.1 * 0.5 * w0, rtol=1e-12)

    def test_repeated_positives_raise_prediction(self):
        x = np.ones(N_FEATURES)
        model = CategoryModel(np.zeros(N_FEATURES))
        cfg = LearnerConfig()
        last = predict_category(model, x)
        for _ in range(30):
            sgd_update(model, x, 1, cfg)
            p = predict_category(model, x)
            assert p > last
            last = p

    def test_divergence_raises_instead_of_propagating_nan(self):
        x = np.full(N_FEATURES, 100.0)
        x[0] = 1.0
        model = CategoryModel(np.zeros(N_FEATURES))
        with np.errstate(over="ignore"):
            with pytest.raises(ValueError, match="diverged|finite"):
                sgd_update(model, x, 1, LearnerConfig(learning_rate=1e308))

    def test_bad_label_rejected(self):
        with pytest.raises(ValueError, match="label"):
            sgd_update(CategoryModel(np.zeros(9)), np.zeros(9), 2, LearnerConfig())


class TestLearnerConfig:
    def test_validation(self):
        with pytest.raises(ConfigError):
            LearnerConfig(learning_rate=0.0)
        with pytest.raises(ConfigError):
            LearnerConfig(positive_boost=0.5)
        with pytest.raises(ConfigError):
            LearnerConfig(l2_lambda=-0.1)
        with pytest.raises(ConfigError):
            LearnerConfig(prior_weights=(1.0, 2.0))

    def test_prior_array(self):
        assert np.all(LearnerConfig().prior_array() == 0.0)
        prior = tuple(float(i) for i in range(N_FEATURES))
        np.testing.assert_array_equal(
            LearnerConfig(prior_weights=prior).prior_array(), np.arange(N_FEATURES)
        )


class TestAggregation:
    def test_two_category_logit_average_with_mf_bias(self):
        cfg = LearnerConfig(mf_bias_coeff=1.0)
        got = aggregate_offer({"a": 0.7, "b": 0.9}, {"a": 0.5, "b": 0.5}, 0.2, cfg)
        z = 0.5 * math.log(0.7 / 0.3) + 0.5 * math.log(0.9 / 0.1) + 0.2
        assert got == pytest.approx(1.0 / (1.0 + math.exp(-z)), rel=1e-12)

    def test_single_category_is_identity_without_mf(self):
        cfg = LearnerConfig(mf_bias_coeff=0.0)
        assert aggregate_offer({"a": 0.3}, {}, 0.9, cfg) == pytest.approx(0.3, rel=1e-9)

    def test_shares_renormalized_over_offer_categories(self):
        cfg = LearnerConfig(mf_bias_coeff=0.0)
        # Shares 0.2/0.2 over these two categories act like 0.5/0.5.
        a = aggregate_offer({"a": 0.6, "b": 0.8}, {"a": 0.2, "b": 0.2, "zzz": 0.6}, 0.0, cfg)
        b = aggregate_offer({"a": 0.6, "b": 0.8}, {"a": 0.5, "b": 0.5}, 0.0, cfg)
        assert a == pytest.approx(b, rel=1e-12)

    def test_no_history_falls_back_to_uniform(self):
        cfg = LearnerConfig(mf_bias_coeff=0.0)
        got = aggregate_offer({"a": 0.2, "b": 0.6}, {}, 0.0, cfg)
        z = 0.5 * logit(0.2) + 0.5 * logit(0.6)
        assert got == pytest.approx(sigmoid(z), rel=1e-12)

    def test_extreme_probabilities_are_clamped_not_fatal(self):
        cfg = LearnerConfig(mf_bias_coeff=0.0)
        lo = aggregate_offer({"a": 0.0}, {}, 0.0, cfg)
        hi = aggregate_offer({"a": 1.0}, {}, 0.0, cfg)
        assert lo == pytest.approx(LOGIT_CLAMP, rel=1e-6)
        assert hi == pytest.approx(1.0 - LOGIT_CLAMP, rel=1e-6)

    def test_empty_categories_rejected(self):
        with pytest.raises(ValueError):
            aggregate_offer({}, {}, 0.0, LearnerConfig())

    @given(st.floats(0.05, 0.95), st.floats(0.05, 0.95), st.floats(-1.0, 1.0))
    def test_monotone_in_each_input(self, pa, pb, mf):
        cfg = LearnerConfig(mf_bias_coeff=1.0)
        base = aggregate_offer({"a": pa, "b": pb}, {}, mf, cfg)
        assert aggregate_offer({"a": min(pa + 0.02, 0.97), "b": pb}, {}, mf, cfg) > base
        assert aggregate_offer({"a": pa, "b": pb}, {}, mf + 0.1, cfg) > base

    def test_renormalize_shares(self):
        assert renormalize_shares(["a", "b"], {"a": 0.2, "b": 0.6}) == pytest.approx(
            {"a": 0.25, "b": 0.75}
        )
        assert renormalize_shares(["a", "b"], {}) == {"a": 0.5, "b": 0.5}
        assert renormalize_shares(["a"], {"a": -3.0}) == {"a": 1.0}


class TestModelStore:
    def test_reads_do_not_materialize_models(self):
        store = ModelStore()
        x = np.zeros(N_FEATURES)
        x[0] = 1.0
        assert store.predict("m1", "c1", x) == 0.5
        np.testing.assert_array_equal(store.weights_for("m1", "c1"), store.prior)
        assert len(store) == 0
        assert ("m1", "c1") not in store

    def test_get_materializes_a_copy_of_the_prior(self):
        prior = np.full(N_FEATURES, 0.25)
        store = ModelStore(prior)
        model = store.get("m1", "c1")
        model.weights[3] = 9.0
        assert store.prior[3] == 0.25
        assert len(store) == 1
        # A second pair still starts from the untouched prior.
        np.testing.assert_array_equal(store.weights_for("m2", "c1"), prior)

    def test_update_isolated_per_pair(self):
        store = ModelStore()
        x = np.ones(N_FEATURES)
        sgd_update(store.get("m1", "c1"), x, 1, LearnerConfig())
        assert store.predict("m1", "c1", x) > 0.5
        assert store.predict("m1", "c2", x) == 0.5
        assert store.predict("m2", "c1", x) == 0.5

    def test_from_config_uses_prior(self):
        prior = tuple([0.1] * N_FEATURES)
        store = ModelStore.from_config(LearnerConfig(prior_weights=prior))
        np.testing.assert_allclose(store.prior, 0.1)


class TestBackfit:
    def event(self, t, x, y, member="m1", category="c1"):
        return TrainingEvent(t=t, member_id=member, category_id=category, x=x, y=y)

    def test_empty_events_flagged_and_store_untouched(self):
        store = ModelStore()
        report = backfit(store, [], LearnerConfig())
        assert report == BackfitReport(0, 0, 0, None, None, empty=True)
        assert len(store) == 0

    def test_single_positive_event_applies_one_boosted_step(self):
        x = np.zeros(N_FEATURES)
        x[0], x[5] = 1.0, 2.0
        store = ModelStore()
        cfg = LearnerConfig(learning_rate=0.1, positive_boost=2.0)
        report = backfit(store, [self.event(0, x, 1)], cfg)
        assert report.n_updates == 1
        np.testing.assert_allclose(
            store.weights_for("m1", "c1"), 2.0 * 0.1 * 0.5 * x, rtol=1e-12
        )

    def test_unsorted_events_rejected(self):
        x = np.ones(N_FEATURES)
        events = [self.event(5, x, 1), self.event(3, x, 0)]
        with pytest.raises(ValueError, match="sorted"):
            backfit(ModelStore(), events, LearnerConfig())

    def test_holdout_beats_prior_on_learnable_stream(self, rng):
        true_w = np.zeros(N_FEATURES)
        true_w[0], true_w[1], true_w[2] = -0.5, 1.2, -0.9
        events = []
        for t in range(600):
            x = rng.normal(0.0, 1.0, N_FEATURES)
            x[0] = 1.0
            y = int(rng.random() < sigmoid(float(true_w @ x)))
            events.append(self.event(t, x, y))
        store = ModelStore()
        report = backfit(store, events, LearnerConfig(learning_rate=0.1, positive_boost=1.0))
        assert report.n_events == 600
        assert report.holdout_size == 60
        assert report.holdout_log_loss < report.prior_log_loss

    def test_holdout_is_final_tenth_scored_before_update(self):
        # Alternating labels on identical contexts: the prior scores log(2)
        # on every event no matter what the model learned earlier.
        x = np.zeros(N_FEATURES)
        x[0] = 1.0
        events = [self.event(t, x, t % 2) for t in range(20)]
        report = backfit(ModelStore(), events, LearnerConfig(learning_rate=0.01))
        assert report.holdout_size == 2
        assert report.prior_log_loss == pytest.approx(math.log(2.0), rel=1e-12)


class TestCheckpoint:
    def test_round_trip(self, tmp_path, rng):
        cfg = LearnerConfig(learning_rate=0.07, positive_boost=3.0)
        store = ModelStore(np.full(N_FEATURES, 0.05))
        for member, category in [("m1", "c1"), ("m1", "c2"), ("m2", "c1")]:
            for _ in range(3):
                x = rng.normal(0.0, 1.0, N_FEATURES)
                sgd_update(store.get(member, category), x, int(rng.integers(0, 2)), cfg)
        path = tmp_path / "checkpoint.jsonl"
        save_checkpoint(path, store, cfg)
        loaded, header = load_checkpoint(path)
        assert header["learning_rate"] == 0.07
        assert header["feature_names"] == list(FEATURE_NAMES)
        assert header["n_models"] == 3
        np.testing.assert_array_equal(loaded.prior, store.prior)
        original = store.items_sorted()
        restored = loaded.items_sorted()
        assert [k for k, _ in restored] == [k for k, _ in original]
        for (_, a), (_, b) in zip(restored, original):
            np.testing.assert_array_equal(a.weights, b.weights)
            assert a.update_count == b.update_count

    def test_version_mismatch_rejected(self, tmp_path):
        path = tmp_path / "checkpoint.jsonl"
        save_checkpoint(path, ModelStore(), LearnerConfig())
        lines = path.read_text(encoding="utf-8").splitlines()
        header = json.loads(lines[0])
        header["feature_order_version"] = 999
        path.write_text("\n".join([json.dumps(header)] + lines[1:]) + "\n", encoding="utf-8")
        with pytest.raises(ValueError, match="version"):
            load_checkpoint(path)


def test_log_loss_clamps_probabilities():
    assert log_loss(0.0, 1) == pytest.approx(-math.log(1e-12))
    assert log_loss(1.0, 0) == pytest.approx(-math.log(1e-12), rel=1e-3)
    assert log_loss(0.25, 0) == pytest.approx(-math.log(0.75), rel=1e-12)
