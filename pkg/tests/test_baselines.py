from collections import Counter

import numpy as np
import pytest

from offerbandit.bandit import (
    CategoryModel,
    LearnerConfig,
    ModelStore,
    aggregate_offer,
    predict_category,
    sgd_update,
)
from offerbandit.baselines import (
    POLICY_NAMES,
    CambPolicy,
    EpsilonGreedyPolicy,
    LinUCBPolicy,
    RandomPolicy,
    Ranking,
    ThompsonPolicy,
    make_policy,
)
from offerbandit.errors import ConfigError
from offerbandit.exploration import ExplorationConfig
from offerbandit.features import N_FEATURES


def basis_candidates(factory, k=4, dim=4, scale=1.0):
    eye = np.eye(dim) * scale
    return [factory(f"o{i}", eye[i]) for i in range(k)]


class TestLinUCB:
    def test_fresh_score_is_alpha_times_norm(self):
        policy = LinUCBPolicy(alpha_explore=1.0, l2_lambda=1.0, dim=2)
        assert policy.score(np.array([3.0, 4.0])) == pytest.approx(5.0, rel=1e-12)
        policy2 = LinUCBPolicy(alpha_explore=0.5, l2_lambda=1.0, dim=2)
        assert policy2.score(np.array([3.0, 4.0])) == pytest.approx(2.5, rel=1e-12)

    def test_hand_worked_state(self):
        policy = LinUCBPolicy(alpha_explore=1.0, l2_lambda=1.0, dim=2)
        policy.A = np.diag([2.0, 1.0])
        policy.b = np.array([1.0, 0.0])
        x = np.array([1.0, 1.0])
        # theta = (0.5, 0); width = 1/2 + 1 = 1.5
        assert policy.score(x) == pytest.approx(0.5 + np.sqrt(1.5), rel=1e-12)

    def test_online_estimate_equals_batch_ridge(self, rng, candidate_factory):
        lam = 2.0
        policy = LinUCBPolicy(alpha_explore=1.0, l2_lambda=lam)
        X = rng.normal(0.0, 1.0, size=(200, N_FEATURES))
        r = rng.integers(0, 2, size=200)
        for x, reward in zip(X, r):
            policy.update(candidate_factory("o0", x), int(reward))
        batch = np.linalg.solve(lam * np.eye(N_FEATURES) + X.T @ X, X.T @ r)
        np.testing.assert_allclose(policy.theta(), batch, rtol=1e-8, atol=1e-10)

    def test_select_is_pure(self, rng, candidate_factory):
        policy = LinUCBPolicy(dim=4)
        cands = basis_candidates(candidate_factory)
        a_before, b_before = policy.A.copy(), policy.b.copy()
        first = policy.select(cands, rng, 1)
        second = policy.select(cands, rng, 2)
        np.testing.assert_array_equal(policy.A, a_before)
        np.testing.assert_array_equal(policy.b, b_before)
        assert first.scores == second.scores

    def test_update_accumulates_design_and_response(self, candidate_factory):
        policy = LinUCBPolicy(l2_lambda=1.0, dim=3)
        x = np.array([1.0, 2.0, 0.0])
        policy.update(candidate_factory("o0", x), 1)
        np.testing.assert_allclose(policy.A, np.eye(3) + np.outer(x, x))
        np.testing.assert_allclose(policy.b, x)
        policy.update(candidate_factory("o0", x), 0)
        np.testing.assert_allclose(policy.b, x)  # zero reward adds nothing

    def test_exploration_bonus_prefers_unseen_directions(self, rng, candidate_factory):
        policy = LinUCBPolicy(alpha_explore=1.0, l2_lambda=1.0, dim=2)
        seen = candidate_factory("seen", np.array([1.0, 0.0]))
        unseen = candidate_factory("unseen", np.array([0.0, 1.0]))
        for _ in range(50):
            policy.update(seen, 1)
        ranking = policy.select([seen, unseen], rng, 1)
        widths = {
            oid: float(c.offer_vector @ np.linalg.solve(policy.A, c.offer_vector))
            for oid, c in (("seen", seen), ("unseen", unseen))
        }
        assert widths["unseen"] > widths["seen"]
        assert ranking.scores["seen"] > ranking.scores["unseen"]  # mean term dominates here

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            LinUCBPolicy(alpha_explore=-1.0)
        with pytest.raises(ConfigError):
            LinUCBPolicy(l2_lambda=0.0)


class TestThompson:
    def test_posterior_mean_equals_ridge(self, rng, candidate_factory):
        lam = 1.5
        policy = ThompsonPolicy(v=0.25, l2_lambda=lam)
        X = rng.normal(0.0, 1.0, size=(150, N_FEATURES))
        r = rng.integers(0, 2, size=150)
        for x, reward in zip(X, r):
            policy.update(candidate_factory("o0", x), int(reward))
        batch = np.linalg.solve(lam * np.eye(N_FEATURES) + X.T @ X, X.T @ r)
        np.testing.assert_allclose(policy.posterior_mean(), batch, rtol=1e-8, atol=1e-10)

    def test_zero_noise_is_deterministic_mean_ranking(self, rng, candidate_factory):
        policy = ThompsonPolicy(v=0.0, l2_lambda=1.0, dim=4)
        cands = basis_candidates(candidate_factory)
        policy.update(cands[2], 1)
        orders = {tuple(policy.select(cands, rng, t).order) for t in range(1, 50)}
        assert len(orders) == 1
        assert next(iter(orders))[0] == "o2"

    def test_fresh_posterior_ranks_orthogonal_arms_uniformly(self, candidate_factory):
        policy = ThompsonPolicy(v=1.0, l2_lambda=1.0, dim=4)
        cands = basis_candidates(candidate_factory)
        rng = np.random.default_rng(3)
        tops = Counter(policy.select(cands, rng, t).top for t in range(1, 20_001))
        for oid in ("o0", "o1", "o2", "o3"):
            assert abs(tops[oid] / 20_000 - 0.25) < 0.02

    def test_sampled_scores_depart_from_means(self, candidate_factory):
        policy = ThompsonPolicy(v=1.0, l2_lambda=1.0, dim=4)
        cands = basis_candidates(candidate_factory)
        ranking = policy.select(cands, np.random.default_rng(0), 1)
        assert ranking.sampled is not None
        assert any(
            ranking.sampled[oid] != ranking.scores[oid] for oid in ranking.sampled
        )

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            ThompsonPolicy(v=-0.1)
        with pytest.raises(ConfigError):
            ThompsonPolicy(l2_lambda=0.0)


class TestEpsilonGreedy:
    def test_epsilon_schedule(self):
        constant = EpsilonGreedyPolicy(epsilon=0.3)
        assert constant.epsilon_at(1) == 0.3
        assert constant.epsilon_at(999) == 0.3
        decaying = EpsilonGreedyPolicy(epsilon=0.5, decay="inverse_t")
        assert decaying.epsilon_at(1) == 0.5
        assert decaying.epsilon_at(10) == 0.05
        with pytest.raises(ValueError):
            decaying.epsilon_at(0)

    def test_zero_epsilon_is_greedy_on_model_scores(self, rng, candidate_factory):
        policy = EpsilonGreedyPolicy(epsilon=0.0)
        policy.model.weights = np.zeros(N_FEATURES)
        policy.model.weights[1] = 1.0
        lo = np.zeros(N_FEATURES)
        hi = np.zeros(N_FEATURES)
        lo[1], hi[1] = -1.0, 2.0
        cands = [candidate_factory("lo", lo), candidate_factory("hi", hi)]
        for t in range(1, 30):
            assert policy.select(cands, rng, t).top == "hi"

    def test_full_epsilon_ranks_uniformly(self, candidate_factory):
        policy = EpsilonGreedyPolicy(epsilon=1.0)
        cands = [candidate_factory(f"o{i}", np.zeros(N_FEATURES)) for i in range(4)]
        rng = np.random.default_rng(5)
        tops = Counter(policy.select(cands, rng, t).top for t in range(1, 20_001))
        for oid in tops:
            assert abs(tops[oid] / 20_000 - 0.25) < 0.02

    def test_update_trains_the_shared_model(self, candidate_factory):
        policy = EpsilonGreedyPolicy(epsilon=0.0, learner=LearnerConfig(learning_rate=0.2))
        x = np.ones(N_FEATURES)
        before = predict_category(policy.model, x)
        policy.update(candidate_factory("o0", x), 1)
        assert predict_category(policy.model, x) > before
        assert policy.model.update_count == 1

    def test_greedy_ranking_invariant_to_weight_scaling(self, rng, candidate_factory):
        cands = [
            candidate_factory(f"o{i}", rng.normal(0.0, 1.0, N_FEATURES)) for i in range(5)
        ]
        w = rng.normal(0.0, 0.7, N_FEATURES)
        orders = []
        for scale in (1.0, 3.0, 0.25):
            policy = EpsilonGreedyPolicy(epsilon=0.0)
            policy.model.weights = scale * w
            orders.append(policy.select(cands, np.random.default_rng(0), 1).order)
        assert orders[0] == orders[1] == orders[2]

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            EpsilonGreedyPolicy(epsilon=1.5)
        with pytest.raises(ConfigError):
            EpsilonGreedyPolicy(decay="linear")


class TestRandomPolicy:
    def test_uniform_over_candidates(self, candidate_factory):
        policy = RandomPolicy()
        cands = [candidate_factory(f"o{i}", np.zeros(3)) for i in range(4)]
        rng = np.random.default_rng(9)
        tops = Counter(policy.select(cands, rng, t).top for t in range(1, 20_001))
        for oid in tops:
            assert abs(tops[oid] / 20_000 - 0.25) < 0.02

    def test_update_is_a_no_op(self, candidate_factory):
        assert RandomPolicy().update(candidate_factory("o0", np.zeros(3)), 1) == []


class TestCambPolicy:
    def make(self, exploration=None):
        store = ModelStore()
        learner = LearnerConfig(mf_bias_coeff=1.0)
        return CambPolicy(store, learner, exploration or ExplorationConfig())

    def two_category_candidate(self, factory):
        xa = np.zeros(N_FEATURES)
        xb = np.zeros(N_FEATURES)
        xa[0] = xb[0] = 1.0
        xa[1], xb[2] = 0.8, -0.6
        return factory(
            "o0",
            0.5 * xa + 0.5 * xb,
            categories={"cA": xa, "cB": xb},
            shares={"cA": 0.5, "cB": 0.5},
            mf_score=0.3,
        )

    def test_offer_probability_matches_hand_aggregation(self, candidate_factory):
        policy = self.make()
        cand = self.two_category_candidate(candidate_factory)
        policy.store.get("m0", "cA").weights[:] = np.linspace(-0.5, 0.5, N_FEATURES)
        policy.store.get("m0", "cB").weights[:] = np.linspace(0.4, -0.4, N_FEATURES)
        expected = aggregate_offer(
            {
                "cA": policy.store.predict("m0", "cA", cand.category_vectors["cA"]),
                "cB": policy.store.predict("m0", "cB", cand.category_vectors["cB"]),
            },
            cand.shares,
            cand.mf_score,
            policy.learner,
        )
        assert policy.offer_probability(cand) == pytest.approx(expected, rel=1e-12)

    def test_huge_kappa_select_orders_by_probability(self, rng, candidate_factory):
        policy = self.make(ExplorationConfig(kappa_initial=1e8))
        lo = np.zeros(N_FEATURES)
        hi = np.zeros(N_FEATURES)
        lo[0] = hi[0] = 1.0
        hi[1] = 2.0
        policy.store.get("m0", "c0").weights[1] = 1.0
        cands = [candidate_factory("hi", hi), candidate_factory("lo", lo)]
        ranking = policy.select(cands, rng, 1)
        assert ranking.order == ["hi", "lo"]
        assert ranking.scores["hi"] > ranking.scores["lo"]
        assert set(ranking.sampled) == {"hi", "lo"}

    def test_select_does_not_materialize_or_mutate_models(self, rng, candidate_factory):
        policy = self.make()
        cand = self.two_category_candidate(candidate_factory)
        first = policy.select([cand], rng, 1)
        assert len(policy.store) == 0
        second = policy.select([cand], rng, 2)
        assert first.scores == second.scores

    def test_update_steps_every_category_once_and_reports_deltas(self, candidate_factory):
        policy = self.make()
        cand = self.two_category_candidate(candidate_factory)
        deltas = policy.update(cand, 1)
        assert [(m, c) for m, c, _, _ in deltas] == [("m0", "cA"), ("m0", "cB")]
        assert [n for _, _, _, n in deltas] == [1, 1]
        expected_a = CategoryModel(np.zeros(N_FEATURES))
        sgd_update(expected_a, cand.category_vectors["cA"], 1, policy.learner)
        np.testing.assert_array_equal(deltas[0][2], expected_a.weights)
        # Reported weights are copies, insulated from later updates.
        frozen = deltas[0][2].copy()
        policy.update(cand, 0)
        np.testing.assert_array_equal(deltas[0][2], frozen)

    def test_kappa_schedule_consumes_round_number(self, candidate_factory):
        # With linear growth, round 1 uses the initial kappa (origin t=0).
        policy = self.make(
            ExplorationConfig(kappa_initial=5.0, kappa_schedule="linear_growth",
                              kappa_growth_rate=1.0)
        )
        x = np.zeros(N_FEATURES)
        x[0] = 1.0
        cands = [candidate_factory("o0", x)]
        draws_round_1 = [
            policy.select(cands, np.random.default_rng(s), 1).sampled["o0"] for s in range(300)
        ]
        draws_round_9 = [
            policy.select(cands, np.random.default_rng(s), 9).sampled["o0"] for s in range(300)
        ]
        assert np.var(draws_round_9) < np.var(draws_round_1)


class TestTieBreaking:
    def test_equal_scores_order_lexicographically(self, rng, candidate_factory):
        policy = LinUCBPolicy(dim=3)
        x = np.array([1.0, 0.5, 0.0])
        cands = [candidate_factory(oid, x) for oid in ("zz", "aa", "mm")]
        ranking = policy.select(cands, rng, 1)
        assert ranking.order == ["aa", "mm", "zz"]

    def test_ranking_top_property(self):
        r = Ranking(order=["b", "a"], scores={"a": 0.1, "b": 0.2})
        assert r.top == "b"


class TestFactory:
    def test_all_known_policies_constructed(self):
        learner = LearnerConfig()
        expl = ExplorationConfig()
        for name in POLICY_NAMES:
            policy = make_policy(name, learner, expl)
            assert policy.name == name

    def test_unknown_policy_rejected(self):
        with pytest.raises(ConfigError, match="unknown policy"):
            make_policy("ucb1", LearnerConfig(), ExplorationConfig())

    def test_parameters_reach_the_policies(self):
        learner = LearnerConfig()
        expl = ExplorationConfig()
        lin = make_policy("linucb", learner, expl, alpha_explore=0.7, linucb_l2=3.0)
        assert lin.alpha_explore == 0.7
        assert lin.A[0, 0] == 3.0
        ts = make_policy("ts", learner, expl, ts_v=0.5, ts_l2=2.0)
        assert ts.v == 0.5
        eg = make_policy("egreedy", learner, expl, epsilon=0.25, epsilon_decay="inverse_t")
        assert eg.epsilon == 0.25 and eg.decay == "inverse_t"
        store = ModelStore()
        camb = make_policy("camb", learner, expl, store=store)
        assert camb.store is store
