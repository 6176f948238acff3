"""Selection policies behind a single interface.

The harness talks to every policy the same way: select() ranks the round's
candidate offers without mutating model state, update() folds in the
observed reward for one offer. The category-level bandit (policy key
"camb") works on per-category contexts; the baselines score the flattened
offer-level vector, which is the purchase-share weighted average of the
offer's category contexts.

Baselines:
    linucb   shared-parameter LinUCB: ridge point estimate plus an
             alpha-scaled confidence-width bonus per offer
    ts       Gaussian linear Thompson sampling: one posterior draw of the
             weight vector per round, offers ranked by sampled score
    egreedy  epsilon-greedy around an online logistic model, with optional
             1/t epsilon decay
    random   uniform random ranking, the no-learning control
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Protocol, Sequence

import numpy as np

from .bandit import (
    CategoryModel,
    LearnerConfig,
    ModelStore,
    aggregate_offer,
    predict_category,
    sgd_update,
)
from .errors import ConfigError
from .exploration import ExplorationConfig, kappa_at, sample_scores
from .features import N_FEATURES

EPSILON_DECAYS = ("constant", "inverse_t")


@dataclass
class OfferCandidate:
    """Everything a policy may look at for one offer in one round.

    category_vectors hold the normalized context per offer category;
    offer_vector is their purchase-share weighted average. true_p is only
    set by synthetic worlds and is read by nothing except the oracle
    policy and the metrics.
    """

    offer_id: str
    member_id: str
    category_vectors: dict[str, np.ndarray]
    shares: dict[str, float]
    mf_score: float
    offer_vector: np.ndarray
    true_p: float | None = None


@dataclass
class Ranking:
    """Ranked offer ids plus the scores that produced the order.

    scores are the policy's deterministic scores; sampled are the
    randomized scores actually used for ordering, when the policy
    randomizes (None otherwise).
    """

    order: list[str]
    scores: dict[str, float]
    sampled: dict[str, float] | None = None

    @property
    def top(self) -> str:
        return self.order[0]


# (member_id, category_id, weights copy, update_count) emitted per update,
# consumed by the weight-trajectory recorder.
ModelDelta = tuple[str, str, np.ndarray, int]


class Policy(Protocol):
    name: str

    def select(self, candidates: Sequence[OfferCandidate], rng: np.random.Generator, t: int) -> Ranking:
        """Rank candidates for round t (1-based). Must not mutate state."""
        ...

    def update(self, candidate: OfferCandidate, reward: int) -> list[ModelDelta]:
        """Fold in the observed reward for one offer."""
        ...


def _ordered(scores: Mapping[str, float]) -> list[str]:
    return sorted(scores, key=lambda oid: (-scores[oid], oid))


class CambPolicy:
    """Category-level contextual bandit with Beta-sampled exploration.

    Per candidate offer: predict a clip probability from each of the
    offer's (member, category) models, aggregate to an offer-level
    probability, then rank by a Beta(kappa*p, kappa*(1-p)) draw with kappa
    following the configured schedule.
    """

    name = "camb"

    def __init__(self, store: ModelStore, learner: LearnerConfig, exploration: ExplorationConfig):
        self.store = store
        self.learner = learner
        self.exploration = exploration

    def offer_probability(self, candidate: OfferCandidate) -> float:
        category_probs = {
            c: self.store.predict(candidate.member_id, c, x)
            for c, x in candidate.category_vectors.items()
        }
        return aggregate_offer(category_probs, candidate.shares, candidate.mf_score, self.learner)

    def select(self, candidates: Sequence[OfferCandidate], rng: np.random.Generator, t: int) -> Ranking:
        probs = {c.offer_id: self.offer_probability(c) for c in candidates}
        kappa = kappa_at(t - 1, self.exploration)
        sampled = sample_scores(probs, kappa, rng, self.exploration.probability_clamp)
        return Ranking(order=_ordered(sampled), scores=probs, sampled=sampled)

    def update(self, candidate: OfferCandidate, reward: int) -> list[ModelDelta]:
        deltas: list[ModelDelta] = []
        for category in sorted(candidate.category_vectors):
            model = self.store.get(candidate.member_id, category)
            sgd_update(model, candidate.category_vectors[category], reward, self.learner)
            deltas.append((candidate.member_id, category, model.weights.copy(), model.update_count))
        return deltas


class LinUCBPolicy:
    """Shared-parameter LinUCB on offer-level vectors.

    Keeps A = l2_lambda * I + sum(x x^T) and b = sum(r x); scores are
    x . theta_hat + alpha_explore * sqrt(x^T A^-1 x).
    """

    name = "linucb"

    def __init__(self, alpha_explore: float = 1.0, l2_lambda: float = 1.0, dim: int = N_FEATURES):
        if alpha_explore < 0:
            raise ConfigError(f"alpha_explore must be >= 0, got {alpha_explore}")
        if l2_lambda <= 0:
            raise ConfigError(f"l2_lambda must be positive, got {l2_lambda}")
        self.alpha_explore = alpha_explore
        self.A = l2_lambda * np.eye(dim)
        self.b = np.zeros(dim)

    def theta(self) -> np.ndarray:
        return np.linalg.solve(self.A, self.b)

    def score(self, x: np.ndarray) -> float:
        width = float(x @ np.linalg.solve(self.A, x))
        return float(x @ self.theta()) + self.alpha_explore * np.sqrt(width)

    def select(self, candidates: Sequence[OfferCandidate], rng: np.random.Generator, t: int) -> Ranking:
        theta = self.theta()
        scores = {}
        for c in candidates:
            x = c.offer_vector
            width = float(x @ np.linalg.solve(self.A, x))
            scores[c.offer_id] = float(x @ theta) + self.alpha_explore * np.sqrt(width)
        return Ranking(order=_ordered(scores), scores=scores)

    def update(self, candidate: OfferCandidate, reward: int) -> list[ModelDelta]:
        x = candidate.offer_vector
        self.A += np.outer(x, x)
        self.b += reward * x
        return []


class ThompsonPolicy:
    """Gaussian linear Thompson sampling on offer-level vectors.

    Posterior N(mu, v^2 B^-1) with B = l2_lambda * I + sum(x x^T) and
    mu = B^-1 sum(r x). One weight draw per round ranks all candidates;
    v=0 degenerates to the deterministic posterior-mean ranking.
    """

    name = "ts"

    def __init__(self, v: float = 0.25, l2_lambda: float = 1.0, dim: int = N_FEATURES):
        if v < 0:
            raise ConfigError(f"v must be >= 0, got {v}")
        if l2_lambda <= 0:
            raise ConfigError(f"l2_lambda must be positive, got {l2_lambda}")
        self.v = v
        self.B = l2_lambda * np.eye(dim)
        self.f = np.zeros(dim)

    def posterior_mean(self) -> np.ndarray:
        return np.linalg.solve(self.B, self.f)

    def select(self, candidates: Sequence[OfferCandidate], rng: np.random.Generator, t: int) -> Ranking:
        mu = self.posterior_mean()
        if self.v == 0:
            theta = mu
        else:
            # theta = mu + v * L^-T z has covariance v^2 B^-1 for B = L L^T.
            L = np.linalg.cholesky(self.B)
            z = rng.standard_normal(len(mu))
            theta = mu + self.v * np.linalg.solve(L.T, z)
        scores = {c.offer_id: float(c.offer_vector @ mu) for c in candidates}
        sampled = {c.offer_id: float(c.offer_vector @ theta) for c in candidates}
        return Ranking(order=_ordered(sampled), scores=scores, sampled=sampled)

    def update(self, candidate: OfferCandidate, reward: int) -> list[ModelDelta]:
        x = candidate.offer_vector
        self.B += np.outer(x, x)
        self.f += reward * x
        return []


class EpsilonGreedyPolicy:
    """Epsilon-greedy around one shared online logistic model.

    With probability epsilon_t the round's ranking is a uniformly random
    permutation; otherwise offers are ranked by the model's predicted
    probability. decay="inverse_t" uses epsilon_0 / t (t >= 1).
    """

    name = "egreedy"

    def __init__(self, epsilon: float = 0.1, decay: str = "constant",
                 learner: LearnerConfig | None = None, dim: int = N_FEATURES):
        if not (0.0 <= epsilon <= 1.0):
            raise ConfigError(f"epsilon must be in [0, 1], got {epsilon}")
        if decay not in EPSILON_DECAYS:
            raise ConfigError(f"unknown epsilon decay {decay!r}")
        self.epsilon = epsilon
        self.decay = decay
        self.learner = learner or LearnerConfig()
        self.model = CategoryModel(self.learner.prior_array())

    def epsilon_at(self, t: int) -> float:
        if self.decay == "constant":
            return self.epsilon
        if t < 1:
            raise ValueError(f"inverse_t decay needs t >= 1, got {t}")
        return self.epsilon / t

    def select(self, candidates: Sequence[OfferCandidate], rng: np.random.Generator, t: int) -> Ranking:
        scores = {c.offer_id: predict_category(self.model, c.offer_vector) for c in candidates}
        if rng.random() < self.epsilon_at(t):
            ids = sorted(scores)
            order = [ids[i] for i in rng.permutation(len(ids))]
            return Ranking(order=order, scores=scores)
        return Ranking(order=_ordered(scores), scores=scores)

    def update(self, candidate: OfferCandidate, reward: int) -> list[ModelDelta]:
        sgd_update(self.model, candidate.offer_vector, reward, self.learner)
        return []


class RandomPolicy:
    """Uniform random ranking; the sanity floor for every comparison."""

    name = "random"

    def select(self, candidates: Sequence[OfferCandidate], rng: np.random.Generator, t: int) -> Ranking:
        ids = sorted(c.offer_id for c in candidates)
        order = [ids[i] for i in rng.permutation(len(ids))]
        return Ranking(order=order, scores={oid: 0.0 for oid in ids})

    def update(self, candidate: OfferCandidate, reward: int) -> list[ModelDelta]:
        return []


POLICY_NAMES = ("camb", "linucb", "ts", "egreedy", "random")


def make_policy(
    name: str,
    learner: LearnerConfig,
    exploration: ExplorationConfig,
    *,
    store: ModelStore | None = None,
    alpha_explore: float = 1.0,
    linucb_l2: float = 1.0,
    ts_v: float = 0.25,
    ts_l2: float = 1.0,
    epsilon: float = 0.1,
    epsilon_decay: str = "constant",
) -> Policy:
    if name == "camb":
        # `store or ...` would drop an empty store (ModelStore defines len).
        if store is None:
            store = ModelStore.from_config(learner)
        return CambPolicy(store, learner, exploration)
    if name == "linucb":
        return LinUCBPolicy(alpha_explore=alpha_explore, l2_lambda=linucb_l2)
    if name == "ts":
        return ThompsonPolicy(v=ts_v, l2_lambda=ts_l2)
    if name == "egreedy":
        return EpsilonGreedyPolicy(epsilon=epsilon, decay=epsilon_decay, learner=learner)
    if name == "random":
        return RandomPolicy()
    raise ConfigError(f"unknown policy {name!r}; expected one of {POLICY_NAMES}")
