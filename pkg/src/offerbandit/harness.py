"""Evaluation harness: simulated rounds, offline replay and metrics.

Both entry points drive the same round loop: build candidate contexts,
let the policy rank them, observe a reward for the top choice, update the
policy, log the round. run_synthetic scores against a world with known
ground truth, so regret and optimal-action rate are exact; run_replay
scores against logged impressions with a top-1 rejection-match estimator,
whose metrics are biased and labeled as such.

A single seeded RNG owned by the loop drives everything random; outputs
are byte-identical across reruns with the same config and seed.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .baselines import OfferCandidate, Policy, Ranking
from .bandit import LearnerConfig, aggregate_offer, renormalize_shares, sigmoid
from .data import Impression, MFScoreTable, Offer, Transaction
from .errors import ConfigError
from .features import (
    FEATURE_NAMES,
    FEATURE_ORDER_VERSION,
    MemberStatsIndex,
    N_FEATURES,
    RunningScaler,
    build_context,
    build_seasonality_profile,
)
from .interpret import TrajectoryStore


@dataclass
class RawCandidate:
    """A generated offer before normalization: raw per-category contexts
    plus the world's true clip probability."""

    offer_id: str
    category_raw: dict[str, np.ndarray]
    mf_score: float
    true_p: float


# Population moments of the synthetic feature generator, used to put the
# world's true logistic weights on the standardized feature scale. The
# learner's online scaler converges to the same standardization, so the
# true model is inside the learner's hypothesis class. The bias slot is
# left untouched.
_SQRT12 = float(np.sqrt(12.0))
SYNTHETIC_FEATURE_MEAN = np.array([0.0, 1.0, 0.5, 0.5, 0.5, 16.5, 5.25, 3.5, 0.0])
SYNTHETIC_FEATURE_STD = np.array(
    [1.0, float(np.sqrt(0.5)), float(np.sqrt(0.05)), 1.0 / _SQRT12, 1.0 / _SQRT12,
     27.0 / _SQRT12, 9.5 / _SQRT12, float(np.sqrt(35.0 / 12.0)), 0.5]
)


@dataclass
class SyntheticWorldConfig:
    """Shape and difficulty of the simulated environment."""

    n_categories: int = 5
    n_members: int = 4
    offers_per_round: int = 5
    max_categories_per_offer: int = 3
    weight_scale: float = 0.7
    bias_mean: float = -0.4
    bias_scale: float = 0.3
    mf_bias_coeff: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_categories < 1 or self.n_members < 1 or self.offers_per_round < 1:
            raise ConfigError("world sizes must be positive")
        if not (1 <= self.max_categories_per_offer <= self.n_categories):
            raise ConfigError(
                f"max_categories_per_offer must be in [1, {self.n_categories}], "
                f"got {self.max_categories_per_offer}"
            )


class SyntheticWorld:
    """Logistic-reward environment with known per-category weights.

    Each category holds a fixed weight vector drawn once from the world
    seed. A round presents offers_per_round candidate offers, each spanning
    one to max_categories_per_offer categories with freshly drawn features.
    An offer's true clip probability aggregates its per-category logistic
    probabilities exactly the way the learner does (uniform shares, same
    mf coefficient), computed on standardized features.
    """

    def __init__(self, config: SyntheticWorldConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        self.categories = [f"c{j}" for j in range(config.n_categories)]
        self.true_weights: dict[str, np.ndarray] = {}
        for c in self.categories:
            w = rng.normal(0.0, config.weight_scale, size=N_FEATURES)
            w[0] = rng.normal(config.bias_mean, config.bias_scale)
            self.true_weights[c] = w
        self._agg = LearnerConfig(mf_bias_coeff=config.mf_bias_coeff)

    @staticmethod
    def standardize(x: np.ndarray) -> np.ndarray:
        out = (x - SYNTHETIC_FEATURE_MEAN) / SYNTHETIC_FEATURE_STD
        out[0] = 1.0
        return out

    def true_probability(self, category_raw: Mapping[str, np.ndarray], mf_score: float) -> float:
        probs = {
            c: sigmoid(float(self.true_weights[c] @ self.standardize(x)))
            for c, x in category_raw.items()
        }
        return aggregate_offer(probs, {}, mf_score, self._agg)

    def generate_round(self, t: int, rng: np.random.Generator) -> tuple[str, list[RawCandidate]]:
        cfg = self.config
        member = f"m{int(rng.integers(cfg.n_members))}"
        candidates = []
        for i in range(cfg.offers_per_round):
            n_cats = int(rng.integers(1, cfg.max_categories_per_offer + 1))
            picks = rng.choice(cfg.n_categories, size=n_cats, replace=False)
            cats = sorted(self.categories[j] for j in picks)
            recency = rng.uniform(0.0, 1.0)
            duration = rng.uniform(3.0, 30.0)
            value = rng.uniform(0.5, 10.0)
            num_items = float(rng.integers(1, 7))
            mf_score = rng.normal(0.0, 0.5)
            raw = {}
            for c in cats:
                mpg = rng.gamma(2.0, 0.5)
                loyalty = rng.beta(2.0, 2.0)
                seasonality = rng.uniform(0.0, 1.0)
                raw[c] = np.array(
                    [1.0, mpg, loyalty, seasonality, recency, duration, value, num_items, mf_score]
                )
            candidates.append(
                RawCandidate(
                    offer_id=f"o{i:02d}",
                    category_raw=raw,
                    mf_score=mf_score,
                    true_p=self.true_probability(raw, mf_score),
                )
            )
        return member, candidates


class OraclePolicy:
    """Ranks by the world's true probabilities; the regret-zero reference."""

    name = "oracle"

    def select(self, candidates: Sequence[OfferCandidate], rng: np.random.Generator, t: int) -> Ranking:
        scores = {c.offer_id: float(c.true_p) for c in candidates}
        order = sorted(scores, key=lambda oid: (-scores[oid], oid))
        return Ranking(order=order, scores=scores)

    def update(self, candidate: OfferCandidate, reward: int):
        return []


@dataclass
class RoundRecord:
    """One logged round. y is None when the round produced no observable
    reward (unmatched replay rounds); oracle fields are None on replay."""

    t: int
    member_id: str
    ranked: list[tuple[str, float | None, float | None]]
    chosen: str
    y: int | None
    oracle_best: str | None = None
    oracle_p: float | None = None
    chosen_true_p: float | None = None
    matched: bool | None = None

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "member_id": self.member_id,
            "ranked": [[oid, s, ss] for oid, s, ss in self.ranked],
            "chosen": self.chosen,
            "y": self.y,
            "oracle_best": self.oracle_best,
            "oracle_p": self.oracle_p,
            "chosen_true_p": self.chosen_true_p,
            "matched": self.matched,
        }


@dataclass
class MetricsSummary:
    """Aggregate metrics; oracle-dependent fields are None on replay."""

    rounds: int
    cumulative_reward: int
    regret: float | None
    optimal_action_rate: float | None
    per_round_reward: list[float]
    matched_rounds: int | None
    estimator: str

    def to_dict(self) -> dict:
        return {
            "rounds": self.rounds,
            "cumulative_reward": self.cumulative_reward,
            "regret": self.regret,
            "optimal_action_rate": self.optimal_action_rate,
            "final_avg_reward": self.per_round_reward[-1] if self.per_round_reward else None,
            "matched_rounds": self.matched_rounds,
            "estimator": self.estimator,
        }


@dataclass
class RunResult:
    records: list[RoundRecord]
    summary: MetricsSummary
    trajectories: TrajectoryStore
    skip_tallies: dict[str, int] = field(default_factory=dict)


def compute_metrics(records: Sequence[RoundRecord]) -> MetricsSummary:
    """Recompute the metric set from round logs.

    cumulative_reward always equals the count of y=1 entries. The running
    per-round reward averages only rounds that produced a reward.
    """
    if not records:
        raise ValueError("compute_metrics needs at least one round")
    cumulative = 0
    rewarded = 0
    running: list[float] = []
    for r in records:
        if r.y is not None:
            cumulative += r.y
            rewarded += 1
            running.append(cumulative / rewarded)
    has_oracle = all(r.oracle_p is not None and r.chosen_true_p is not None for r in records)
    if has_oracle:
        regret = float(sum(r.oracle_p - r.chosen_true_p for r in records))
        optimal = sum(1 for r in records if r.chosen == r.oracle_best) / len(records)
        matched = None
        estimator = "synthetic-oracle"
    else:
        regret = None
        optimal = None
        matched = sum(1 for r in records if r.matched)
        estimator = "replay-match (biased: rewards observed only on matched rounds)"
    return MetricsSummary(
        rounds=len(records),
        cumulative_reward=cumulative,
        regret=regret,
        optimal_action_rate=optimal,
        per_round_reward=running,
        matched_rounds=matched,
        estimator=estimator,
    )


def _empty_summary(estimator: str) -> MetricsSummary:
    return MetricsSummary(0, 0, None, None, [], 0 if estimator.startswith("replay") else None, estimator)


def run_synthetic(
    world: SyntheticWorld,
    policy: Policy,
    rounds: int,
    seed: int,
    thin_every: int = 1,
) -> RunResult:
    """Run the policy for `rounds` simulated rounds.

    Per round: generate candidates, normalize their contexts through the
    shared online scaler, rank, reward the top choice with a Bernoulli draw
    on its true probability, update the policy with that single outcome.
    """
    if rounds < 1:
        raise ConfigError(f"rounds must be >= 1, got {rounds}")
    rng = np.random.default_rng(seed)
    scaler = RunningScaler()
    trajectories = TrajectoryStore(thin_every)
    records: list[RoundRecord] = []
    update_ordinal = 0
    for t in range(1, rounds + 1):
        member, raws = world.generate_round(t, rng)
        for rc in raws:
            for c in sorted(rc.category_raw):
                scaler.update(rc.category_raw[c])
        candidates = []
        for rc in raws:
            vectors = {c: scaler.transform(x) for c, x in sorted(rc.category_raw.items())}
            shares = renormalize_shares(sorted(vectors), {})
            offer_vector = np.zeros(N_FEATURES)
            for c, x in vectors.items():
                offer_vector += shares[c] * x
            candidates.append(
                OfferCandidate(
                    offer_id=rc.offer_id,
                    member_id=member,
                    category_vectors=vectors,
                    shares=shares,
                    mf_score=rc.mf_score,
                    offer_vector=offer_vector,
                    true_p=rc.true_p,
                )
            )
        by_id = {c.offer_id: c for c in candidates}
        ranking = policy.select(candidates, rng, t)
        chosen = by_id[ranking.top]
        y = 1 if rng.random() < chosen.true_p else 0
        for member_id, category_id, weights, update_count in policy.update(chosen, y):
            update_ordinal += 1
            trajectories.record(member_id, category_id, weights, update_count, update_ordinal)
        best = min(by_id.values(), key=lambda c: (-c.true_p, c.offer_id))
        records.append(
            RoundRecord(
                t=t,
                member_id=member,
                ranked=_ranked_entries(ranking),
                chosen=chosen.offer_id,
                y=y,
                oracle_best=best.offer_id,
                oracle_p=best.true_p,
                chosen_true_p=chosen.true_p,
            )
        )
    return RunResult(records, compute_metrics(records), trajectories)


def _ranked_entries(ranking: Ranking) -> list[tuple[str, float | None, float | None]]:
    return [
        (
            oid,
            ranking.scores.get(oid),
            ranking.sampled.get(oid) if ranking.sampled is not None else None,
        )
        for oid in ranking.order
    ]


@dataclass
class ReplayDataset:
    """The four ingested inputs bundled for replay."""

    transactions: list[Transaction]
    offers: list[Offer]
    impressions: list[Impression]
    mf_table: MFScoreTable = field(default_factory=MFScoreTable)

    def catalog(self) -> dict[str, Offer]:
        return {o.offer_id: o for o in self.offers}


def run_replay(
    dataset: ReplayDataset,
    policy: Policy,
    seed: int,
    *,
    cold_start_mpg: float = 1.0,
    default_cycle_days: float = 30.0,
    smoothing_window: int = 3,
    thin_every: int = 1,
) -> RunResult:
    """Evaluate the policy against logged impressions.

    Candidates for each impression are the catalog offers active on that
    date. A round counts toward metrics only when the policy's top choice
    was actually shown (rejection match); its reward is whether that offer
    was clipped. Every shown offer trains the policy with its logged
    outcome, clipped as y=1, shown-but-unclipped as y=0.
    """
    rng = np.random.default_rng(seed)
    stats = MemberStatsIndex(dataset.transactions, default_cycle_days)
    profile = build_seasonality_profile(dataset.transactions, smoothing_window)
    offers_sorted = sorted(dataset.offers, key=lambda o: o.offer_id)
    scaler = RunningScaler()
    trajectories = TrajectoryStore(thin_every)
    records: list[RoundRecord] = []
    skip = {"rounds_without_candidates": 0, "shown_offers_not_featurized": 0}
    update_ordinal = 0
    t = 0
    for imp in dataset.impressions:
        day = imp.timestamp.date()
        active = [o for o in offers_sorted if o.active_on(day)]
        if not active:
            skip["rounds_without_candidates"] += 1
            continue
        t += 1
        member = imp.member_id
        shares_map = stats.purchase_share(member)
        raw_by_offer: dict[str, dict[str, np.ndarray]] = {}
        for offer in active:
            raw_by_offer[offer.offer_id] = {
                c: build_context(
                    member, offer, c, day, stats.stats(member, c, day), profile,
                    dataset.mf_table, cold_start_mpg,
                ).values
                for c in sorted(offer.category_ids)
            }
        for oid in sorted(raw_by_offer):
            for c in sorted(raw_by_offer[oid]):
                scaler.update(raw_by_offer[oid][c])
        candidates = []
        for offer in active:
            vectors = {c: scaler.transform(x) for c, x in raw_by_offer[offer.offer_id].items()}
            shares = renormalize_shares(sorted(vectors), shares_map)
            offer_vector = np.zeros(N_FEATURES)
            for c, x in vectors.items():
                offer_vector += shares[c] * x
            candidates.append(
                OfferCandidate(
                    offer_id=offer.offer_id,
                    member_id=member,
                    category_vectors=vectors,
                    shares=shares,
                    mf_score=dataset.mf_table.score(member, offer.offer_id),
                    offer_vector=offer_vector,
                )
            )
        by_id = {c.offer_id: c for c in candidates}
        ranking = policy.select(candidates, rng, t)
        top = ranking.top
        matched = top in imp.offers_shown
        y = (1 if top in imp.clipped else 0) if matched else None
        for oid in imp.offers_shown:
            candidate = by_id.get(oid)
            if candidate is None:
                skip["shown_offers_not_featurized"] += 1
                continue
            outcome = 1 if oid in imp.clipped else 0
            for member_id, category_id, weights, update_count in policy.update(candidate, outcome):
                update_ordinal += 1
                trajectories.record(member_id, category_id, weights, update_count, update_ordinal)
        records.append(
            RoundRecord(
                t=t,
                member_id=member,
                ranked=_ranked_entries(ranking),
                chosen=top,
                y=y,
                matched=matched,
            )
        )
    estimator = "replay-match (biased: rewards observed only on matched rounds)"
    summary = compute_metrics(records) if records else _empty_summary(estimator)
    return RunResult(records, summary, trajectories, skip)


def write_roundlog(path: str | Path, records: Sequence[RoundRecord]) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")


def write_metrics_csv(path: str | Path, records: Sequence[RoundRecord]) -> None:
    """Per-round running metrics. Oracle columns are blank on replay, as is
    avg_reward before the first rewarded round."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["round", "cum_reward", "avg_reward", "regret", "optimal_rate"])
        cumulative = 0
        rewarded = 0
        regret = 0.0
        optimal = 0
        for i, r in enumerate(records, start=1):
            if r.y is not None:
                cumulative += r.y
                rewarded += 1
            avg = cumulative / rewarded if rewarded else ""
            if r.oracle_p is not None and r.chosen_true_p is not None:
                regret += r.oracle_p - r.chosen_true_p
                optimal += 1 if r.chosen == r.oracle_best else 0
                regret_cell: float | str = regret
                optimal_cell: float | str = optimal / i
            else:
                regret_cell = ""
                optimal_cell = ""
            writer.writerow([i, cumulative, avg, regret_cell, optimal_cell])


def write_summary_json(path: str | Path, summary: MetricsSummary, extra: Mapping | None = None) -> None:
    payload = summary.to_dict()
    if extra:
        payload.update(extra)
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def config_hash(config: Mapping) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode("utf-8")).hexdigest()


def files_fingerprint(paths: Iterable[str | Path]) -> str:
    """Stable digest over the named input files' bytes."""
    digest = hashlib.sha256()
    for p in sorted(str(p) for p in paths):
        digest.update(p.encode("utf-8"))
        digest.update(Path(p).read_bytes())
    return digest.hexdigest()


def build_manifest(
    seed: int,
    config: Mapping,
    data_fingerprint: str,
    skip_tallies: Mapping[str, int] | None = None,
    **extra,
) -> dict:
    """Reproducibility manifest; contains no wall-clock state."""
    manifest = {
        "seed": seed,
        "config_hash": config_hash(config),
        "data_fingerprint": data_fingerprint,
        "skip_tallies": dict(skip_tallies or {}),
        "feature_order_version": FEATURE_ORDER_VERSION,
        "feature_names": list(FEATURE_NAMES),
    }
    manifest.update(extra)
    return manifest


def write_manifest(path: str | Path, manifest: Mapping) -> None:
    Path(path).write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8")
