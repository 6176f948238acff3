"""Weight trajectories, change detection and persona explanations.

Because each (member, category) model is a small linear model over named
features, its weight vector is directly readable. This module records
weight snapshots over time, flags abrupt weight changes, summarizes a
member's models into an explanation payload, and renders that payload into
a natural-language persona, either through a deterministic rule table (the
mock client) or a live chat-completion endpoint.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Protocol, Sequence

import numpy as np
import requests

from .errors import ConfigError
from .features import FEATURE_NAMES, FEATURE_ORDER_VERSION, N_FEATURES


@dataclass(frozen=True)
class WeightSnapshot:
    """One model state observation. t is a run-wide monotone update ordinal."""

    t: int
    member_id: str
    category_id: str
    weights: tuple[float, ...]
    update_count: int


class TrajectoryStore:
    """Append-only weight history per (member, category) pair.

    Snapshots must arrive with strictly increasing t per pair. thin_every
    keeps one snapshot out of every n offered per pair.
    """

    def __init__(self, thin_every: int = 1):
        if thin_every < 1:
            raise ConfigError(f"thin_every must be >= 1, got {thin_every}")
        self.thin_every = thin_every
        self._series: dict[tuple[str, str], list[WeightSnapshot]] = {}
        self._offered: dict[tuple[str, str], int] = {}

    def record(self, member_id: str, category_id: str, weights: np.ndarray, update_count: int, t: int) -> None:
        key = (member_id, category_id)
        series = self._series.setdefault(key, [])
        if series and t <= series[-1].t:
            raise ValueError(f"snapshot t={t} does not advance past t={series[-1].t} for {key}")
        offered = self._offered.get(key, 0)
        self._offered[key] = offered + 1
        if offered % self.thin_every:
            return
        series.append(
            WeightSnapshot(t, member_id, category_id, tuple(float(w) for w in weights), update_count)
        )

    def pairs(self) -> list[tuple[str, str]]:
        return sorted(self._series)

    def series(self, member_id: str, category_id: str) -> list[WeightSnapshot]:
        return list(self._series.get((member_id, category_id), []))

    def member_categories(self, member_id: str) -> list[str]:
        return sorted(c for (m, c) in self._series if m == member_id)

    def save(self, path: str | Path) -> None:
        """JSONL: a feature-order header line, then snapshots in t order."""
        header = {"feature_names": list(FEATURE_NAMES), "feature_order_version": FEATURE_ORDER_VERSION}
        rows = sorted(
            (s for series in self._series.values() for s in series),
            key=lambda s: (s.t, s.member_id, s.category_id),
        )
        with Path(path).open("w", encoding="utf-8") as fh:
            fh.write(json.dumps(header, sort_keys=True) + "\n")
            for s in rows:
                fh.write(
                    json.dumps(
                        {
                            "t": s.t,
                            "member_id": s.member_id,
                            "category_id": s.category_id,
                            "weights": list(s.weights),
                            "update_count": s.update_count,
                        },
                        sort_keys=True,
                    )
                    + "\n"
                )

    @classmethod
    def load(cls, path: str | Path) -> "TrajectoryStore":
        store = cls()
        with Path(path).open(encoding="utf-8") as fh:
            header = json.loads(fh.readline())
            if header.get("feature_order_version") != FEATURE_ORDER_VERSION:
                raise ValueError("trajectory feature order version mismatch")
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                obj = json.loads(line)
                store.record(
                    obj["member_id"],
                    obj["category_id"],
                    np.asarray(obj["weights"], dtype=float),
                    int(obj["update_count"]),
                    int(obj["t"]),
                )
        return store


@dataclass
class DetectionConfig:
    """Thresholds for abrupt weight-change detection.

    A feature fires when its move over the last `window` snapshots exceeds
    both min_abs_change and z_threshold running standard deviations of its
    per-step deltas; after firing it is silenced for `window` snapshots.
    """

    window: int = 20
    z_threshold: float = 4.0
    min_abs_change: float = 0.05

    def __post_init__(self) -> None:
        if self.window < 1:
            raise ConfigError(f"window must be >= 1, got {self.window}")
        if self.z_threshold <= 0:
            raise ConfigError(f"z_threshold must be positive, got {self.z_threshold}")
        if self.min_abs_change < 0:
            raise ConfigError(f"min_abs_change must be >= 0, got {self.min_abs_change}")


@dataclass(frozen=True)
class ChangeEvent:
    """One detected weight shift: which feature moved, where, how hard."""

    member_id: str
    category_id: str
    feature: str
    t: int
    delta: float
    z: float
    direction: str  # "up" or "down"


def detect_changes(snapshots: Sequence[WeightSnapshot], cfg: DetectionConfig) -> list[ChangeEvent]:
    """Scan one pair's trajectory for abrupt weight changes.

    The per-feature test statistic at snapshot i is
    |w_j(i) - w_j(i - window)|, compared against
    max(min_abs_change, z_threshold * sigma_j) where sigma_j is the running
    sample std of w_j's per-step deltas seen so far. At most one event per
    feature per window. Trajectories shorter than window + 1 produce no
    events.
    """
    n = len(snapshots)
    if n <= cfg.window:
        return []
    weights = np.array([s.weights for s in snapshots], dtype=float)
    n_features = weights.shape[1]
    names = FEATURE_NAMES if n_features == N_FEATURES else tuple(f"f{j}" for j in range(n_features))
    events: list[ChangeEvent] = []
    # Running Welford moments over per-step deltas, per feature.
    count = 0
    mean = np.zeros(n_features)
    m2 = np.zeros(n_features)
    last_fire = np.full(n_features, -(10**9))
    for i in range(1, n):
        step = weights[i] - weights[i - 1]
        count += 1
        d = step - mean
        mean += d / count
        m2 += d * (step - mean)
        if i < cfg.window:
            continue
        sigma = np.sqrt(m2 / (count - 1)) if count > 1 else np.zeros(n_features)
        move = weights[i] - weights[i - cfg.window]
        threshold = np.maximum(cfg.min_abs_change, cfg.z_threshold * sigma)
        for j in range(n_features):
            if i - last_fire[j] < cfg.window:
                continue
            if abs(move[j]) > threshold[j]:
                z = abs(move[j]) / max(sigma[j], 1e-12)
                events.append(
                    ChangeEvent(
                        member_id=snapshots[i].member_id,
                        category_id=snapshots[i].category_id,
                        feature=names[j],
                        t=snapshots[i].t,
                        delta=float(move[j]),
                        z=float(z),
                        direction="up" if move[j] > 0 else "down",
                    )
                )
                last_fire[j] = i
    return events


@dataclass
class CategoryWeightSummary:
    """Current weights and recent movement for one of a member's models."""

    category_id: str
    weights: dict[str, float]
    update_count: int
    top_features: list[tuple[str, float]]
    slopes: dict[str, float]


@dataclass
class ExplanationPayload:
    """Everything the persona generator may condition on for one member."""

    member_id: str
    feature_names: tuple[str, ...]
    categories: list[CategoryWeightSummary]
    events: list[ChangeEvent]
    as_of: int | None = None


def trend_slopes(snapshots: Sequence[WeightSnapshot], window: int) -> dict[str, float]:
    """Least-squares slope of each weight against t over the trailing window.

    Zero for trajectories with fewer than two snapshots.
    """
    tail = list(snapshots)[-window:]
    names = FEATURE_NAMES
    if len(tail) < 2:
        return {name: 0.0 for name in names}
    ts = np.array([s.t for s in tail], dtype=float)
    ws = np.array([s.weights for s in tail], dtype=float)
    ts_c = ts - ts.mean()
    denom = float(ts_c @ ts_c)
    slopes = (ts_c @ (ws - ws.mean(axis=0))) / denom
    return {name: float(slopes[j]) for j, name in enumerate(names)}


def build_payload(
    trajectories: TrajectoryStore,
    member_id: str,
    as_of: int | None = None,
    detection: DetectionConfig | None = None,
    trend_window: int = 50,
    top_k: int = 3,
    max_events: int = 10,
) -> ExplanationPayload:
    """Summarize a member's weight trajectories for explanation.

    Pure read: calling this twice yields equal payloads and leaves the
    trajectory store untouched. Raises ValueError for unknown members.
    top_features ranks non-bias weights by magnitude.
    """
    detection = detection or DetectionConfig()
    categories = trajectories.member_categories(member_id)
    if not categories:
        raise ValueError(f"unknown member {member_id!r}: no recorded trajectories")
    summaries: list[CategoryWeightSummary] = []
    events: list[ChangeEvent] = []
    for category in categories:
        series = trajectories.series(member_id, category)
        if as_of is not None:
            series = [s for s in series if s.t <= as_of]
        if not series:
            continue
        latest = series[-1]
        weights = {name: float(w) for name, w in zip(FEATURE_NAMES, latest.weights)}
        behavioral = [(name, w) for name, w in weights.items() if name != "bias"]
        top = sorted(behavioral, key=lambda nw: (-abs(nw[1]), nw[0]))[:top_k]
        summaries.append(
            CategoryWeightSummary(
                category_id=category,
                weights=weights,
                update_count=latest.update_count,
                top_features=top,
                slopes=trend_slopes(series, trend_window),
            )
        )
        events.extend(detect_changes(series, detection))
    if not summaries:
        raise ValueError(f"no snapshots for member {member_id!r} at or before t={as_of}")
    events.sort(key=lambda e: (e.t, e.category_id, e.feature))
    return ExplanationPayload(
        member_id=member_id,
        feature_names=FEATURE_NAMES,
        categories=summaries,
        events=events[-max_events:],
        as_of=as_of,
    )


def payload_to_dict(payload: ExplanationPayload) -> dict:
    return {
        "member_id": payload.member_id,
        "as_of": payload.as_of,
        "feature_names": list(payload.feature_names),
        "categories": [
            {
                "category_id": c.category_id,
                "weights": c.weights,
                "update_count": c.update_count,
                "top_features": [[n, w] for n, w in c.top_features],
                "slopes": c.slopes,
            }
            for c in payload.categories
        ],
        "events": [
            {
                "category_id": e.category_id,
                "feature": e.feature,
                "t": e.t,
                "delta": e.delta,
                "z": e.z,
                "direction": e.direction,
            }
            for e in payload.events
        ],
    }


PROMPT_TEMPLATE_PATH = Path(__file__).parent / "prompts" / "persona_v1.txt"


def render_prompt(payload: ExplanationPayload) -> str:
    """Fill the versioned prompt template with the payload JSON."""
    template = PROMPT_TEMPLATE_PATH.read_text(encoding="utf-8")
    return template.replace(
        "{payload_json}", json.dumps(payload_to_dict(payload), sort_keys=True, indent=2)
    )


class ExplanationClient(Protocol):
    def generate(self, payload: ExplanationPayload) -> str: ...


def explain(payload: ExplanationPayload, client: ExplanationClient) -> str:
    """Render a persona for the payload through the given client."""
    return client.generate(payload)


# Rule thresholds for the mock persona. A weight counts as "strong" when its
# member-level mean magnitude clears WEIGHT_THRESHOLD; a trend counts as
# rising/falling past SLOPE_THRESHOLD on the mean slope.
WEIGHT_THRESHOLD = 0.1
SLOPE_THRESHOLD = 1e-3


class MockLLMClient:
    """Deterministic rule-table persona renderer; needs no network.

    Rules key on the sign, magnitude rank and trend of each member-level
    mean weight. Total: every payload yields a non-empty persona.
    """

    def generate(self, payload: ExplanationPayload) -> str:
        means, slopes = _member_means(payload)
        ranked = sorted(
            (n for n in payload.feature_names if n != "bias"),
            key=lambda n: (-abs(means[n]), n),
        )
        rank_of = {n: i + 1 for i, n in enumerate(ranked)}
        lines = [f"Persona for member {payload.member_id}:"]

        w, s = means["mpg"], slopes["mpg"]
        if w > WEIGHT_THRESHOLD and s >= 0:
            lines.append(
                "A replenishment-driven shopper: clips offers when a long gap has "
                "passed since the last category purchase."
                + (" This pull is still strengthening." if s > SLOPE_THRESHOLD else "")
            )
        elif w < -WEIGHT_THRESHOLD:
            lines.append("Buys on routine rather than depletion; purchase gaps do not trigger clips.")

        w = means["brand_loyalty"]
        if w > WEIGHT_THRESHOLD and rank_of["brand_loyalty"] <= 3:
            lines.append("A strongly brand-loyal member: prefers offers on brands already purchased.")
        elif w > WEIGHT_THRESHOLD:
            lines.append("Mildly brand-loyal, though other signals matter more.")
        elif w < -WEIGHT_THRESHOLD:
            lines.append("Brand-agnostic: switches brands readily when an offer appears.")

        w = means["seasonality"]
        if w < -0.02:
            lines.append("A non-seasonal member: clips do not follow the category's seasonal peaks.")
        elif w > WEIGHT_THRESHOLD:
            lines.append("A seasonal shopper: engagement rises with the category's peak weeks.")

        w = means["value"]
        if w > WEIGHT_THRESHOLD:
            lines.append("Discount-driven: deeper discounts noticeably raise clip odds.")
        elif w < -WEIGHT_THRESHOLD:
            lines.append("Indifferent to discount depth.")

        w, s = means["num_items"], slopes["num_items"]
        if s > SLOPE_THRESHOLD:
            lines.append("Increasingly drawn to offers covering more items.")
        elif w > WEIGHT_THRESHOLD:
            lines.append("Prefers offers covering more items.")

        w = means["recency"]
        if w > WEIGHT_THRESHOLD:
            lines.append("Acts late in an offer's window.")
        elif w < -WEIGHT_THRESHOLD:
            lines.append("Acts early in an offer's window.")

        w = means["mf_score"]
        if w > WEIGHT_THRESHOLD:
            lines.append("Choices track collaborative-filtering affinity.")

        if payload.events:
            recent = payload.events[-1]
            lines.append(
                f"Recent shift: {recent.feature} weight moved {recent.direction} "
                f"in category {recent.category_id}."
            )
        lines.append("Top drivers: " + ", ".join(ranked[:3]) + ".")
        return "\n".join(lines)


def _member_means(payload: ExplanationPayload) -> tuple[dict[str, float], dict[str, float]]:
    means = {}
    slopes = {}
    for name in payload.feature_names:
        means[name] = float(np.mean([c.weights[name] for c in payload.categories]))
        slopes[name] = float(np.mean([c.slopes[name] for c in payload.categories]))
    return means, slopes


class LLMTransportError(RuntimeError):
    """HTTP transport failure; carries the payload so the call can be retried."""

    def __init__(self, message: str, payload: ExplanationPayload):
        super().__init__(message)
        self.payload = payload


class HttpLLMClient:
    """Chat-completion client for any endpoint speaking the common shape.

    POSTs {model, messages} to {base}/chat/completions and reads
    choices[0].message.content. Configured by arguments or the environment
    variables LLM_API_BASE, LLM_API_KEY and LLM_MODEL. One retry on
    transport failure, then LLMTransportError.
    """

    def __init__(
        self,
        api_base: str | None = None,
        api_key: str | None = None,
        model: str | None = None,
        timeout: float = 30.0,
    ):
        self.api_base = (api_base or os.environ.get("LLM_API_BASE", "")).rstrip("/")
        self.api_key = api_key or os.environ.get("LLM_API_KEY", "")
        self.model = model or os.environ.get("LLM_MODEL", "")
        self.timeout = timeout
        if not self.api_base or not self.model:
            raise ConfigError(
                "live explanation client needs LLM_API_BASE and LLM_MODEL "
                "(and usually LLM_API_KEY) set in the environment"
            )

    def generate(self, payload: ExplanationPayload) -> str:
        body = {
            "model": self.model,
            "messages": [{"role": "user", "content": render_prompt(payload)}],
        }
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        url = f"{self.api_base}/chat/completions"
        last_error: Exception | None = None
        for _ in range(2):  # one retry
            try:
                resp = requests.post(url, json=body, headers=headers, timeout=self.timeout)
                resp.raise_for_status()
                return resp.json()["choices"][0]["message"]["content"]
            except (requests.RequestException, KeyError, IndexError, ValueError) as exc:
                last_error = exc
        raise LLMTransportError(f"explanation request failed: {last_error}", payload)
