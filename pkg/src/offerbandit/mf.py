"""Alternating least squares on the member x category purchase-count matrix.

Factorizes the dense count matrix R into U V^T by alternating ridge
solves. Member-to-offer affinity is the mean of the member's factor dot
products over the offer's categories; those scores feed the mf_score
feature and the offer-level bias.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .data import Offer, Transaction
from .errors import ConfigError


@dataclass
class ALSConfig:
    rank: int = 8
    iterations: int = 20
    regularization: float = 0.1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.rank < 1:
            raise ConfigError(f"rank must be >= 1, got {self.rank}")
        if self.iterations < 1:
            raise ConfigError(f"iterations must be >= 1, got {self.iterations}")
        if self.regularization < 0:
            raise ConfigError(f"regularization must be >= 0, got {self.regularization}")


def build_count_matrix(
    transactions: Sequence[Transaction],
) -> tuple[np.ndarray, list[str], list[str]]:
    """Dense member x category matrix of purchase-event counts."""
    members = sorted({t.member_id for t in transactions})
    categories = sorted({t.category_id for t in transactions})
    m_idx = {m: i for i, m in enumerate(members)}
    c_idx = {c: j for j, c in enumerate(categories)}
    counts = np.zeros((len(members), len(categories)))
    for t in transactions:
        counts[m_idx[t.member_id], c_idx[t.category_id]] += 1
    return counts, members, categories


def als_factorize(matrix: np.ndarray, config: ALSConfig) -> tuple[np.ndarray, np.ndarray]:
    """Minimize ||R - U V^T||_F^2 + reg (||U||^2 + ||V||^2), all entries observed."""
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2 or matrix.size == 0:
        raise ValueError("count matrix must be a non-empty 2-d array")
    n_rows, n_cols = matrix.shape
    rng = np.random.default_rng(config.seed)
    U = rng.normal(0.0, 0.1, size=(n_rows, config.rank))
    V = rng.normal(0.0, 0.1, size=(n_cols, config.rank))
    reg_eye = config.regularization * np.eye(config.rank)
    for _ in range(config.iterations):
        U = np.linalg.solve(V.T @ V + reg_eye, V.T @ matrix.T).T
        V = np.linalg.solve(U.T @ U + reg_eye, U.T @ matrix).T
    return U, V


def reconstruction_error(matrix: np.ndarray, U: np.ndarray, V: np.ndarray) -> float:
    """Relative Frobenius error of the factorization."""
    denom = float(np.linalg.norm(matrix))
    if denom == 0.0:
        raise ValueError("cannot score reconstruction of an all-zero matrix")
    return float(np.linalg.norm(matrix - U @ V.T) / denom)


def member_offer_scores(
    U: np.ndarray,
    V: np.ndarray,
    members: Sequence[str],
    categories: Sequence[str],
    offers: Sequence[Offer],
) -> dict[tuple[str, str], float]:
    """Predicted affinity per (member, offer): the mean factor product over
    the offer's categories that appear in the factorization."""
    c_idx = {c: j for j, c in enumerate(categories)}
    scores: dict[tuple[str, str], float] = {}
    for i, member in enumerate(members):
        affinities = U[i] @ V.T
        for offer in offers:
            cols = [c_idx[c] for c in offer.category_ids if c in c_idx]
            if not cols:
                continue
            scores[(member, offer.offer_id)] = float(np.mean(affinities[cols]))
    return scores


def write_mf_scores(path: str | Path, scores: Mapping[tuple[str, str], float]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["member_id", "offer_id", "score"])
        for (member, offer), score in sorted(scores.items()):
            writer.writerow([member, offer, score])
