import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from offerbandit.baselines import OfferCandidate

settings.register_profile(
    "suite",
    max_examples=40,
    deadline=None,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("suite")


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def candidate_factory():
    """Build an OfferCandidate whose offer_vector is given directly."""

    def make(offer_id, vector, member="m0", true_p=None, categories=None,
             shares=None, mf_score=0.0):
        vector = np.asarray(vector, dtype=float)
        cats = categories or {"c0": vector}
        return OfferCandidate(
            offer_id=offer_id,
            member_id=member,
            category_vectors={c: np.asarray(x, dtype=float) for c, x in cats.items()},
            shares=shares or {c: 1.0 / len(cats) for c in cats},
            mf_score=mf_score,
            offer_vector=vector,
            true_p=true_p,
        )

    return make
