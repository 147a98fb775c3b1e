import numpy as np
import pytest

from ials import InteractionSet

import oracles


@pytest.fixture
def rng():
    return np.random.default_rng(42)


def make_interactions(rng, n_users=8, n_items=6, min_deg=1, max_deg=None,
                      with_timestamps=False) -> InteractionSet:
    users, items = oracles.random_interactions(rng, n_users, n_items,
                                               min_deg=min_deg, max_deg=max_deg)
    ts = rng.integers(0, 10_000, size=len(users)).astype(float) if with_timestamps else None
    return InteractionSet.from_pairs(users, items, num_users=n_users,
                                     num_items=n_items, timestamps=ts)


@pytest.fixture
def small_data(rng):
    return make_interactions(rng, n_users=8, n_items=6, min_deg=1)
