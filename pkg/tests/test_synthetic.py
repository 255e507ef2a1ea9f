import numpy as np
import pytest

from svpcf.data import DataError
from svpcf.synthetic import SynthConfig, generate_synthetic


def test_fixed_seed_reproduces():
    a = generate_synthetic(users=50, items=30, interactions=400, seed=2)
    b = generate_synthetic(users=50, items=30, interactions=400, seed=2)
    c = generate_synthetic(users=50, items=30, interactions=400, seed=3)
    assert a.fingerprint() == b.fingerprint() != c.fingerprint()


def test_exact_size_and_history_floor():
    d = generate_synthetic(users=120, items=40, interactions=1500, seed=0)
    assert len(d) == 1500 and d.num_users == 120
    assert d.user_counts().min() >= 3
    d.check_invariants()


def test_ratings_and_timestamps():
    d = generate_synthetic(users=80, items=40, interactions=1000, seed=1)
    assert set(np.unique(d.ratings)) <= {1.0, 2.0, 3.0, 4.0, 5.0}
    assert len(np.unique(d.ratings)) >= 4
    for h in d.user_histories:
        assert np.all(np.diff(d.timestamps[h]) > 0)
    # no repeated (user, item) pair
    assert len(np.unique(d.users * d.num_items + d.items)) == len(d)


def test_popularity_exponent_controls_skew():
    flat = generate_synthetic(users=300, items=50, interactions=6000, popularity_exponent=0.0,
                              preference_strength=0.0, seed=0)
    zipf = generate_synthetic(users=300, items=50, interactions=6000, popularity_exponent=1.2,
                              preference_strength=0.0, seed=0)
    cv = lambda d: d.item_counts().std() / d.item_counts().mean()
    assert cv(flat) < 0.15 and cv(zipf) > 0.3


def test_mnar_drops_interactions():
    d = generate_synthetic(users=200, items=60, interactions=4000, mnar=True, seed=0)
    assert len(d) < 4000 and d.user_counts().min() >= 3


@pytest.mark.parametrize("kw", [dict(users=0), dict(interactions=10, users=5),
                                dict(users=2, items=3, interactions=7),
                                dict(items=2, min_per_user=3)])
def test_infeasible_configs(kw):
    with pytest.raises(DataError):
        generate_synthetic(SynthConfig(**{**dict(users=5, items=10, interactions=30), **kw}))
