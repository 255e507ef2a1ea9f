"""Latent-factor interaction logs with Zipf item popularity."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset, DataError, _redensify, filter_min_interactions


@dataclass(frozen=True)
class SynthConfig:
    users: int = 2000
    items: int = 500
    interactions: int = 40000
    latent_dim: int = 8
    popularity_exponent: float = 1.0
    preference_strength: float = 6.0
    activity_sigma: float = 1.0
    noise: float = 0.5
    min_per_user: int = 3
    mnar: bool = False
    seed: int = 0


def _allocate(weights: np.ndarray, extra: int, cap: np.ndarray) -> np.ndarray:
    """Split ``extra`` units proportionally to ``weights`` without exceeding ``cap``."""
    out = np.zeros(len(weights), dtype=np.int64)
    free = cap > 0
    while extra > 0:
        w = np.where(free, weights, 0.0)
        share = w / w.sum() * extra
        add = np.floor(share).astype(np.int64)
        rest = extra - add.sum()
        if rest:
            frac_order = np.argsort(-(share - add), kind="stable")
            add[frac_order[:rest]] += 1
        add = np.minimum(add, cap - out)
        out += add
        extra -= int(add.sum())
        free = out < cap
    return out


def generate_synthetic(config: SynthConfig | None = None, **overrides) -> Dataset:
    """Draw a dataset whose size equals ``config.interactions`` exactly.

    User activity is log-normal on top of ``min_per_user``; each user picks
    distinct items with probability proportional to
    ``popularity * exp(strength * affinity)``.  Ratings on 1..5 follow the
    latent affinity plus biases and Gaussian noise, and timestamps strictly
    increase along each history.  With ``mnar=True`` every drawn
    interaction is then revealed with the count-based propensity
    ``p_u * p_i``, and users left with fewer than ``min_per_user``
    interactions are dropped, so the size is no longer exact.
    """
    c = config or SynthConfig()
    if overrides:
        c = SynthConfig(**{**c.__dict__, **overrides})
    if min(c.users, c.items, c.latent_dim) < 1:
        raise DataError("users, items and latent_dim must be >= 1")
    if c.min_per_user > c.items:
        raise DataError("min_per_user exceeds the number of items")
    if not c.users * c.min_per_user <= c.interactions <= c.users * c.items:
        raise DataError(
            f"{c.interactions} interactions infeasible for {c.users} users x {c.items} items "
            f"with at least {c.min_per_user} each")
    rng = np.random.default_rng(c.seed)

    activity = rng.lognormal(0.0, c.activity_sigma, c.users)
    lengths = c.min_per_user + _allocate(activity, c.interactions - c.users * c.min_per_user,
                                         np.full(c.users, c.items - c.min_per_user))

    rank = rng.permutation(c.items) + 1
    popularity = rank.astype(float) ** -c.popularity_exponent
    scale = 1.0 / np.sqrt(c.latent_dim)
    P = rng.normal(0.0, scale, (c.users, c.latent_dim))
    Q = rng.normal(0.0, scale, (c.items, c.latent_dim))
    b_u = rng.normal(0.0, 0.3, c.users)
    b_i = rng.normal(0.0, 0.3, c.items)

    users, items, zs, stamps = [], [], [], []
    for u in range(c.users):
        affinity = Q @ P[u]
        w = popularity * np.exp(c.preference_strength * affinity)
        chosen = rng.choice(c.items, size=lengths[u], replace=False, p=w / w.sum())
        zs.append(affinity[chosen])
        t0 = int(rng.integers(0, 10**6))
        gaps = rng.integers(1, 3600, len(chosen))
        users.append(np.full(len(chosen), u))
        items.append(chosen)
        stamps.append(t0 + np.cumsum(gaps))
    users, items, z = np.concatenate(users), np.concatenate(items), np.concatenate(zs)
    # choice is biased towards high affinity, so centre on what was observed
    z = (z - z.mean()) / (z.std() or 1.0)
    ratings = np.clip(np.rint(3.0 + b_u[users] + b_i[items] + z
                              + rng.normal(0.0, c.noise, len(z))), 1, 5)
    d = Dataset(
        users=users, items=items,
        ratings=ratings, timestamps=np.concatenate(stamps),
        rows=np.arange(c.interactions),
        user_ids=np.array([f"u{k}" for k in range(c.users)], dtype=object),
        item_ids=np.array([f"i{k}" for k in range(c.items)], dtype=object),
    )
    if c.mnar:
        from .svp import PropensityParams, propensity

        params = PropensityParams.from_train(d)
        seen = rng.random(len(d)) < propensity(d.users, d.items, params)
        d = d.subset(seen)
        return filter_min_interactions(d, c.min_per_user)
    return _redensify(d, np.ones(len(d), dtype=bool))
