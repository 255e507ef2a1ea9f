import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from svpcf.algorithms import PopularityModel
from svpcf.data import Dataset, SplitBundle
from svpcf.metrics import MetricError, auc, evaluate, mse, ndcg_at_k, recall_at_k, topk_rows


def bundle(train, val, test, num_users, num_items, ratings=None, scenario="implicit"):
    """Split from explicit (user, item) lists over a fixed index space."""
    parts = [train, val, test]
    users = np.concatenate([[u for u, _ in p] for p in parts] + [np.arange(num_users)])
    items = np.concatenate([[i for _, i in p] for p in parts] + [np.zeros(num_users, int)])
    # one extra row per user keeps every index present; it is dropped below
    users = np.concatenate([users, np.zeros(num_items, int)]).astype(int)
    items = np.concatenate([items, np.arange(num_items)]).astype(int)
    full = Dataset.from_arrays(users.astype(str), items.astype(str), ratings, None)
    # from_arrays orders ids as strings; remap so index k means the raw id k
    assert full.num_users == num_users and full.num_items == num_items
    uid = np.array([int(x) for x in full.user_ids])
    iid = np.array([int(x) for x in full.item_ids])
    inv_u, inv_i = np.argsort(uid), np.argsort(iid)
    full = Dataset.from_arrays(inv_u[full.users], inv_i[full.items], ratings, None)
    sizes = np.cumsum([0] + [len(p) for p in parts])
    masks = []
    for lo, hi in zip(sizes[:-1], sizes[1:]):
        m = np.zeros(len(full), bool)
        m[lo:hi] = True
        masks.append(full.subset(m))
    return SplitBundle(*masks, scenario)


def brute_auc(scores, split):
    per_user = []
    for u in range(split.num_users):
        before = set(split.train.items[split.train.users == u]) | set(
            split.validation.items[split.validation.users == u])
        targets = set(split.test.items[split.test.users == u]) - before
        if not targets:
            continue
        negs = set(range(split.num_items)) - before - targets
        if not negs:
            continue
        vals = []
        for t in sorted(targets):
            c = sum(1.0 if scores[u, t] > scores[u, j] else 0.5 if scores[u, t] == scores[u, j]
                    else 0.0 for j in negs)
            vals.append(c / len(negs))
        per_user.append(np.mean(vals))
    return float(np.mean(per_user)) if per_user else None


def random_instance(rng):
    nu = int(rng.integers(1, 6))
    ni = int(rng.integers(3, 51))
    train, val, test = [], [], []
    for u in range(nu):
        for part, k in ((train, 3), (val, 1), (test, 2)):
            for i in rng.choice(ni, int(rng.integers(1, k + 1)), replace=True):
                part.append((u, int(i)))
    # coarse integer scores produce plenty of ties
    scores = rng.integers(0, 4, (nu, ni)).astype(float)
    return bundle(train, val, test, nu, ni), scores


def test_auc_matches_brute_force_on_random_instances():
    rng = np.random.default_rng(42)
    compared = 0
    for _ in range(100):
        split, scores = random_instance(rng)
        want = brute_auc(scores, split)
        if want is None:
            with pytest.raises(MetricError):
                auc(scores, split.test, split)
            continue
        assert auc(scores, split.test, split).value == want
        compared += 1
    assert compared >= 90


def test_auc_examples():
    split = bundle([(0, 0)], [(0, 1)], [(0, 2)], 1, 7)
    s = np.array([[0, 0, 9, 1, 2, 3, 4]], float)
    assert auc(s, split.test, split).value == 1.0
    s = np.array([[0, 0, -1, 1, 2, 3, 4]], float)
    assert auc(s, split.test, split).value == 0.0
    s = np.array([[0, 0, 2.5, 1, 2, 3, 4]], float)
    assert auc(s, split.test, split).value == 0.5


def test_auc_skips_user_without_negatives():
    # user 1 also consumed item 3 in test, leaving no negatives
    split = bundle([(0, 0), (1, 0)], [(0, 1), (1, 1)], [(0, 2), (1, 2), (1, 3)], 2, 4)
    r = auc(np.tile(np.arange(4.0), (2, 1)), split.test, split)
    assert r.skipped_users == 1 and r.n_users == 1


@pytest.mark.parametrize("rank, want", [(1, 1.0), (3, 0.5), (10, 1 / math.log2(11)), (11, 0.0)])
def test_ndcg_single_hit(rank, want):
    ni = 20
    split = bundle([(0, 0)], [(0, 1)], [(0, 5)], 1, ni)
    # candidates are items 2..19; put item 5 at the requested position
    order = [i for i in range(2, ni) if i != 5]
    order.insert(rank - 1, 5)
    s = np.zeros((1, ni))
    s[0, order] = np.arange(len(order), 0, -1)
    assert ndcg_at_k(s, split.test, split, 10).value == pytest.approx(want, abs=1e-15)
    assert recall_at_k(s, split.test, split, 10).value == (1.0 if rank <= 10 else 0.0)


def test_ndcg_ideal_uses_min_k_targets():
    split = bundle([(0, 0)], [(0, 1)], [(0, 2), (0, 3)], 1, 6)
    s = np.array([[0, 0, 9, 1, 8, 0]], float)  # ranks: 2 -> 1, 4 -> 2, 3 -> 3
    want = (1 + 1 / math.log2(4)) / (1 + 1 / math.log2(3))
    assert ndcg_at_k(s, split.test, split, 10).value == pytest.approx(want)
    assert recall_at_k(s, split.test, split, 1).value == 0.5
    assert recall_at_k(s, split.test, split, 100).value == 1.0


def test_topk_ties_by_item_index():
    split = bundle([(0, 0)], [(0, 1)], [(0, 3)], 1, 5)
    s = np.zeros((1, 5))
    assert recall_at_k(s, split.test, split, 1).value == 0.0   # item 2 comes first
    assert recall_at_k(s, split.test, split, 2).value == 1.0


def test_candidates_exclude_train_and_validation():
    split = bundle([(0, 0)], [(0, 1)], [(0, 2)], 1, 4)
    s = np.array([[9.0, 8.0, 1.0, 0.0]])
    assert ndcg_at_k(s, split.test, split, 1).value == 1.0
    # validation scoring only hides train
    assert ndcg_at_k(s, split.validation, split, 1).value == 1.0


def test_mse_examples():
    split = bundle([(0, 0)], [(0, 1)], [(0, 2), (0, 3)], 1, 4, scenario="explicit",
                   ratings=np.array([1, 2, 3, 4, 1, 1, 1, 1, 1], float))
    s = np.array([[1, 2, 3, 4]], float)
    assert mse(s, split.test).value == 0.0
    assert mse(s + 1, split.test).value == 1.0
    s2 = np.array([[1, 2, 4, 7]], float)   # errors 1 and 3
    assert mse(s2, split.test).value == 5.0
    empty = split.test.subset(np.zeros(len(split.test), bool))
    with pytest.raises(MetricError):
        mse(s, empty)


def test_empty_test_errors():
    split = bundle([(0, 0)], [(0, 1)], [(0, 2)], 1, 4)
    empty = split.test.subset(np.zeros(1, bool))
    for f in (auc, recall_at_k, ndcg_at_k):
        with pytest.raises(MetricError):
            f(np.zeros((1, 4)), empty, split)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31), st.integers(0, 15))
def test_moving_a_target_up_never_hurts(seed, steps):
    rng = np.random.default_rng(seed)
    split, _ = random_instance(rng)
    s = rng.permutation(split.num_items * split.num_users).reshape(
        split.num_users, split.num_items).astype(float)
    u = int(split.test.users[0])
    t = int(split.test.items[0])
    try:
        before = evaluate(s, split)
    except MetricError:
        assume(False)
    up = s.copy()
    up[u, t] += steps * split.num_items * 0.1 + 0.5
    after = evaluate(up, split)
    for k in before:
        assert after[k].value >= before[k].value - 1e-12


def test_evaluate_keys_per_scenario(synth_small):
    from svpcf.data import make_split
    split = make_split(synth_small, "implicit", 0)
    m = PopularityModel.fit(split.train)
    out = evaluate(m, split)
    assert set(out) == {"AUC", "Recall@100", "nDCG@10"}
    for v in out.values():
        assert 0.0 <= v.value <= 1.0


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 12), st.integers(1, 30))
def test_topk_rows_matches_stable_argsort(seed, k, n):
    rng = np.random.default_rng(seed)
    s = rng.integers(-2, 3, (5, n)).astype(float)
    s[rng.random((5, n)) < 0.2] = -np.inf
    want = np.argsort(-s, axis=1, kind="stable")[:, :k]
    np.testing.assert_array_equal(topk_rows(s, k), want)
