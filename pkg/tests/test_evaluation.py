import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import kendalltau

from svpcf.evaluation import (CELLS, PERCENTS, EvaluationError, Leaderboard, attach_p_mle,
                              compute_p_mle, compute_psi, kendall_tau, p_mle_term)


def pair_count_tau(a, b):
    """Oracle: explicit loop over pairs counting C, D and one-sided ties."""
    C = D = T1 = T2 = 0
    for i, j in itertools.combinations(range(len(a)), 2):
        da, db = a[i] - a[j], b[i] - b[j]
        if da == 0 and db == 0:
            continue
        if da == 0:
            T1 += 1
        elif db == 0:
            T2 += 1
        elif da * db > 0:
            C += 1
        else:
            D += 1
    if C + D + T1 == 0 and C + D + T2 == 0:
        return 1.0      # both rankings fully tied
    denom = math.sqrt((C + D + T1) * (C + D + T2))
    return 0.0 if denom == 0 else (C - D) / denom


def test_tau_examples():
    r = [1, 2, 3, 4]
    assert kendall_tau(r, r) == 1.0
    assert kendall_tau(r, r[::-1]) == -1.0
    assert kendall_tau(r, [2, 1, 3, 4]) == pytest.approx(4 / 6)
    assert kendall_tau({"a": 1, "b": 2}, {"b": 1, "a": 2}) == -1.0
    assert kendall_tau([1, 1, 1], [2, 2, 2]) == 1.0
    assert kendall_tau([1, 1, 1], [1, 2, 3]) == 0.0
    with pytest.raises(EvaluationError):
        kendall_tau([1], [1])
    with pytest.raises(EvaluationError):
        kendall_tau({"a": 1, "b": 2}, {"a": 1, "c": 2})


def test_tau_exhaustive_permutations():
    for n in range(2, 7):
        base = list(range(n))
        for perm in itertools.permutations(base):
            assert abs(kendall_tau(base, perm) - pair_count_tau(base, perm)) <= 1e-12


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 8).flatmap(lambda n: st.tuples(
    st.lists(st.integers(1, 4), min_size=n, max_size=n),
    st.lists(st.integers(1, 4), min_size=n, max_size=n))))
def test_tau_with_ties_matches_pair_counting(pair):
    a, b = pair
    got = kendall_tau(a, b)
    assert abs(got - pair_count_tau(a, b)) <= 1e-12
    if len(set(a)) > 1 and len(set(b)) > 1:
        assert got == pytest.approx(kendalltau(a, b).statistic, abs=1e-12)


def test_leaderboard_ranks():
    lb = Leaderboard("d", "implicit", "AUC", {"x": 0.9, "y": 0.7, "z": 0.9})
    assert lb.ranks == {"x": 1.5, "y": 3.0, "z": 1.5}
    lb = Leaderboard("d", "explicit", "MSE", {"x": 0.9, "y": 0.7})
    assert lb.ranks == {"x": 2.0, "y": 1.0}


ALGS = ("a", "b", "c", "d")


def grid(full_values, sampled_values, percents=PERCENTS, strategy="s", dataset="D"):
    """Leaderboards for every pertinent cell; values are per-algorithm lists."""
    boards = []
    for f, metrics in CELLS.items():
        for m in metrics:
            sign = -1 if m == "MSE" else 1
            boards.append(Leaderboard(dataset, f, m, dict(zip(ALGS, sign * np.array(full_values)))))
            for p in percents:
                vals = sampled_values(f, m, p)
                boards.append(Leaderboard(dataset, f, m, dict(zip(ALGS, sign * np.array(vals))),
                                          strategy, p))
    return boards


def test_psi_identity_and_reversal():
    full = [4.0, 3.0, 2.0, 1.0]
    r = compute_psi(grid(full, lambda f, m, p: full))
    assert r.psi[("D", "s")] == 1.0 and len(r.taus) == 42
    assert r.normalizer[("D", "s")] == 1 / 42
    r = compute_psi(grid(full, lambda f, m, p: full[::-1]))
    assert r.psi[("D", "s")] == -1.0


def test_psi_missing_cell():
    full = [4.0, 3.0, 2.0, 1.0]
    boards = grid(full, lambda f, m, p: full)
    boards = [b for b in boards if not (b.percent == 10 and b.metric == "AUC"
                                        and b.scenario == "sequential")]
    with pytest.raises(EvaluationError, match="percent=10 scenario=sequential metric=AUC"):
        compute_psi(boards)
    r = compute_psi(boards, allow_partial=True)
    assert r.partial and len(r.missing) == 1 and r.psi[("D", "s")] == 1.0


def test_psi_partial_mean():
    full = Leaderboard("D", "implicit", "AUC", dict(zip(ALGS, [4, 3, 2, 1])))
    same = Leaderboard("D", "implicit", "AUC", dict(zip(ALGS, [4, 3, 2, 1])), "s", 80)
    # C=5, D=1 -> 4/6; with three-quarter weight needed, use a tau of 0.5 instead
    half = Leaderboard("D", "implicit", "AUC", dict(zip(ALGS, [4, 2.5, 2.5, 1])), "s", 60)
    t = kendall_tau(full.ranks, half.ranks)
    r = compute_psi([full, same, half], percents=(80, 60), cells={"implicit": ("AUC",)})
    assert r.psi[("D", "s")] == pytest.approx((1 + t) / 2)
    r = compute_psi([full, same], percents=(80, 60), cells={"implicit": ("AUC",)},
                    allow_partial=True)
    assert r.psi[("D", "s")] == 1.0


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(-40, 40).map(lambda k: k / 8), min_size=4, max_size=4, unique=True),
       st.sampled_from([np.exp, np.arctan, lambda x: 3 * x + 7, lambda x: x ** 3]))
def test_psi_invariant_to_monotone_transforms(vals, g):
    rng = np.random.default_rng(0)
    perms = {(f, m, p): rng.permutation(vals) for f, ms in CELLS.items() for m in ms
             for p in PERCENTS}
    a = compute_psi(grid(vals, lambda f, m, p: perms[(f, m, p)]))
    b = compute_psi(grid(list(g(np.array(vals))),
                         lambda f, m, p: g(np.array(perms[(f, m, p)]))))
    assert a.psi == b.psi


def test_p_mle_examples():
    assert p_mle_term(3, 3, 5) == 0.5
    assert p_mle_term(1, 7, 7) == 0.0
    assert p_mle_term(7, 1, 7) == 1.0
    with pytest.raises(EvaluationError):
        p_mle_term(1, 1, 1)


def test_p_mle_over_grid():
    full = [4.0, 3.0, 2.0, 1.0]   # a best, d worst
    boards = grid(full, lambda f, m, p: full[::-1])
    assert compute_p_mle(boards, "a", "implicit", 40) == 0.0
    assert compute_p_mle(boards, "d", "implicit", 40) == 1.0
    r = attach_p_mle(compute_psi(boards), boards)
    assert r.p_mle[("b", "explicit", 80.0)] == pytest.approx(0.5 + (2 - 3) / 6)
    boards = grid(full, lambda f, m, p: full)
    r = attach_p_mle(compute_psi(boards), boards)
    assert set(r.p_mle.values()) == {0.5}


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 9).flatmap(lambda n: st.tuples(
    st.just(n), st.permutations(range(1, n + 1)), st.permutations(range(1, n + 1)))))
def test_p_mle_in_unit_interval(args):
    n, a, b = args
    for x, y in zip(a, b):
        assert 0.0 <= p_mle_term(x, y, n) <= 1.0
