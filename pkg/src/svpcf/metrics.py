"""Full-ranking evaluation: MSE, AUC, Recall@k and nDCG@k.

Ranking metrics never subsample candidates.  For a target part of a split
(validation or test) the ranked candidates are all items minus the
user's interactions in the earlier parts (train, plus validation when
scoring test); AUC negatives are all items the user never interacted with
in any part.  Equal scores in a top-k list are ordered by item index;
in AUC they count one half.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .algorithms import score_matrix, score_pairs
from .data import Dataset, SplitBundle

HIGHER_IS_BETTER = {"MSE": False, "AUC": True, "Recall": True, "nDCG": True}


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class MetricValue:
    name: str
    value: float
    k: int | None = None
    n_users: int = 0
    skipped_users: int = 0

    @property
    def label(self) -> str:
        return self.name if self.k is None else f"{self.name}@{self.k}"

    @property
    def higher_is_better(self) -> bool:
        return HIGHER_IS_BETTER[self.name]


def _membership(d: Dataset, num_users: int, num_items: int) -> sp.csr_matrix:
    m = sp.csr_matrix((np.ones(len(d), dtype=bool), (d.users, d.items)),
                      shape=(num_users, num_items))
    m.sum_duplicates()
    return m


def _scores(model, users: np.ndarray) -> np.ndarray:
    if isinstance(model, np.ndarray):
        return model[users]
    return score_matrix(model, users)


def mse(model, test: Dataset) -> MetricValue:
    if len(test) == 0:
        raise MetricError("MSE of an empty test set")
    if isinstance(model, np.ndarray):
        pred = model[test.users, test.items]
    else:
        pred = score_pairs(model, test.users, test.items)
    return MetricValue("MSE", float(np.mean((pred - test.ratings) ** 2)),
                       n_users=int(np.count_nonzero(test.user_counts())))


def _seen_before(test: Dataset, split: SplitBundle) -> list[Dataset]:
    parts = [split.train]
    if test is not split.validation:
        parts.append(split.validation)
    return parts


def _targets(test: Dataset, split: SplitBundle):
    """Target matrix, exclusion matrix and users having at least one target."""
    nu, ni = split.num_users, split.num_items
    seen = sum((_membership(p, nu, ni) for p in _seen_before(test, split)),
               sp.csr_matrix((nu, ni), dtype=bool)).astype(bool)
    target = _membership(test, nu, ni)
    # an item already consumed earlier is not a candidate, so it cannot be a target
    target = (target.astype(np.int8) - target.multiply(seen).astype(np.int8)).astype(bool)
    target.eliminate_zeros()
    users = np.flatnonzero(np.diff(target.indptr))
    return target, seen, users


def topk_rows(s: np.ndarray, k: int) -> np.ndarray:
    """Column indices of the ``k`` largest entries per row, best first.

    Equal scores are ordered by column index, as a stable descending
    argsort would; only the boundary ties need resolving explicitly.
    """
    n = s.shape[1]
    if k >= n:
        return np.argsort(-s, axis=1, kind="stable")
    thr = -np.partition(-s, k - 1, axis=1)[:, k - 1:k]
    above = s > thr
    tied = s == thr
    room = k - above.sum(axis=1, keepdims=True)
    pick = above | (tied & (np.cumsum(tied, axis=1) <= room))
    cols = np.nonzero(pick)[1].reshape(len(s), k)      # ascending column order
    order = np.argsort(-np.take_along_axis(s, cols, axis=1), axis=1, kind="stable")
    return np.take_along_axis(cols, order, axis=1)


def _topk_hits(model, test: Dataset, split: SplitBundle, k: int, chunk: int = 512):
    if k < 1:
        raise MetricError("k must be >= 1")
    if len(test) == 0:
        raise MetricError("empty test set")
    target, seen, users = _targets(test, split)
    n_target = np.diff(target.indptr)[users]
    hits = np.zeros((len(users), min(k, split.num_items)), dtype=bool)
    for lo in range(0, len(users), chunk):
        block = users[lo:lo + chunk]
        s = np.array(_scores(model, block), dtype=float, copy=True)
        seen_block = seen[block].toarray()
        s[seen_block] = -np.inf
        n_cand = split.num_items - seen_block.sum(axis=1)
        top = topk_rows(s, k)
        rows = np.arange(len(block))[:, None]
        h = target[block].toarray()[rows, top]
        h &= np.arange(top.shape[1])[None, :] < n_cand[:, None]
        hits[lo:lo + len(block)] = h
    return hits, n_target


def _recall(hits, n_target, k) -> MetricValue:
    if len(n_target) == 0:
        raise MetricError("no user has a rankable target item")
    per_user = hits[:, :k].sum(axis=1) / n_target
    return MetricValue("Recall", float(per_user.mean()), k, len(per_user))


def _ndcg(hits, n_target, k) -> MetricValue:
    if len(n_target) == 0:
        raise MetricError("no user has a rankable target item")
    hits = hits[:, :k]
    discount = 1.0 / np.log2(np.arange(2, hits.shape[1] + 2))
    dcg = hits @ discount
    ideal = np.cumsum(discount)[np.minimum(n_target, hits.shape[1]) - 1]
    return MetricValue("nDCG", float(np.mean(dcg / ideal)), k, len(dcg))


def recall_at_k(model, test: Dataset, split: SplitBundle, k: int = 100) -> MetricValue:
    return _recall(*_topk_hits(model, test, split, k), k)


def ndcg_at_k(model, test: Dataset, split: SplitBundle, k: int = 10) -> MetricValue:
    return _ndcg(*_topk_hits(model, test, split, k), k)


def auc(model, test: Dataset, split: SplitBundle) -> MetricValue:
    """Per-user mean over target items of P(target scored above a negative)."""
    if len(test) == 0:
        raise MetricError("empty test set")
    nu, ni = split.num_users, split.num_items
    target, seen, users = _targets(test, split)
    positive = target.astype(np.int8)
    for part in (split.train, split.validation, split.test):
        positive = positive + _membership(part, nu, ni).astype(np.int8)
    positive = positive.astype(bool).tocsr()
    sums, counts = np.zeros(nu), np.zeros(nu)
    for lo in range(0, len(users), 512):
        block = users[lo:lo + 512]
        s = _scores(model, block)
        neg = ~positive[block].toarray()
        t = target[block].tocoo()
        row_neg = neg[t.row]
        st = s[t.row, t.col][:, None]
        s_rows = s[t.row]
        below = np.count_nonzero(row_neg & (s_rows < st), axis=1)
        ties = np.count_nonzero(row_neg & (s_rows == st), axis=1)
        n_neg = row_neg.sum(axis=1)
        ok = n_neg > 0
        frac = (below[ok] + 0.5 * ties[ok]) / n_neg[ok]
        u = block[t.row[ok]]
        sums += np.bincount(u, frac, nu)
        counts += np.bincount(u, minlength=nu)
    has_neg = counts[users] > 0
    skipped = int(np.count_nonzero(~has_neg))
    if not has_neg.any():
        raise MetricError("no user has both targets and negatives")
    values = sums[users[has_neg]] / counts[users[has_neg]]
    return MetricValue("AUC", float(np.mean(values)), None, len(values), skipped)


def evaluate(model, split: SplitBundle, target: str = "test",
             recall_k: int = 100, ndcg_k: int = 10) -> dict[str, MetricValue]:
    """Every metric that applies to ``split.scenario``, keyed by label."""
    test = getattr(split, target)
    if split.scenario == "explicit":
        return {"MSE": mse(model, test)}
    scores = _scores(model, np.arange(split.num_users)) if not isinstance(model, np.ndarray) else model
    hits, n_target = _topk_hits(scores, test, split, max(recall_k, ndcg_k))
    out = [auc(scores, test, split), _recall(hits, n_target, recall_k),
           _ndcg(hits, n_target, ndcg_k)]
    return {m.label: m for m in out}
