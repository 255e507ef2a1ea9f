"""Leaderboards, Kendall's tau-b, and the sampling-fidelity aggregates.

``psi`` averages, for one dataset and strategy, the tau between the full
data leaderboard and the sampled-data leaderboard over every pertinent
(scenario, metric) pair and every sampling percent.  ``p_mle`` estimates
how likely an algorithm is to climb the leaderboard under sampling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

PERCENTS = (80, 60, 40, 20, 10, 1)

# pertinent metrics per scenario
CELLS = {
    "explicit": ("MSE",),
    "implicit": ("AUC", "Recall@100", "nDCG@10"),
    "sequential": ("AUC", "Recall@100", "nDCG@10"),
}
LOWER_IS_BETTER = {"MSE"}


class EvaluationError(ValueError):
    pass


def kendall_tau(r1, r2) -> float:
    """Tie-corrected Kendall tau-b between two rankings of the same items.

    Rankings are mappings ``name -> rank`` or aligned sequences.  tau-b is
    undefined when a ranking is constant: two all-tied rankings agree
    (1.0), one all-tied against an ordered ranking gives 0.0.
    """
    if isinstance(r1, Mapping):
        if set(r1) != set(r2):
            raise EvaluationError("rankings cover different algorithms")
        keys = sorted(r1)
        a = np.array([r1[k] for k in keys], dtype=float)
        b = np.array([r2[k] for k in keys], dtype=float)
    else:
        a, b = np.asarray(r1, dtype=float), np.asarray(r2, dtype=float)
        if a.shape != b.shape:
            raise EvaluationError("rankings have different lengths")
    n = len(a)
    if n < 2:
        raise EvaluationError("Kendall tau needs at least two items")
    iu = np.triu_indices(n, 1)
    sa = np.sign(a[:, None] - a[None, :])[iu]
    sb = np.sign(b[:, None] - b[None, :])[iu]
    n0 = len(sa)
    untied_a = n0 - np.count_nonzero(sa == 0)
    untied_b = n0 - np.count_nonzero(sb == 0)
    if untied_a == 0 or untied_b == 0:
        return 1.0 if untied_a == untied_b else 0.0
    return float(np.dot(sa, sb) / math.sqrt(untied_a * untied_b))


@dataclass(frozen=True)
class Leaderboard:
    """Algorithm ranking for one (dataset, scenario, metric, source) cell.

    ``strategy``/``percent`` are ``None`` for the full-data leaderboard.
    Rank 1 is best; exactly equal metric values share an averaged rank.
    """

    dataset: str
    scenario: str
    metric: str
    values: Mapping[str, float]
    strategy: str | None = None
    percent: float | None = None
    ranks: Mapping[str, float] = field(init=False)

    def __post_init__(self):
        names = sorted(self.values)
        v = np.array([self.values[k] for k in names], dtype=float)
        key = v if self.metric in LOWER_IS_BETTER else -v
        ranks = rankdata(key, method="average")
        object.__setattr__(self, "ranks", dict(zip(names, map(float, ranks))))

    @property
    def n(self) -> int:
        return len(self.values)

    @property
    def is_full(self) -> bool:
        return self.strategy is None


def _index(boards: Iterable[Leaderboard]):
    full, sampled = {}, {}
    for lb in boards:
        if lb.is_full:
            full[(lb.dataset, lb.scenario, lb.metric)] = lb
        else:
            sampled[(lb.dataset, lb.strategy, float(lb.percent), lb.scenario, lb.metric)] = lb
    return full, sampled


@dataclass
class PsiReport:
    taus: dict = field(default_factory=dict)       # (dataset, strategy, p, f, m) -> tau
    psi: dict = field(default_factory=dict)        # (dataset, strategy) -> psi
    psi_mean: dict = field(default_factory=dict)   # strategy -> mean psi over datasets
    normalizer: dict = field(default_factory=dict)  # (dataset, strategy) -> lambda
    partial: bool = False
    missing: list = field(default_factory=list)
    p_mle: dict = field(default_factory=dict)      # (algorithm, f, p) -> P_MLE

    def mean_tau_by_percent(self) -> dict:
        """Average tau per sampling percent across datasets and strategies."""
        by = {}
        for (_, _, p, _, _), t in self.taus.items():
            by.setdefault(p, []).append(t)
        return {p: float(np.mean(v)) for p, v in sorted(by.items())}

    def to_dict(self) -> dict:
        return {
            "psi": [{"dataset": d, "strategy": s, "psi": v, "lambda": self.normalizer[(d, s)]}
                    for (d, s), v in sorted(self.psi.items())],
            "psi_mean": dict(sorted(self.psi_mean.items())),
            "taus": [{"dataset": d, "strategy": s, "percent": p, "scenario": f,
                      "metric": m, "tau": t}
                     for (d, s, p, f, m), t in sorted(self.taus.items())],
            "mean_tau_by_percent": {str(k): v for k, v in self.mean_tau_by_percent().items()},
            "p_mle": [{"algorithm": a, "scenario": f, "percent": p, "p_mle": v}
                      for (a, f, p), v in sorted(self.p_mle.items())],
            "partial": self.partial,
            "missing": [list(m) for m in self.missing],
        }


def compute_psi(boards: Iterable[Leaderboard], strategies: Sequence[str] | None = None,
                percents: Sequence[float] = PERCENTS, cells: Mapping = CELLS,
                allow_partial: bool = False) -> PsiReport:
    """Average full-vs-sampled tau per (dataset, strategy).

    Every (scenario, metric, percent) cell must be present unless
    ``allow_partial`` is set, in which case the normaliser covers only the
    cells that exist.
    """
    full, sampled = _index(boards)
    datasets = sorted({k[0] for k in full})
    if strategies is None:
        strategies = sorted({k[1] for k in sampled})
    report = PsiReport()
    for ds in datasets:
        for s in strategies:
            taus = []
            for f, metrics in cells.items():
                for m in metrics:
                    for p in percents:
                        key = (ds, s, float(p), f, m)
                        if (ds, f, m) not in full or key not in sampled:
                            if not allow_partial:
                                raise EvaluationError(
                                    f"missing leaderboard: dataset={ds} strategy={s} "
                                    f"percent={p} scenario={f} metric={m}")
                            report.missing.append(key)
                            continue
                        t = kendall_tau(full[(ds, f, m)].ranks, sampled[key].ranks)
                        report.taus[key] = t
                        taus.append(t)
            if taus:
                report.psi[(ds, s)] = float(np.mean(taus))
                report.normalizer[(ds, s)] = 1.0 / len(taus)
    report.partial = bool(report.missing)
    for s in strategies:
        vals = [v for (d, st), v in report.psi.items() if st == s]
        if vals:
            report.psi_mean[s] = float(np.mean(vals))
    return report


def p_mle_term(full_rank: float, sampled_rank: float, n: int) -> float:
    if n < 2:
        raise EvaluationError("P_MLE needs at least two algorithms")
    return 0.5 + (full_rank - sampled_rank) / (2.0 * (n - 1))


def compute_p_mle(boards: Iterable[Leaderboard], algorithm: str, scenario: str,
                  percent: float, strategies: Sequence[str] | None = None) -> float:
    """Mean over datasets, strategies and metrics of the rank-movement term."""
    full, sampled = _index(boards)
    terms = []
    for (ds, s, p, f, m), lb in sampled.items():
        if f != scenario or p != float(percent) or algorithm not in lb.ranks:
            continue
        if strategies is not None and s not in strategies:
            continue
        ref = full.get((ds, f, m))
        if ref is None:
            continue
        terms.append(p_mle_term(ref.ranks[algorithm], lb.ranks[algorithm], lb.n))
    if not terms:
        raise EvaluationError(f"no cells for {algorithm} / {scenario} / {percent}%")
    return float(np.mean(terms))


def attach_p_mle(report: PsiReport, boards: Sequence[Leaderboard],
                 strategies: Sequence[str] | None = None) -> PsiReport:
    boards = list(boards)
    combos = {(a, lb.scenario, float(lb.percent)) for lb in boards if not lb.is_full
              for a in lb.ranks}
    for a, f, p in sorted(combos):
        report.p_mle[(a, f, p)] = compute_p_mle(boards, a, f, p, strategies)
    return report
