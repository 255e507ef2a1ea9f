"""Selection via proxy: importance from a cheap model's training trajectory.

A proxy (Bias-only or MF) is trained on the full train split.  After every
epoch each train interaction is scored: squared error for explicit
feedback, and for implicit/sequential feedback the number of freshly
drawn negatives the positive beats.  Importance averages these over
epochs; the propensity-corrected variant divides it by ``p_u * p_i``.
The subsample keeps the most important interactions, or the whole
histories of the most important users.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .algorithms import (TrainConfig, _samplable, positive_keys, sample_negatives,
                         score_pairs, train as train_model)
from .data import Dataset
from .samplers import SampleResult, SampleSpec, SamplingError, _result, fill_units

PROXIES = ("bias-only", "mf")
GRANULARITIES = ("interaction", "user")


def strategy_name(proxy: str, granularity: str, prop: bool) -> str:
    return f"svp-cf{'-prop' if prop else ''}-{proxy}-{granularity}"


SVP_STRATEGIES = tuple(strategy_name(p, g, prop) for g in GRANULARITIES
                       for prop in (False, True) for p in ("mf", "bias-only"))


def parse_strategy(name: str) -> tuple[str, str, bool]:
    """``svp-cf-prop-mf-user`` -> ``("mf", "user", True)``."""
    for proxy in PROXIES:
        for gran in GRANULARITIES:
            for prop in (False, True):
                if strategy_name(proxy, gran, prop) == name:
                    return proxy, gran, prop
    raise SamplingError(f"not an SVP strategy: {name!r}")


@dataclass(frozen=True)
class SvpConfig:
    epochs: int = 10
    n_neg: int = 4
    A: float = 0.55
    B: float = 1.5
    proxy: TrainConfig = field(default_factory=lambda: TrainConfig(latent_size=8, epochs=10))


@dataclass(frozen=True, eq=False)
class EpochTrace:
    """Per-epoch, per-train-interaction proxy statistics, shape ``(E, n)``.

    ``kind`` is ``"squared_error"`` (explicit) or ``"correct"`` (number of
    the ``n_neg`` sampled negatives scored strictly below the positive).
    """

    kind: str
    values: np.ndarray
    n_neg: int = 0

    @property
    def epochs(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True, eq=False)
class ImportanceTable:
    interaction: np.ndarray
    user: np.ndarray
    granularity: str = "interaction"
    propensity_corrected: bool = False
    propensity: np.ndarray | None = None

    def for_granularity(self, granularity: str) -> "ImportanceTable":
        if granularity not in GRANULARITIES:
            raise ValueError(f"unknown granularity {granularity!r}")
        return replace(self, granularity=granularity)


def train_proxy(train: Dataset, proxy_kind: str, scenario: str,
                config: SvpConfig | None = None, seed: int = 0) -> EpochTrace:
    if proxy_kind not in PROXIES:
        raise ValueError(f"proxy must be one of {PROXIES}")
    config = config or SvpConfig()
    tc = replace(config.proxy, epochs=config.epochs, seed=seed)
    records = []
    if scenario == "explicit":
        def record(epoch, model):
            pred = score_pairs(model, train.users, train.items)
            records.append((pred - train.ratings) ** 2)
    elif scenario in ("implicit", "sequential"):
        if config.n_neg < 1:
            raise ValueError("n_neg must be >= 1")
        rng = np.random.default_rng([seed, 1])
        keys = positive_keys(train)
        ok = _samplable(train, keys)
        users = np.repeat(train.users[ok], config.n_neg)

        def record(epoch, model):
            neg = sample_negatives(rng, users, keys, train.num_items)
            s_pos = np.repeat(score_pairs(model, train.users[ok], train.items[ok]), config.n_neg)
            beats = (s_pos > score_pairs(model, users, neg)).reshape(-1, config.n_neg)
            # a user who consumed every item has nothing to mis-rank
            correct = np.full(len(train), config.n_neg, dtype=np.int64)
            correct[ok] = beats.sum(axis=1)
            records.append(correct)
    else:
        raise ValueError(f"unknown scenario {scenario!r}")
    train_model(train, proxy_kind, scenario, tc, callback=record)
    if not records:
        raise ValueError("proxy must be trained for at least one epoch")
    values = np.vstack(records)
    if not np.all(np.isfinite(values)):
        bad = int(np.flatnonzero(~np.isfinite(values).all(axis=1))[0]) + 1
        raise FloatingPointError(f"proxy produced non-finite errors in epoch {bad}")
    kind = "squared_error" if scenario == "explicit" else "correct"
    return EpochTrace(kind, values, config.n_neg if kind == "correct" else 0)


def _user_mean(values: np.ndarray, train: Dataset) -> np.ndarray:
    counts = train.user_counts()
    sums = np.bincount(train.users, weights=values, minlength=train.num_users)
    return np.divide(sums, counts, out=np.zeros(train.num_users), where=counts > 0)


def importance_explicit(trace: EpochTrace, train: Dataset) -> ImportanceTable:
    """Mean squared error over epochs (a 1/E rescaling of the summed form)."""
    if trace.kind != "squared_error":
        raise ValueError("explicit importance needs a squared-error trace")
    inter = trace.values.mean(axis=0)
    return ImportanceTable(inter, _user_mean(inter, train))


def importance_implicit(trace: EpochTrace, train: Dataset, smoothing: float = 1.0) -> ImportanceTable:
    """Mean over epochs of ``(n_neg + 2s) / (correct + s)``.

    With the default ``s = 1`` a perfectly ranked positive scores
    ``(n + 2) / (n + 1)`` and a fully mis-ranked one ``n + 2``.
    """
    if trace.kind != "correct":
        raise ValueError("implicit importance needs a ranking trace")
    if smoothing <= 0:
        raise ValueError("smoothing must be positive")
    inv_auc = (trace.n_neg + 2 * smoothing) / (trace.values + smoothing)
    inter = inv_auc.mean(axis=0)
    return ImportanceTable(inter, _user_mean(inter, train))


@dataclass(frozen=True, eq=False)
class PropensityParams:
    """Sigmoid-in-log-count propensity model, ``p_ui = p_u * p_i``."""

    num_users: int
    num_items: int
    user_counts: np.ndarray
    item_counts: np.ndarray
    A: float = 0.55
    B: float = 1.5

    def __post_init__(self):
        for n, what in ((self.num_users, "users"), (self.num_items, "items")):
            # C = (log n - 1)(B + 1)^A must be positive, i.e. n > e
            if n <= math.e:
                raise ValueError(f"propensity model needs at least 3 {what}, got {n}")
        if self.B <= -1 or (np.any(self.user_counts + self.B <= 0)
                            or np.any(self.item_counts + self.B <= 0)):
            raise ValueError("N + B must be positive")

    @classmethod
    def from_train(cls, train: Dataset, A: float = 0.55, B: float = 1.5) -> "PropensityParams":
        return cls(train.num_users, train.num_items, train.user_counts(),
                   train.item_counts(), A, B)

    @property
    def C_u(self) -> float:
        return (math.log(self.num_users) - 1.0) * (self.B + 1.0) ** self.A

    @property
    def C_i(self) -> float:
        return (math.log(self.num_items) - 1.0) * (self.B + 1.0) ** self.A

    def p_user(self, u) -> np.ndarray:
        return sigmoid_propensity(self.user_counts[u], self.C_u, self.A, self.B)

    def p_item(self, i) -> np.ndarray:
        return sigmoid_propensity(self.item_counts[i], self.C_i, self.A, self.B)


def sigmoid_propensity(n, C: float, A: float, B: float):
    """``1 / (1 + C * exp(-A * ln(n + B)))``."""
    return 1.0 / (1.0 + C * np.exp(-A * np.log(np.asarray(n, dtype=float) + B)))


def propensity(u, i, params: PropensityParams):
    return params.p_user(u) * params.p_item(i)


def importance_prop(table: ImportanceTable, params: PropensityParams,
                    train: Dataset) -> ImportanceTable:
    p = propensity(train.users, train.items, params)
    inter = table.interaction / p
    return ImportanceTable(inter, _user_mean(inter, train), table.granularity, True, p)


def importance_table(train: Dataset, scenario: str, proxy_kind: str, prop: bool,
                     config: SvpConfig | None = None, seed: int = 0,
                     trace: EpochTrace | None = None) -> ImportanceTable:
    """Train the proxy (unless ``trace`` is given) and build the importance table."""
    config = config or SvpConfig()
    trace = trace or train_proxy(train, proxy_kind, scenario, config, seed)
    if trace.kind == "squared_error":
        table = importance_explicit(trace, train)
    else:
        table = importance_implicit(trace, train)
    if prop:
        table = importance_prop(table, PropensityParams.from_train(train, config.A, config.B), train)
    return table


def _descending(values: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    shuffled = rng.permutation(len(values))
    return shuffled[np.argsort(-values[shuffled], kind="stable")]


def svp_sample(train: Dataset, table: ImportanceTable, spec: SampleSpec) -> SampleResult:
    """Keep the hardest interactions, or the hardest users' full histories."""
    if len(table.interaction) != len(train):
        raise ValueError("importance table does not match the train set")
    b = spec.budget(len(train))
    if b > len(train):
        raise SamplingError(f"budget {b} exceeds train size {len(train)}")
    rng = np.random.default_rng(spec.seed)
    if table.granularity == "interaction":
        keep = _descending(table.interaction, rng)[:b]
    else:
        active = train.user_counts() > 0
        order = _descending(np.where(active, table.user, -np.inf), rng)
        order = order[active[order]]
        keep = fill_units((train.user_history(u) for u in order), b, rng)
    return _result(train, spec, keep, b, granularity=table.granularity,
                   propensity_corrected=table.propensity_corrected)


# --------------------------------------------------------------------------
# Monte-Carlo check that dividing by the true observation probability
# makes the observed-data importance unbiased.


@dataclass(frozen=True)
class SimConfig:
    num_users: int = 60
    num_items: int = 40
    density: float = 0.25
    A: float = 0.55
    B: float = 1.5
    delta: str = "gamma"            # "gamma" or "constant"
    delta_value: float = 1.0
    propensity: str = "model"       # "model" or "one"
    tolerance: float = 0.02
    seed: int = 0


@dataclass(frozen=True)
class UnbiasednessReport:
    estimate: float
    target: float
    relative_error: float
    trials: int
    observed_fraction: float
    passed: bool


def check_unbiasedness(sim: SimConfig, trials: int, chunk: int = 2000) -> UnbiasednessReport:
    """Compare ``E[sum over observed Delta/p]`` with ``sum over true positives Delta``.

    Both sides are divided by the number of true positives.  Each true
    positive is revealed independently with probability exactly ``p_ui``
    taken from the propensity model fitted to the true counts.
    """
    rng = np.random.default_rng(sim.seed)
    truth = rng.random((sim.num_users, sim.num_items)) < sim.density
    u, i = np.nonzero(truth)
    if len(u) == 0:
        raise ValueError("simulation has no true positives")
    if sim.delta == "constant":
        delta = np.full(len(u), sim.delta_value)
    else:
        delta = rng.gamma(2.0, 0.5, len(u))
    if sim.propensity == "one":
        p = np.ones(len(u))
    else:
        params = PropensityParams(sim.num_users, sim.num_items, truth.sum(axis=1),
                                  truth.sum(axis=0), sim.A, sim.B)
        p = propensity(u, i, params)
    weight = delta / p
    total, observed, done = 0.0, 0, 0
    while done < trials:
        n = min(chunk, trials - done)
        seen = rng.random((n, len(u))) < p
        total += float((seen @ weight).sum())
        observed += int(seen.sum())
        done += n
    if observed == 0:
        raise ValueError("no interaction was ever observed")
    estimate = total / trials / len(u)
    target = float(delta.mean())
    rel = abs(estimate - target) / target
    return UnbiasednessReport(estimate, target, rel, trials,
                              observed / (trials * len(u)), rel < sim.tolerance)
