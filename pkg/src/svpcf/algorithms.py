"""Recommender slate: PopRec, Bias-only, MF and NeuMF.

Explicit feedback is fit with regularised squared error, implicit and
sequential feedback with BPR over uniformly drawn negatives.  Training is
plain per-interaction SGD and fully determined by ``TrainConfig.seed``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import _kernels as K
from .data import Dataset, SplitBundle

KINDS = ("bias-only", "mf", "neumf")

LATENT_GRID = (4, 8, 16, 32, 50)
LR_GRID = (0.001, 0.006, 0.02)
DROPOUT_GRID = (0.0, 0.3, 0.5)
INIT_STD = 0.1


class DivergenceError(RuntimeError):
    def __init__(self, epoch: int):
        super().__init__(f"training diverged (non-finite loss) in epoch {epoch}")
        self.epoch = epoch


@dataclass(frozen=True)
class TrainConfig:
    latent_size: int = 8
    learning_rate: float = 0.05
    dropout: float = 0.0
    l2_reg: float = 0.01
    epochs: int = 20
    n_neg: int = 1
    seed: int = 0


@dataclass(eq=False)
class ModelParams:
    kind: str
    alpha: float
    beta_u: np.ndarray
    beta_i: np.ndarray
    gamma_u: np.ndarray
    gamma_i: np.ndarray
    mlp: tuple | None = None  # (W1, b1, W2, b2, w3)
    config: TrainConfig = field(default_factory=TrainConfig)
    loss: str = "mse"

    @property
    def num_users(self) -> int:
        return len(self.beta_u)

    @property
    def num_items(self) -> int:
        return len(self.beta_i)

    def copy(self) -> "ModelParams":
        mlp = None if self.mlp is None else tuple(a.copy() for a in self.mlp)
        return replace(self, beta_u=self.beta_u.copy(), beta_i=self.beta_i.copy(),
                       gamma_u=self.gamma_u.copy(), gamma_i=self.gamma_i.copy(), mlp=mlp)

    def arrays(self) -> dict[str, np.ndarray]:
        out = {"alpha": np.array([self.alpha]), "beta_u": self.beta_u, "beta_i": self.beta_i,
               "gamma_u": self.gamma_u, "gamma_i": self.gamma_i}
        if self.mlp is not None:
            out.update(zip(("W1", "b1", "W2", "b2", "w3"), self.mlp))
        return out

    def to_json(self, path) -> None:
        payload = {"kind": self.kind, "loss": self.loss, "config": asdict(self.config),
                   "params": {k: v.tolist() for k, v in self.arrays().items()}}
        Path(path).write_text(json.dumps(payload))

    @classmethod
    def from_json(cls, path) -> "ModelParams":
        payload = json.loads(Path(path).read_text())
        p = {k: np.asarray(v, dtype=float) for k, v in payload["params"].items()}
        d = int(payload["config"]["latent_size"]) if payload["kind"] != "bias-only" else 0
        mlp = tuple(p[k] for k in ("W1", "b1", "W2", "b2", "w3")) if "W1" in p else None
        return cls(payload["kind"], float(p["alpha"][0]), p["beta_u"], p["beta_i"],
                   p["gamma_u"].reshape(len(p["beta_u"]), d),
                   p["gamma_i"].reshape(len(p["beta_i"]), d), mlp,
                   TrainConfig(**payload["config"]), payload["loss"])


@dataclass(frozen=True, eq=False)
class PopularityModel:
    counts: np.ndarray
    num_users: int

    @classmethod
    def fit(cls, train: Dataset) -> "PopularityModel":
        return cls(train.item_counts().astype(float), train.num_users)

    @property
    def num_items(self) -> int:
        return len(self.counts)


def init_params(kind: str, num_users: int, num_items: int, config: TrainConfig,
                rng: np.random.Generator, loss: str = "mse") -> ModelParams:
    if kind not in KINDS:
        raise ValueError(f"unknown model kind {kind!r}")
    d = 0 if kind == "bias-only" else config.latent_size
    gu = rng.normal(0.0, INIT_STD, (num_users, d))
    gi = rng.normal(0.0, INIT_STD, (num_items, d))
    mlp = None
    if kind == "neumf":
        h1, h2 = 2 * d, d
        mlp = (rng.normal(0.0, INIT_STD, (3 * d, h1)), np.zeros(h1),
               rng.normal(0.0, INIT_STD, (h1, h2)), np.zeros(h2),
               rng.normal(0.0, INIT_STD, h2))
    return ModelParams(kind, 0.0, np.zeros(num_users), np.zeros(num_items), gu, gi, mlp,
                       config, loss)


def _dropout_masks(rng, rate: float, steps: int, h1: int, h2: int):
    if rate <= 0.0:
        return np.ones((1, h1)), np.ones((1, h2))
    keep = 1.0 - rate
    m1 = (rng.random((steps, h1)) < keep) / keep
    m2 = (rng.random((steps, h2)) < keep) / keep
    return m1, m2


def positive_keys(train: Dataset) -> np.ndarray:
    """Sorted unique ``user * num_items + item`` keys of the train positives."""
    return np.unique(train.users * train.num_items + train.items)


def sample_negatives(rng: np.random.Generator, users: np.ndarray, pos_keys: np.ndarray,
                     num_items: int) -> np.ndarray:
    """One uniform non-positive item per entry of ``users`` (rejection sampling).

    Callers must drop users that have no negatives at all.
    """
    neg = rng.integers(0, num_items, size=len(users))
    todo = np.arange(len(users))
    while len(todo):
        keys = users[todo] * num_items + neg[todo]
        pos = np.searchsorted(pos_keys, keys)
        clash = (pos < len(pos_keys)) & (pos_keys[np.minimum(pos, len(pos_keys) - 1)] == keys)
        todo = todo[clash]
        neg[todo] = rng.integers(0, num_items, size=len(todo))
    return neg


def _samplable(train: Dataset, pos_keys: np.ndarray) -> np.ndarray:
    """Mask of train positions whose user has at least one negative item."""
    n_pos = np.bincount(pos_keys // train.num_items, minlength=train.num_users)
    return n_pos[train.users] < train.num_items


Callback = Callable[[int, ModelParams], None]


def train_explicit(train: Dataset, kind: str, config: TrainConfig,
                   callback: Callback | None = None) -> ModelParams:
    """Fit ``kind`` to ratings by SGD on squared error plus l2."""
    rng = np.random.default_rng(config.seed)
    m = init_params(kind, train.num_users, train.num_items, config, rng, "mse")
    alpha = np.array([m.alpha])
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train))
        if kind == "neumf":
            W1, b1, W2, b2, w3 = m.mlp
            M1, M2 = _dropout_masks(rng, config.dropout, len(order), W1.shape[1], W2.shape[1])
            loss = K.neumf_explicit_epoch(alpha, m.beta_u, m.beta_i, m.gamma_u, m.gamma_i,
                                          W1, b1, W2, b2, w3, M1, M2, train.users,
                                          train.items, train.ratings, order,
                                          config.learning_rate, config.l2_reg)
        else:
            loss = K.mf_explicit_epoch(alpha, m.beta_u, m.beta_i, m.gamma_u, m.gamma_i,
                                       train.users, train.items, train.ratings, order,
                                       config.learning_rate, config.l2_reg)
        m.alpha = float(alpha[0])
        if not np.isfinite(loss):
            raise DivergenceError(epoch)
        if callback is not None:
            callback(epoch, m)
    return m


def train_bpr(train: Dataset, kind: str, config: TrainConfig,
              callback: Callback | None = None) -> ModelParams:
    """Fit ``kind`` with the pairwise BPR loss, ``n_neg`` negatives per positive."""
    rng = np.random.default_rng(config.seed)
    m = init_params(kind, train.num_users, train.num_items, config, rng, "bpr")
    keys = positive_keys(train)
    usable = np.flatnonzero(_samplable(train, keys))
    for epoch in range(1, config.epochs + 1):
        t = np.repeat(rng.permutation(usable), config.n_neg)
        users, pos = train.users[t], train.items[t]
        neg = sample_negatives(rng, users, keys, train.num_items)
        if kind == "neumf":
            W1, b1, W2, b2, w3 = m.mlp
            M1, M2 = _dropout_masks(rng, config.dropout, len(t), W1.shape[1], W2.shape[1])
            loss = K.neumf_bpr_epoch(m.beta_i, m.gamma_u, m.gamma_i, W1, b1, W2, b2, w3,
                                     M1, M2, users, pos, neg, config.learning_rate,
                                     config.l2_reg)
        else:
            loss = K.mf_bpr_epoch(m.beta_i, m.gamma_u, m.gamma_i, users, pos, neg,
                                  config.learning_rate, config.l2_reg)
        if not np.isfinite(loss):
            raise DivergenceError(epoch)
        if callback is not None:
            callback(epoch, m)
    return m


def train(train_set: Dataset, kind: str, scenario: str, config: TrainConfig,
          callback: Callback | None = None):
    if kind == "poprec":
        return PopularityModel.fit(train_set)
    if scenario == "explicit":
        return train_explicit(train_set, kind, config, callback)
    return train_bpr(train_set, kind, config, callback)


# --------------------------------------------------------------------------
# Scoring


def _neumf_mlp(m: ModelParams, pu: np.ndarray, qi: np.ndarray) -> np.ndarray:
    W1, b1, W2, b2, w3 = m.mlp
    pu, qi = np.broadcast_arrays(pu, qi)
    x = np.concatenate([pu, qi, pu * qi], axis=-1)
    h = np.maximum(x @ W1 + b1, 0.0)
    h = np.maximum(h @ W2 + b2, 0.0)
    return h @ w3


def score_matrix(model, users: np.ndarray | None = None, chunk: int = 256) -> np.ndarray:
    """Scores of every item for ``users`` (default: all users), one row per user."""
    if users is None:
        users = np.arange(model.num_users)
    users = np.asarray(users, dtype=np.int64)
    if isinstance(model, PopularityModel):
        return np.broadcast_to(model.counts, (len(users), model.num_items)).copy()
    base = model.alpha + model.beta_u[users, None] + model.beta_i[None, :]
    if model.kind != "neumf":
        return base + model.gamma_u[users] @ model.gamma_i.T
    # split the first layer: [p, q, p*q] @ W1 = p @ Wa + q @ Wb + q @ (p[:, None] * Wc)
    W1, b1, W2, b2, w3 = model.mlp
    d = model.gamma_u.shape[1]
    Wa, Wb, Wc = W1[:d], W1[d:2 * d], W1[2 * d:]
    qi = model.gamma_i
    item_part = qi @ Wb + b1
    out = np.empty_like(base)
    for lo in range(0, len(users), chunk):
        pu = model.gamma_u[users[lo:lo + chunk]]
        h = np.matmul(qi[None], pu[:, :, None] * Wc[None])
        h += (pu @ Wa)[:, None, :]
        h += item_part[None]
        np.maximum(h, 0.0, out=h)
        h = np.maximum(h @ W2 + b2, 0.0)
        out[lo:lo + chunk] = h @ w3
    return base + out


def score(model, u: int, i: int) -> float:
    if not (0 <= u < model.num_users and 0 <= i < model.num_items):
        raise IndexError(f"unknown user/item index ({u}, {i})")
    if isinstance(model, PopularityModel):
        return float(model.counts[i])
    s = model.alpha + model.beta_u[u] + model.beta_i[i]
    if model.kind == "neumf":
        return float(s + _neumf_mlp(model, model.gamma_u[u], model.gamma_i[i]))
    return float(s + model.gamma_u[u] @ model.gamma_i[i])


def score_pairs(model, users: np.ndarray, items: np.ndarray) -> np.ndarray:
    if isinstance(model, PopularityModel):
        return model.counts[items].copy()
    s = model.alpha + model.beta_u[users] + model.beta_i[items]
    pu, qi = model.gamma_u[users], model.gamma_i[items]
    if model.kind == "neumf":
        return s + _neumf_mlp(model, pu, qi)
    return s + np.einsum("nk,nk->n", pu, qi)


def rank_all_items(model, u: int, exclude=()) -> np.ndarray:
    """All items except ``exclude``, best first; equal scores by item index."""
    s = score_matrix(model, np.array([u]))[0]
    order = np.argsort(-s, kind="stable")
    if len(exclude):
        order = order[~np.isin(order, np.fromiter(exclude, dtype=np.int64))]
    return order


# --------------------------------------------------------------------------
# Per-sample losses and gradients (reference surface for gradient checks)


def sample_loss(m: ModelParams, sample: tuple, masks=None) -> float:
    """Loss of one sample, written independently of the SGD kernels.

    ``sample`` is ``(u, i, r)`` for squared error or ``(u, i, j)`` for BPR.
    """
    l2 = m.config.l2_reg
    W = None if m.mlp is None else m.mlp
    if masks is None and W is not None:
        masks = (np.ones(W[0].shape[1]), np.ones(W[2].shape[1]))

    def mlp(pu, qi):
        if W is None:
            return pu @ qi
        x = np.concatenate([pu, qi, pu * qi])
        h = np.maximum(x @ W[0] + W[1], 0.0) * masks[0]
        h = np.maximum(h @ W[2] + W[3], 0.0) * masks[1]
        return h @ W[4]

    u, i, third = sample
    pu, qi = m.gamma_u[u], m.gamma_i[i]
    if m.loss == "mse":
        pred = m.alpha + m.beta_u[u] + m.beta_i[i] + mlp(pu, qi)
        reg = m.beta_u[u] ** 2 + m.beta_i[i] ** 2 + pu @ pu + qi @ qi
        return float((pred - third) ** 2 + l2 * reg)
    j = int(third)
    qj = m.gamma_i[j]
    x = m.beta_i[i] - m.beta_i[j] + mlp(pu, qi) - mlp(pu, qj)
    reg = m.beta_i[i] ** 2 + m.beta_i[j] ** 2 + pu @ pu + qi @ qi + qj @ qj
    return float(np.logaddexp(0.0, -x) + l2 * reg)


def sample_gradient(m: ModelParams, sample: tuple, masks=None) -> dict[str, np.ndarray]:
    """Full-shape gradients of :func:`sample_loss`, computed by the SGD kernels."""
    l2 = m.config.l2_reg
    grads = {k: np.zeros_like(v) for k, v in m.arrays().items()}
    d = m.gamma_u.shape[1]
    u, i, third = sample
    gpu, gqi = np.zeros(d), np.zeros(d)
    if m.mlp is not None:
        W1, b1, W2, b2, w3 = m.mlp
        if masks is None:
            masks = (np.ones(W1.shape[1]), np.ones(W2.shape[1]))
        gmlp = [np.zeros_like(a) for a in m.mlp]
        ws = np.empty(K.workspace_size(d, W1.shape[1], W2.shape[1]))
    if m.loss == "mse":
        if m.mlp is None:
            _, ga, gbu, gbi = K.mf_explicit_grad(m.alpha, m.beta_u[u], m.beta_i[i],
                                                 m.gamma_u[u], m.gamma_i[i], float(third),
                                                 l2, gpu, gqi)
        else:
            _, ga, gbu, gbi = K.neumf_explicit_grad(
                m.alpha, m.beta_u[u], m.beta_i[i], m.gamma_u[u], m.gamma_i[i],
                W1, b1, W2, b2, w3, masks[0], masks[1], float(third), l2, gpu, gqi, *gmlp, ws)
        grads["alpha"][0] = ga
        grads["beta_u"][u] = gbu
        grads["beta_i"][i] = gbi
        grads["gamma_u"][u] = gpu
        grads["gamma_i"][i] = gqi
    else:
        j = int(third)
        gqj = np.zeros(d)
        if m.mlp is None:
            _, gbi, gbj = K.mf_bpr_grad(m.beta_i[i], m.beta_i[j], m.gamma_u[u],
                                        m.gamma_i[i], m.gamma_i[j], l2, gpu, gqi, gqj)
        else:
            _, gbi, gbj = K.neumf_bpr_grad(
                m.beta_i[i], m.beta_i[j], m.gamma_u[u], m.gamma_i[i], m.gamma_i[j],
                W1, b1, W2, b2, w3, masks[0], masks[1], l2, gpu, gqi, gqj, *gmlp, ws)
        grads["beta_i"][i] += gbi
        grads["beta_i"][j] += gbj
        grads["gamma_u"][u] = gpu
        grads["gamma_i"][i] += gqi
        grads["gamma_i"][j] += gqj
    if m.mlp is not None:
        grads.update(zip(("W1", "b1", "W2", "b2", "w3"), gmlp))
    return grads


# --------------------------------------------------------------------------
# Grid training with validation-based selection


@dataclass(frozen=True)
class Algorithm:
    """A slate entry: a model kind with fixed overrides and a search grid."""

    name: str
    kind: str
    fixed: dict = field(default_factory=dict)
    grid: dict = field(default_factory=dict)

    def configs(self, base: TrainConfig) -> list[TrainConfig]:
        if self.kind == "poprec":
            return [base]
        out = [replace(base, **self.fixed)]
        for key, values in self.grid.items():
            out = [replace(c, **{key: v}) for c in out for v in values]
        return out


DEFAULT_SLATE = (
    Algorithm("PopRec", "poprec"),
    Algorithm("Bias-only", "bias-only"),
    Algorithm("MF-8", "mf", {"latent_size": 8}),
    Algorithm("MF-32", "mf", {"latent_size": 32}),
    Algorithm("NeuMF", "neumf", {"latent_size": 8}),
)


def fit_selected(split: SplitBundle, algorithm: Algorithm, base: TrainConfig,
                 train_set: Dataset | None = None, checkpoint_every: int | None = None):
    """Train every grid config; keep the best (config, epoch) on validation.

    Validation MSE decides for explicit feedback, validation nDCG@10 for
    implicit and sequential feedback.  With ``checkpoint_every`` the model
    is also scored after every that many epochs and the best snapshot is
    kept; otherwise only the final epoch counts.  Returns
    ``(model, config, value)`` where ``config.epochs`` is the chosen epoch.
    """
    from .metrics import mse, ndcg_at_k

    def value_of(model):
        if split.scenario == "explicit":
            return -mse(model, split.validation).value
        return ndcg_at_k(model, split.validation, split, k=10).value

    train_set = split.train if train_set is None else train_set
    best = None
    for config in algorithm.configs(base):
        snaps = []
        if checkpoint_every and algorithm.kind != "poprec":
            def callback(epoch, m):
                if epoch % checkpoint_every == 0 and epoch < config.epochs:
                    snaps.append((value_of(m), epoch, m.copy()))
        else:
            callback = None
        model = train(train_set, algorithm.kind, split.scenario, config, callback)
        snaps.append((value_of(model), config.epochs, model))
        # earliest epoch wins exact ties
        value, epoch, model = max(snaps, key=lambda t: (t[0], -t[1]))
        if best is None or value > best[2]:
            best = (model, replace(config, epochs=epoch), value)
    model, config, value = best
    return model, config, (-value if split.scenario == "explicit" else value)
