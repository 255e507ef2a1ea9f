import numpy as np
import pytest

from svpcf.algorithms import (KINDS, DivergenceError, ModelParams, PopularityModel, TrainConfig,
                              init_params, rank_all_items, sample_gradient, score,
                              score_matrix, score_pairs, train, train_bpr, train_explicit)

from conftest import make_dataset

PARAM_KEYS = ("alpha", "beta_u", "beta_i", "gamma_u", "gamma_i", "W1", "b1", "W2", "b2", "w3")


def oracle_loss(p: dict, loss: str, sample, l2, masks=None):
    """Plain-numpy loss written from the model equations, not from the package."""
    u, i, third = sample

    def f(pu, qi):
        if "W1" not in p:
            return float(np.dot(pu, qi))
        h = np.concatenate([pu, qi, pu * qi]) @ p["W1"] + p["b1"]
        h = np.where(h > 0, h, 0.0) * masks[0]
        h = (h @ p["W2"] + p["b2"])
        h = np.where(h > 0, h, 0.0) * masks[1]
        return float(h @ p["w3"])

    pu, qi = p["gamma_u"][u], p["gamma_i"][i]
    if loss == "mse":
        r_hat = p["alpha"][0] + p["beta_u"][u] + p["beta_i"][i] + f(pu, qi)
        reg = p["beta_u"][u] ** 2 + p["beta_i"][i] ** 2 + np.sum(pu ** 2) + np.sum(qi ** 2)
        return (r_hat - third) ** 2 + l2 * reg
    j = third
    qj = p["gamma_i"][j]
    x = p["beta_i"][i] - p["beta_i"][j] + f(pu, qi) - f(pu, qj)
    reg = (p["beta_i"][i] ** 2 + p["beta_i"][j] ** 2 + np.sum(pu ** 2) + np.sum(qi ** 2)
           + np.sum(qj ** 2))
    return np.log1p(np.exp(-x)) + l2 * reg


def fd_gradient(p, loss, sample, l2, masks, h=1e-6):
    out = {}
    for k, a in p.items():
        g = np.zeros_like(a)
        for idx in np.ndindex(a.shape):
            old = a[idx]
            a[idx] = old + h
            up = oracle_loss(p, loss, sample, l2, masks)
            a[idx] = old - h
            down = oracle_loss(p, loss, sample, l2, masks)
            a[idx] = old
            g[idx] = (up - down) / (2 * h)
        out[k] = g
    return out


def random_model(rng, kind, loss, d=3, nu=3, ni=4):
    cfg = TrainConfig(latent_size=d, l2_reg=float(rng.uniform(0.0, 0.2)))
    m = init_params(kind, nu, ni, cfg, rng, loss)
    m.alpha = float(rng.normal())
    m.beta_u[:] = rng.normal(size=nu)
    m.beta_i[:] = rng.normal(size=ni)
    m.gamma_u[:] = rng.normal(size=m.gamma_u.shape)
    m.gamma_i[:] = rng.normal(size=m.gamma_i.shape)
    if m.mlp is not None:
        m.mlp = tuple(rng.normal(size=a.shape) for a in m.mlp)
    return m


def max_rel_err(a, b):
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-3)))


def gradient_check(kind, loss, seed):
    """Worst relative error between kernel gradients and finite differences."""
    rng = np.random.default_rng(seed)
    m = random_model(rng, kind, loss)
    u = int(rng.integers(m.num_users))
    i, j = (int(x) for x in rng.choice(m.num_items, 2, replace=False))
    sample = (u, i, float(rng.uniform(1, 5))) if loss == "mse" else (u, i, j)
    masks = None
    if m.mlp is not None:
        # inverted-dropout style masks: each unit dropped or scaled by 1/keep
        masks = tuple((rng.random(a.shape[1] if a.ndim == 2 else 0) < 0.7) / 0.7
                      for a in (m.mlp[0], m.mlp[2]))
    params = {k: v.copy() for k, v in m.arrays().items()}
    fd = fd_gradient(params, loss, sample, m.config.l2_reg, masks)
    an = sample_gradient(m, sample, masks)
    return max(max_rel_err(an[k], fd[k]) for k in fd)


@pytest.mark.parametrize("loss", ["mse", "bpr"])
@pytest.mark.parametrize("kind", KINDS)
def test_gradients_match_finite_differences(kind, loss):
    worst = max(gradient_check(kind, loss, seed) for seed in range(5))
    assert worst < 1e-4


def test_bias_only_single_interaction_converges_to_rating():
    d = make_dataset([0], [0], ratings=[4.0])
    m = train_explicit(d, "bias-only", TrainConfig(learning_rate=0.1, l2_reg=0.0, epochs=200))
    assert score(m, 0, 0) == pytest.approx(4.0, abs=1e-6)


@pytest.mark.parametrize("kind", KINDS)
def test_zero_epochs_returns_initialisation(kind):
    d = make_dataset([0, 1], [0, 1], ratings=[3.0, 5.0])
    cfg = TrainConfig(epochs=0, seed=4)
    m = train_explicit(d, kind, cfg)
    ref = init_params(kind, 2, 2, cfg, np.random.default_rng(4))
    for k, v in ref.arrays().items():
        np.testing.assert_array_equal(m.arrays()[k], v)


@pytest.mark.parametrize("kind", KINDS)
def test_bpr_ranks_positive_above_negative(kind):
    d = make_dataset([0], [0])
    d = type(d).from_arrays(np.array([0, 0]), np.array([0, 1]), None, None).subset(
        np.array([True, False]))
    assert d.num_items == 2 and len(d) == 1
    m = train_bpr(d, kind, TrainConfig(epochs=200, learning_rate=0.1))
    assert score(m, 0, 0) > score(m, 0, 1)


@pytest.mark.parametrize("scenario", ["explicit", "implicit"])
@pytest.mark.parametrize("kind", KINDS)
def test_training_is_deterministic(kind, scenario, synth_small):
    cfg = TrainConfig(epochs=2, seed=11, dropout=0.3)
    a = train(synth_small, kind, scenario, cfg)
    b = train(synth_small, kind, scenario, cfg)
    for k, v in a.arrays().items():
        np.testing.assert_array_equal(b.arrays()[k], v)


def test_divergence_names_epoch():
    d = make_dataset([0, 1, 1], [0, 0, 1], ratings=[1e200, -1e200, 1e200])
    with pytest.raises(DivergenceError, match="epoch 1"):
        train_explicit(d, "mf", TrainConfig(epochs=3, learning_rate=1.0))


def test_score_examples():
    rng = np.random.default_rng(0)
    m = init_params("bias-only", 2, 2, TrainConfig(), rng)
    assert score(m, 1, 1) == 0.0
    m = init_params("mf", 1, 1, TrainConfig(latent_size=2), rng)
    m.gamma_u[:] = 1.0
    m.gamma_i[:] = 1.0
    assert score(m, 0, 0) == 2.0
    with pytest.raises(IndexError):
        score(m, 1, 0)


def test_poprec_is_user_independent_and_ignores_ratings():
    d = make_dataset([0, 0, 1, 2, 2], [0, 1, 1, 1, 2], ratings=[5, 1, 2, 3, 4])
    m = PopularityModel.fit(d)
    s = score_matrix(m)
    assert np.all(s == s[0])
    assert s[0].tolist() == [1, 3, 1]
    d2 = make_dataset([0, 0, 1, 2, 2], [0, 1, 1, 1, 2], ratings=[1, 1, 1, 1, 1])
    np.testing.assert_array_equal(score_matrix(PopularityModel.fit(d2)), s)


def test_rank_all_items_examples():
    m = PopularityModel(np.array([1.0, 2.0]), 1)
    assert rank_all_items(m, 0).tolist() == [1, 0]
    m = PopularityModel(np.array([1.0, 2.0, 2.0, 0.5]), 1)
    assert rank_all_items(m, 0).tolist() == [1, 2, 0, 3]
    assert rank_all_items(m, 0, exclude={0, 1, 2}).tolist() == [3]


def test_l2_shrinks_parameters_monotonically(synth_small):
    norms = []
    for l2 in (0.0, 1.0, 5.0, 20.0):
        m = train_explicit(synth_small, "mf", TrainConfig(epochs=3, l2_reg=l2, learning_rate=0.01))
        norms.append([np.linalg.norm(m.arrays()[k]) for k in ("beta_u", "beta_i",
                                                                "gamma_u", "gamma_i")])
    norms = np.array(norms)
    assert np.all(np.diff(norms, axis=0) < 0)
    # factors vanish; per-sample SGD keeps biases near lr * residual
    assert norms[-1, 2:].max() < 0.01 and np.all(norms[-1] < 0.2 * norms[0])


@pytest.mark.parametrize("kind", ["mf", "neumf"])
def test_score_paths_agree(kind, synth_small):
    m = train(synth_small, kind, "implicit", TrainConfig(epochs=1))
    full = score_matrix(m)
    users = np.array([0, 5, 7])
    items = np.array([3, 3, 9])
    np.testing.assert_allclose(score_pairs(m, users, items), full[users, items])
    assert score(m, 5, 3) == pytest.approx(full[5, 3])


def test_checkpoint_round_trip(tmp_path, synth_small):
    m = train(synth_small, "neumf", "explicit", TrainConfig(epochs=1))
    m.to_json(tmp_path / "m.json")
    back = ModelParams.from_json(tmp_path / "m.json")
    np.testing.assert_allclose(score_matrix(back), score_matrix(m))
