import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from bindedvae.losses import (LossWeights, bce, bvae_loss, gaussian_kl, mask_vae_loss, neg_dice,
                              ratio_vae_loss, vae_loss)
from bindedvae.nn import PROB_EPS, ShapeError

from conftest import central_difference, rel_err, sample_indices

unit = st.floats(0.0, 1.0)


def test_loss_weight_defaults_are_selected_values():
    w = LossWeights()
    assert (w.lambda_r, w.lambda_m, w.gamma, w.beta) == (10.0, 1.0, 5.0, 10.0)
    with pytest.raises(ValueError):
        LossWeights(gamma=-1.0)
    with pytest.raises(ValueError):
        LossWeights(beta=float("nan"))


# ---------------------------------------------------------------- BCE

def test_bce_perfect_binary_reconstruction():
    t = np.array([[1.0, 0.0, 1.0, 0.0]])
    value, _ = bce(t, np.clip(t, PROB_EPS, 1 - PROB_EPS))
    assert 0 <= value < 1e-6


def test_bce_hand_values():
    assert bce([[1.0]], [[0.5]])[0] == pytest.approx(math.log(2), abs=1e-12)
    assert bce([[0.5]], [[0.5]])[0] == pytest.approx(math.log(2), abs=1e-12)


def test_bce_sums_features_and_averages_rows():
    # two rows: row sums ln2 * 2 and ln2 * 2 -> mean 2 ln2
    assert bce(np.ones((2, 2)), np.full((2, 2), 0.5))[0] == pytest.approx(2 * math.log(2))


def test_bce_shape_mismatch():
    with pytest.raises(ShapeError):
        bce(np.zeros((2, 3)), np.full((2, 2), 0.5))


@settings(max_examples=50)
@given(arrays(np.float64, (2, 4), elements=unit), arrays(np.float64, (2, 4), elements=st.floats(0.01, 0.99)))
def test_bce_minimized_at_target(t, p):
    assert bce(t, p)[0] >= bce(t, np.clip(t, PROB_EPS, 1 - PROB_EPS))[0] - 1e-9
    assert bce(t, p)[0] >= 0


# ---------------------------------------------------------------- KL

def test_kl_hand_values():
    assert gaussian_kl(np.zeros((1, 3)), np.zeros((1, 3)))[0] == 0.0
    assert gaussian_kl([[1.0]], [[0.0]])[0] == pytest.approx(0.5)
    assert gaussian_kl([[0.0]], [[1.0]])[0] == pytest.approx(0.5 * (math.e - 2), abs=1e-12)


def test_kl_rejects_non_finite():
    with pytest.raises(FloatingPointError):
        gaussian_kl([[0.0]], [[np.inf]])


@settings(max_examples=50)
@given(arrays(np.float64, (3, 2), elements=st.floats(-5, 5)),
       arrays(np.float64, (3, 2), elements=st.floats(-5, 5)))
def test_kl_non_negative(mu, lv):
    assert gaussian_kl(mu, lv)[0] >= 0


# ---------------------------------------------------------------- NegDICE

def test_dice_identities():
    a = np.array([[1.0, 0.0, 1.0, 1.0]])
    assert neg_dice(a, a)[0] == -1.0
    assert neg_dice([[1.0, 0.0]], [[0.0, 1.0]])[0] == 0.0
    assert neg_dice([[1.0, 1.0, 0.0, 0.0]], [[1.0, 0.0, 1.0, 0.0]])[0] == -0.5


def test_dice_empty_rows_warn_and_count_zero():
    with pytest.warns(RuntimeWarning, match="empty support"):
        value, grad = neg_dice([[0.0, 0.0], [1.0, 0.0]], [[0.0, 0.0], [1.0, 0.0]])
    assert value == -0.5  # (0 + -1) / 2
    assert not grad[0].any()


@settings(max_examples=100)
@given(arrays(np.float64, (2, 5), elements=unit), arrays(np.float64, (2, 5), elements=unit))
def test_dice_range_and_symmetry(a, b):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        d_ab, _ = neg_dice(a, b)
        d_ba, _ = neg_dice(b, a)
    assert -1.0 - 1e-12 <= d_ab <= 0.0
    assert d_ab == pytest.approx(d_ba, abs=1e-12)


# ---------------------------------------------------------------- composites

def test_ratio_loss_examples():
    X = np.array([[0.2, 0.8]])
    Xc = np.clip(X, PROB_EPS, 1 - PROB_EPS)
    w = LossWeights()
    # X~ = X is the BCE minimum; with zero KL only the entropy of X remains
    base = ratio_vae_loss(X, Xc, np.zeros((1, 2)), np.zeros((1, 2)), w).total
    assert base == pytest.approx(w.lambda_r * bce(X, Xc)[0])
    one = ratio_vae_loss([[1.0]], [[0.5]], [[1.0]], [[0.0]], LossWeights(lambda_r=1.0)).total
    assert one == pytest.approx(math.log(2) + 0.5, abs=1e-12)
    ten = ratio_vae_loss([[1.0]], [[0.5]], [[0.0]], [[0.0]], LossWeights(lambda_r=10.0))
    assert ten.total == pytest.approx(10 * math.log(2))


def test_ratio_loss_binary_perfect_is_zero():
    X = np.array([[1.0, 0.0]])
    out = ratio_vae_loss(X, np.clip(X, PROB_EPS, 1 - PROB_EPS), np.zeros((1, 2)), np.zeros((1, 2)),
                         LossWeights())
    assert abs(out.total) < 1e-5


def test_mask_loss_examples():
    M = np.array([[1.0, 0.0, 1.0, 0.0, 1.0]])
    Mc = np.clip(M, PROB_EPS, 1 - PROB_EPS)
    z = np.zeros((1, 3))
    out = mask_vae_loss(M, Mc, z, z, LossWeights(gamma=5.0))
    assert out.total == pytest.approx(-5.0, abs=1e-5)
    p = np.full((1, 5), 0.3)
    mu, lv = np.full((1, 3), 0.2), np.full((1, 3), -0.1)
    no_dice = mask_vae_loss(M, p, mu, lv, LossWeights(gamma=0.0, lambda_m=1.0))
    assert no_dice.total == vae_loss(M, p, mu, lv).total


def test_bvae_loss_examples():
    assert bvae_loss(-5.0, 1.2, LossWeights(beta=0.0)) == 1.2
    assert bvae_loss(-5.0, 1.2, LossWeights(beta=10.0)) == pytest.approx(-48.8)
    with pytest.raises(FloatingPointError):
        bvae_loss(np.nan, 1.0, LossWeights())


@given(st.floats(-100, 100), st.floats(-100, 100), st.floats(0, 20))
def test_bvae_loss_linear(a, b, beta):
    assert bvae_loss(a, b, LossWeights(beta=beta)) == pytest.approx(beta * a + b, rel=1e-12, abs=1e-12)


# ---------------------------------------------------------------- gradients

def _check_grad(f, arr, analytic, rng, probes=20, tol=1e-4):
    worst = 0.0
    for idx in sample_indices(rng, arr.shape, probes):
        num = central_difference(f, arr, idx)
        worst = max(worst, rel_err(num, analytic[idx]))
    assert worst <= tol, worst


@pytest.fixture
def batch(rng):
    n, p, k = 6, 99, 32
    X = rng.dirichlet(np.ones(p), size=n) * (rng.random((n, p)) < 0.3)
    M = (X > 0).astype(float)
    return dict(X=X, M=M, Xt=rng.uniform(0.05, 0.95, (n, p)), Mt=rng.uniform(0.05, 0.95, (n, p)),
                mu=rng.normal(size=(n, k)), lv=rng.normal(scale=0.5, size=(n, k)))


def test_bce_gradient(batch, rng):
    _, g = bce(batch["X"], batch["Xt"])
    _check_grad(lambda: bce(batch["X"], batch["Xt"])[0], batch["Xt"], g, rng)


def test_kl_gradients(batch, rng):
    _, gmu, glv = gaussian_kl(batch["mu"], batch["lv"])
    _check_grad(lambda: gaussian_kl(batch["mu"], batch["lv"])[0], batch["mu"], gmu, rng)
    _check_grad(lambda: gaussian_kl(batch["mu"], batch["lv"])[0], batch["lv"], glv, rng)


def test_dice_gradient(batch, rng):
    _, g = neg_dice(batch["M"], batch["Mt"])
    _check_grad(lambda: neg_dice(batch["M"], batch["Mt"])[0], batch["Mt"], g, rng)


def test_composite_gradients(batch, rng):
    w = LossWeights()
    b = batch
    r = ratio_vae_loss(b["X"], b["Xt"], b["mu"], b["lv"], w)
    _check_grad(lambda: ratio_vae_loss(b["X"], b["Xt"], b["mu"], b["lv"], w).total,
                b["Xt"], r.d_recon, rng)
    m = mask_vae_loss(b["M"], b["Mt"], b["mu"], b["lv"], w)
    for arr, g in ((b["Mt"], m.d_recon), (b["mu"], m.d_mu), (b["lv"], m.d_log_var)):
        _check_grad(lambda: mask_vae_loss(b["M"], b["Mt"], b["mu"], b["lv"], w).total, arr, g, rng)
