import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from bindedvae.data import Rule, RuleSet, SynthConfig, binarize, default_rules, synth_dataset
from bindedvae.metrics import (KL_BINS, Evaluator, PredictorConfig, PropertyPredictor,
                               era, fid_star, frechet_distance, gaussian_noise_rows,
                               heatmap_pixels, kl_score, matrix_sqrt_psd, read_pgm,
                               reference_scores, render_heatmap, train_predictor,
                               MomentSummary)
from bindedvae.nn import ShapeError


# ---------------------------------------------------------------- matrix square root

def test_sqrt_examples():
    np.testing.assert_allclose(matrix_sqrt_psd(np.eye(3)), np.eye(3), atol=1e-14)
    np.testing.assert_allclose(matrix_sqrt_psd(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]),
                               atol=1e-14)


@pytest.mark.parametrize("dim", [1, 2, 5, 17, 64])
def test_sqrt_reconstructs_random_psd(dim):
    rng = np.random.default_rng(dim)
    for rank in (dim, max(1, dim // 2)):
        B = rng.normal(size=(dim, rank))
        A = B @ B.T
        S = matrix_sqrt_psd(A)
        np.testing.assert_array_equal(S, S.T)
        assert np.linalg.norm(S @ S - A) <= 1e-8 * (1 + np.linalg.norm(A))
        assert np.linalg.eigvalsh(S).min() >= -1e-10


def test_sqrt_rejects_asymmetric():
    with pytest.raises(ValueError, match="symmetric"):
        matrix_sqrt_psd(np.array([[1.0, 0.5], [0.0, 1.0]]))
    with pytest.raises(ShapeError):
        matrix_sqrt_psd(np.ones((2, 3)))


# ---------------------------------------------------------------- FID*

def test_fid_one_dimensional_exact_moments():
    a = MomentSummary(np.array([0.0]), np.array([[1.0]]))
    b = MomentSummary(np.array([1.0]), np.array([[1.0]]))
    assert frechet_distance(a, b) == pytest.approx(1.0, abs=1e-12)


def test_fid_matches_closed_form_on_diagonal_gaussians():
    rng = np.random.default_rng(0)
    mu, nu = np.array([0.0, 1.0, -1.0, 0.5]), np.array([1.0, 0.0, 0.0, 0.5])
    sd, td = np.array([1.0, 2.0, 0.5, 1.0]), np.array([2.0, 1.0, 0.5, 3.0])
    A = mu + sd * rng.standard_normal((10_000, 4))
    B = nu + td * rng.standard_normal((10_000, 4))
    exact = np.sum((mu - nu) ** 2) + np.sum((sd - td) ** 2)
    assert fid_star(A, B) == pytest.approx(exact, rel=0.05)


def test_fid_identical_sets_and_symmetry():
    rng = np.random.default_rng(1)
    A = rng.normal(size=(500, 64))
    B = rng.normal(loc=0.3, size=(400, 64)) @ rng.normal(scale=0.3, size=(64, 64))
    assert fid_star(A, A) <= 1e-8
    assert abs(fid_star(A, B) - fid_star(B, A)) <= 1e-8 * (1 + fid_star(A, B))
    assert fid_star(A, B) > 0


def test_fid_needs_two_rows():
    with pytest.raises(ValueError):
        fid_star(np.zeros((1, 3)), np.zeros((5, 3)))


# ---------------------------------------------------------------- KL score

def test_kl_one_bin_against_uniform_is_log_bins():
    real = np.tile((np.arange(KL_BINS) + 0.5) / KL_BINS, (3, 1)).T
    gen = np.full((40, 3), 0.5 / KL_BINS)
    assert kl_score(real, gen) == pytest.approx(math.log(KL_BINS), abs=1e-5)


def test_kl_same_distribution_is_small():
    rng = np.random.default_rng(2)
    real = rng.normal(size=(10_000, 3))
    assert kl_score(real, real) <= 1e-6
    assert kl_score(real, rng.normal(size=(10_000, 3))) < 0.02


def test_kl_clips_out_of_range_values_into_end_bins():
    real = np.linspace(0, 1, 100)[:, None]
    assert kl_score(real, np.full((10, 1), 5.0)) == pytest.approx(kl_score(real, np.ones((10, 1))))


def test_kl_rejects_empty():
    with pytest.raises(ValueError):
        kl_score(np.zeros((0, 3)), np.zeros((5, 3)))


@settings(max_examples=30)
@given(arrays(np.float64, (20, 3), elements=st.floats(-5, 5)),
       arrays(np.float64, (15, 3), elements=st.floats(-5, 5)))
def test_kl_non_negative(a, b):
    assert kl_score(a, b) >= -1e-12


# ---------------------------------------------------------------- ERA

def _rules():
    return RuleSet([Rule("s", "sum", (0, 1), 0.2, 0.8), Rule("c", "count", (0, 1, 2), 1, 2)], 3)


def test_era_examples():
    X = np.array([[0.3, 0.0, 0.7], [0.0, 0.0, 1.0], [0.5, 0.5, 0.0]])
    assert era(X, _rules()) == pytest.approx(100 / 3)
    assert era(X[[0, 0]], _rules()) == 100.0
    assert era(X[1:], _rules()) == 0.0


@given(arrays(np.float64, (8, 3), elements=st.floats(0, 1)), st.randoms())
def test_era_is_mean_of_row_indicators_and_permutation_invariant(X, rnd):
    rules = _rules()
    perm = list(range(8))
    rnd.shuffle(perm)
    assert era(X, rules) == pytest.approx(100 * np.mean([rules.pass_mask(r[None])[0] for r in X]))
    assert era(X[perm], rules) == pytest.approx(era(X, rules))


# ---------------------------------------------------------------- predictor and references

@pytest.fixture(scope="module")
def default_data():
    return synth_dataset(SynthConfig())


@pytest.fixture(scope="module")
def predictor(default_data):
    return train_predictor(default_data, PredictorConfig())


def test_predictor_validation_error_below_ten_percent(predictor):
    assert max(predictor.record["val_rel_mse"]) <= 0.10


def test_predictor_embedding(predictor, default_data):
    X = default_data.X[:5]
    E = predictor.embed(np.vstack([X, X]))
    assert E.shape == (10, 64)
    np.testing.assert_array_equal(E[:5], E[5:])


def test_predictor_same_seed_identical():
    ds = synth_dataset(SynthConfig(n=300, seed=2))
    cfg = PredictorConfig(epochs=2)
    a, b = train_predictor(ds, cfg), train_predictor(ds, cfg)
    assert all(np.array_equal(x, y) for x, y in zip(a.params.arrays(), b.params.arrays()))


def test_predictor_save_load(predictor, default_data, tmp_path):
    predictor.save(tmp_path / "p.ckpt")
    back = PropertyPredictor.load(tmp_path / "p.ckpt")
    X = default_data.X[:50]
    assert back.predict(X).tobytes() == predictor.predict(X).tobytes()
    assert back.record == predictor.record


def test_reference_scores_ordering(predictor, default_data):
    rules = default_rules(default_data.groups, default_data.p)
    refs = reference_scores(default_data, predictor, rules, seed=0)
    assert refs["test"]["fid_star"] < refs["noise"]["fid_star"]
    assert refs["test"]["kl_score"] < 0.2 < refs["noise"]["kl_score"]
    assert refs["noise"]["era"] == 0.0
    assert refs["test"]["era"] >= 99.0


def test_scores_are_deterministic(predictor, default_data):
    rules = default_rules(default_data.groups, default_data.p)
    ev = Evaluator(default_data.X, default_data.properties, predictor, rules)
    G = gaussian_noise_rows(200, 99, seed=3)
    assert ev.score(G) == ev.score(G)


# ---------------------------------------------------------------- heatmaps

def test_all_zero_heatmap_is_black(tmp_path):
    render_heatmap(np.zeros((7, 5)), tmp_path / "z.pgm")
    img = read_pgm(tmp_path / "z.pgm")
    assert img.shape == (7, 5) and not img.any()


def test_mask_heatmap_is_two_tone(default_data, tmp_path):
    M = binarize(default_data.X[:200])
    render_heatmap(M, tmp_path / "m.pgm")
    img = read_pgm(tmp_path / "m.pgm")
    assert set(np.unique(img)) == {0, 255}
    np.testing.assert_array_equal(img == 255, M == 1)


def test_heatmap_intensity_scale():
    X = np.zeros((1, 101))
    X[0, 1:] = np.arange(1, 101) / 100
    pix = heatmap_pixels(X)
    assert pix[0, 0] == 0 and pix[0, -1] == 255
    q99 = np.quantile(X[X > 0], 0.99)
    assert pix[0, 50] == round(255 * 0.5 / q99)


def test_heatmap_file_layout(tmp_path):
    render_heatmap(np.full((3, 4), 0.5), tmp_path / "h.pgm")
    raw = (tmp_path / "h.pgm").read_bytes()
    assert raw.startswith(b"P5\n4 3\n255\n") and len(raw) == len(b"P5\n4 3\n255\n") + 12


def test_heatmap_rejects_negative():
    with pytest.raises(ValueError):
        heatmap_pixels(-np.ones((2, 2)))
