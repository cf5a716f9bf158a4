"""Evaluation of generated compounds.

* FID*: Frechet distance between Gaussians fitted to real and generated
  rows, in the penultimate-layer embedding of a property predictor.
* KL score: histogram KL divergence between the predicted properties of
  generated rows and the real property distribution, averaged over
  properties.
* ERA: percentage of generated rows satisfying every expert rule.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint
from .data import CompoundDataset, RuleSet
from .nn import (AdamState, NetworkParams, NetworkSpec, NonFiniteError, ShapeError, adam_step,
                 init_params, mlp, mlp_backward, mlp_forward)

KL_BINS = 50
KL_SMOOTHING = 1e-8


# ---------------------------------------------------------------- predictor

@dataclass
class PredictorConfig:
    hidden: tuple = (256, 256, 64)
    epochs: int = 60
    batch_size: int = 128
    lr: float = 1e-3
    val_fraction: float = 0.1
    seed: int = 0


@dataclass
class PropertyPredictor:
    spec: NetworkSpec
    params: NetworkParams
    embed_layer: int
    y_mean: np.ndarray
    y_std: np.ndarray
    record: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.spec.layers[self.embed_layer].out_dim < 2:
            raise ValueError("embedding layer must have at least 2 units")

    def _forward(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.spec.input_dim:
            raise ShapeError(f"predictor expects {self.spec.input_dim} columns, got {X.shape}")
        return mlp_forward(self.spec, self.params, X)

    def predict(self, X) -> np.ndarray:
        out, _ = self._forward(X)
        return out * self.y_std + self.y_mean

    def embed(self, X) -> np.ndarray:
        _, tape = self._forward(X)
        return tape.outputs[self.embed_layer]

    def save(self, path) -> None:
        arrays = {**self.params.named(), "y_mean": self.y_mean, "y_std": self.y_std}
        meta = {"kind": "predictor", "spec": self.spec.to_dict(), "embed_layer": self.embed_layer,
                "record": self.record}
        checkpoint.save_arrays(path, arrays, meta)

    @classmethod
    def load(cls, path) -> "PropertyPredictor":
        arrays, meta = checkpoint.load_arrays(path)
        spec = NetworkSpec.from_dict(meta["spec"])
        params = NetworkParams.from_named(arrays, len(spec.layers))
        params.check(spec)
        return cls(spec, params, meta["embed_layer"], arrays["y_mean"], arrays["y_std"],
                   meta["record"])


def train_predictor(dataset: CompoundDataset,
                    config: PredictorConfig = PredictorConfig()) -> PropertyPredictor:
    """Fit an MLP from ratios to standardized properties with squared error."""
    if dataset.properties is None:
        raise ValueError("dataset has no property columns")
    X, Y = dataset.X, dataset.properties
    rng = np.random.default_rng(config.seed)
    order = rng.permutation(len(X))
    n_val = max(1, int(round(config.val_fraction * len(X))))
    val, tr = order[:n_val], order[n_val:]
    y_mean, y_std = Y[tr].mean(axis=0), Y[tr].std(axis=0)
    y_std = np.where(y_std > 0, y_std, 1.0)
    Yn = (Y - y_mean) / y_std

    spec = mlp(X.shape[1], list(config.hidden), "relu", Y.shape[1], "linear")
    params = init_params(spec, rng)
    opt = AdamState.for_params(params)
    for _ in range(config.epochs):
        perm = rng.permutation(tr)
        for s in range(0, len(perm), config.batch_size):
            idx = perm[s:s + config.batch_size]
            out, tape = mlp_forward(spec, params, X[idx])
            resid = out - Yn[idx]
            loss = np.sum(resid ** 2) / len(idx)
            if not np.isfinite(loss):
                raise NonFiniteError("property predictor training diverged")
            grads, _ = mlp_backward(tape, 2.0 * resid / len(idx))
            adam_step(params, grads, opt, config.lr)

    pred = PropertyPredictor(spec, params, len(spec.layers) - 2, y_mean, y_std)
    val_mse = np.mean((pred.predict(X[val]) - Y[val]) ** 2, axis=0)
    pred.record = {"epochs": config.epochs, "seed": config.seed,
                   "val_mse": val_mse.tolist(),
                   "val_rel_mse": (val_mse / Y[val].var(axis=0)).tolist()}
    return pred


# ---------------------------------------------------------------- FID*

def matrix_sqrt_psd(A, sym_tol: float = 1e-8) -> np.ndarray:
    """Symmetric PSD square root through an eigendecomposition.

    Eigenvalues below zero (round-off) are clamped to 0.
    """
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ShapeError(f"expected a square matrix, got {A.shape}")
    scale = 1.0 + np.abs(A).max(initial=0.0)
    if np.abs(A - A.T).max(initial=0.0) > sym_tol * scale:
        raise ValueError("matrix_sqrt_psd: input is not symmetric")
    vals, vecs = np.linalg.eigh(0.5 * (A + A.T))
    root = np.sqrt(np.clip(vals, 0.0, None))
    S = (vecs * root) @ vecs.T
    return 0.5 * (S + S.T)


@dataclass
class MomentSummary:
    mu: np.ndarray
    sigma: np.ndarray
    sqrt_sigma: np.ndarray | None = None

    @classmethod
    def of(cls, emb) -> "MomentSummary":
        emb = np.asarray(emb, dtype=np.float64)
        if emb.ndim != 2 or emb.shape[0] < 2:
            raise ValueError("moments need at least 2 rows")
        return cls(emb.mean(axis=0), np.atleast_2d(np.cov(emb, rowvar=False)))

    def root(self) -> np.ndarray:
        if self.sqrt_sigma is None:
            self.sqrt_sigma = matrix_sqrt_psd(self.sigma)
        return self.sqrt_sigma


def frechet_distance(a: MomentSummary, b: MomentSummary) -> float:
    if a.mu.shape != b.mu.shape:
        raise ShapeError("embedding dimensions differ")
    diff = a.mu - b.mu
    ra = a.root()
    cross = matrix_sqrt_psd(ra @ b.sigma @ ra, sym_tol=1e-6)
    d = diff @ diff + np.trace(a.sigma) + np.trace(b.sigma) - 2.0 * np.trace(cross)
    return float(max(d, 0.0))


def fid_star(real_emb, gen_emb) -> float:
    return frechet_distance(MomentSummary.of(real_emb), MomentSummary.of(gen_emb))


# ---------------------------------------------------------------- KL score

def _histogram(values: np.ndarray, lo: float, hi: float) -> np.ndarray:
    if hi <= lo:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, KL_BINS + 1)
    counts, _ = np.histogram(np.clip(values, lo, hi), bins=edges)
    counts = counts + KL_SMOOTHING
    return counts / counts.sum()


def kl_score(real_props, gen_props) -> float:
    """Mean over properties of KL(generated || real) on real-range histograms."""
    real_props, gen_props = np.atleast_2d(real_props), np.atleast_2d(gen_props)
    if len(real_props) == 0 or len(gen_props) == 0:
        raise ValueError("kl_score needs non-empty inputs")
    if real_props.shape[1] != gen_props.shape[1]:
        raise ShapeError("property counts differ")
    kls = []
    for j in range(real_props.shape[1]):
        lo, hi = real_props[:, j].min(), real_props[:, j].max()
        p_real = _histogram(real_props[:, j], lo, hi)
        p_gen = _histogram(gen_props[:, j], lo, hi)
        kls.append(np.sum(p_gen * np.log(p_gen / p_real)))
    return float(np.mean(kls))


# ---------------------------------------------------------------- ERA

def era(generations, rules: RuleSet) -> float:
    generations = np.atleast_2d(generations)
    if len(generations) == 0:
        raise ValueError("era needs at least one row")
    return float(100.0 * rules.pass_mask(generations).mean())


# ---------------------------------------------------------------- pipelines

class Evaluator:
    """Scores generations against a fixed real dataset with a frozen predictor."""

    def __init__(self, real_X, real_props, predictor: PropertyPredictor, rules: RuleSet):
        self.real_X = np.asarray(real_X, dtype=np.float64)
        self.real_props = np.asarray(real_props, dtype=np.float64)
        self.predictor = predictor
        self.rules = rules
        self.real_moments = MomentSummary.of(predictor.embed(self.real_X))

    def score(self, G) -> dict:
        G = np.asarray(G, dtype=np.float64)
        _, tape = self.predictor._forward(G)
        emb = tape.outputs[self.predictor.embed_layer]
        props = tape.outputs[-1] * self.predictor.y_std + self.predictor.y_mean
        return {"fid_star": frechet_distance(self.real_moments, MomentSummary.of(emb)),
                "kl_score": kl_score(self.real_props, props),
                "era": era(G, self.rules)}


def gaussian_noise_rows(n: int, p: int, seed: int) -> np.ndarray:
    """Standard Gaussian rows clamped onto the ratio domain [0, 1]."""
    return np.clip(np.random.default_rng(seed).standard_normal((n, p)), 0.0, 1.0)


def reference_scores(dataset: CompoundDataset, predictor: PropertyPredictor, rules: RuleSet,
                     seed: int) -> dict:
    """Metric reference points: two real halves ('test') and real vs noise ('noise')."""
    X, Y = dataset.X, dataset.properties
    if len(X) < 4:
        raise ValueError("need at least 4 rows to split into halves")
    order = np.random.default_rng(seed).permutation(len(X))
    a, b = order[:len(X) // 2], order[len(X) // 2:]
    test = Evaluator(X[a], Y[a], predictor, rules).score(X[b])
    noise = Evaluator(X, Y, predictor, rules).score(gaussian_noise_rows(len(X), X.shape[1], seed))
    return {"test": test, "noise": noise, "real_pass_rate": era(X, rules)}


# ---------------------------------------------------------------- heatmaps

def heatmap_pixels(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if np.any(X < 0):
        raise ValueError("heatmap input must be non-negative")
    nz = X[X > 0]
    if nz.size == 0:
        return np.zeros(X.shape, dtype=np.uint8)
    q99 = np.quantile(nz, 0.99)
    return np.round(255.0 * np.minimum(1.0, X / q99)).astype(np.uint8)


def render_heatmap(X, path) -> None:
    """Binary PGM: one pixel per entry, zeros black, rows are compounds."""
    pix = heatmap_pixels(X)
    h, w = pix.shape
    with open(Path(path), "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode())
        f.write(pix.tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        tokens.append(data[pos:end])
        pos = end
    pos += 1  # exactly one whitespace byte precedes the raster
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise ValueError(f"{path}: unsupported maxval {maxval}")
    return np.frombuffer(data[pos:pos + w * h], dtype=np.uint8).reshape(h, w)
