"""Training objectives and their gradients.

Every term sums over features and averages over batch rows, so the
weights in :class:`LossWeights` keep the same meaning at any batch size.
Functions return the scalar together with the gradients needed by the
training loops.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from .nn import PROB_EPS, ShapeError


@dataclass(frozen=True)
class LossWeights:
    lambda_r: float = 10.0
    lambda_m: float = 1.0
    gamma: float = 5.0
    beta: float = 10.0

    def __post_init__(self):
        for name, v in asdict(self).items():
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"loss weight {name} must be finite and >= 0, got {v}")

    def to_dict(self) -> dict:
        return asdict(self)


def _same_shape(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shapes {a.shape} and {b.shape} differ")


def _rows(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    return a[None, :] if a.ndim == 1 else a


def bce(target, prediction) -> tuple[float, np.ndarray]:
    """Binary cross-entropy of ``prediction`` against ``target``.

    Predictions are clamped to ``[PROB_EPS, 1 - PROB_EPS]``; clamped
    entries get zero gradient.
    """
    t, p = _rows(target), _rows(prediction)
    _same_shape(t, p, "bce")
    n = t.shape[0]
    pc = np.clip(p, PROB_EPS, 1.0 - PROB_EPS)
    value = -np.sum(t * np.log(pc) + (1.0 - t) * np.log1p(-pc)) / n
    grad = -(t / pc - (1.0 - t) / (1.0 - pc)) / n
    grad[(p < PROB_EPS) | (p > 1.0 - PROB_EPS)] = 0.0
    return float(value), grad


def gaussian_kl(mu, log_var) -> tuple[float, np.ndarray, np.ndarray]:
    """KL(N(mu, exp(log_var)) || N(0, I)), batch-averaged."""
    mu, log_var = _rows(mu), _rows(log_var)
    _same_shape(mu, log_var, "gaussian_kl")
    if not np.all(np.isfinite(log_var)):
        raise FloatingPointError("gaussian_kl: non-finite log-variance")
    n = mu.shape[0]
    var = np.exp(log_var)
    value = -0.5 * np.sum(1.0 + log_var - mu * mu - var) / n
    return float(value), mu / n, 0.5 * (var - 1.0) / n


def neg_dice(a, b) -> tuple[float, np.ndarray]:
    """Row-averaged -2 a.b / (|a|_1 + |b|_1); gradient is w.r.t. ``b``.

    Rows where both vectors are all-zero contribute 0 and trigger a warning.
    """
    a, b = _rows(a), _rows(b)
    _same_shape(a, b, "neg_dice")
    n = a.shape[0]
    overlap = np.sum(a * b, axis=1)
    denom = np.sum(a, axis=1) + np.sum(b, axis=1)
    empty = denom == 0
    if np.any(empty):
        warnings.warn(f"neg_dice: {int(empty.sum())} row(s) with empty support on both sides",
                      RuntimeWarning, stacklevel=2)
    safe = np.where(empty, 1.0, denom)
    per_row = np.where(empty, 0.0, -2.0 * overlap / safe)
    grad = -2.0 * (a * safe[:, None] - overlap[:, None]) / (safe ** 2)[:, None] / n
    grad[empty] = 0.0
    return float(per_row.sum() / n), grad


@dataclass
class VaeLoss:
    """A composite VAE objective plus gradients w.r.t. its differentiable inputs."""

    total: float
    recon: float
    kl: float
    dice: float
    d_recon: np.ndarray
    d_mu: np.ndarray
    d_log_var: np.ndarray


def vae_loss(X, X_tilde, mu, log_var, recon_weight: float = 1.0) -> VaeLoss:
    r, dr = bce(X, X_tilde)
    k, dmu, dlv = gaussian_kl(mu, log_var)
    return VaeLoss(recon_weight * r + k, r, k, 0.0, recon_weight * dr, dmu, dlv)


def ratio_vae_loss(X, X_tilde, mu, log_var, w: LossWeights) -> VaeLoss:
    """lambda_R * BCE(X, X~) + KL."""
    return vae_loss(X, X_tilde, mu, log_var, w.lambda_r)


def mask_vae_loss(M, M_tilde, mu, log_var, w: LossWeights) -> VaeLoss:
    """lambda_M * BCE(M, M~) + KL + gamma * NegDICE(M, M~)."""
    out = vae_loss(M, M_tilde, mu, log_var, w.lambda_m)
    d, dd = neg_dice(M, M_tilde)
    out.total += w.gamma * d
    out.dice = d
    out.d_recon = out.d_recon + w.gamma * dd
    return out


def bvae_loss(mask_loss: float, ratio_loss: float, w: LossWeights) -> float:
    if not (math.isfinite(mask_loss) and math.isfinite(ratio_loss)):
        raise FloatingPointError("bvae_loss: non-finite component loss")
    return w.beta * mask_loss + ratio_loss
