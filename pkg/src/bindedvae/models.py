"""Generative models: Vanilla VAE, Binded-VAE, Unbinded-VAE and GAN.

All four share one training interface (:meth:`train_epoch`), one sampling
interface (:meth:`generate`) and one persistence format (see
:func:`save_model` / :func:`load_model`).

The Binded-VAE chains a Mask-VAE, which reconstructs the binary support of
a compound, with a conditional Ratio-VAE that receives the data and the soft
reconstructed mask.  Its output is ``mask * ratios`` and the joint loss is
back-propagated through the mask into the Mask-VAE.  The Unbinded-VAE uses
the same two networks but trains them one after the other, with the mask
frozen while the ratios are learned.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint
from .data import binarize, truncate_decimals
from .losses import LossWeights, bce, bvae_loss, mask_vae_loss, ratio_vae_loss, vae_loss
from .nn import (AdamState, NetworkParams, NetworkSpec, NonFiniteError, Tape, adam_step,
                 init_params, mlp, mlp_apply, mlp_backward, mlp_forward, reparameterize,
                 split_moments)

FAMILIES = ("vanilla", "bvae", "unbinded", "gan")
DEFAULT_LRS = {
    "vanilla": {"vae": 1e-3},
    "bvae": {"mask": 1e-3, "ratio": 1e-2},
    "unbinded": {"mask": 1e-3, "ratio": 1e-2},
    "gan": {"generator": 1e-3, "discriminator": 1e-3},
}
LATENT = {"vanilla": 128, "mask": 64, "ratio": 32, "gan": 1024}
LEAKY_SLOPE = 0.2


class UntrainedModelError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 128
    lr: dict = field(default_factory=dict)
    seed: int = 0
    bernoulli_mask: bool = False  # sample generated masks instead of thresholding at 0.5

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def lrs(self, family: str) -> dict:
        return {**DEFAULT_LRS[family], **self.lr}


# ---------------------------------------------------------------- VAE block

def big_vae_specs(p: int, latent: int) -> tuple[NetworkSpec, NetworkSpec]:
    """Vanilla VAE / Mask-VAE layout: 512-1024-256 on both sides."""
    enc = mlp(p, [512, 1024, 256], "relu", 2 * latent, "linear")
    dec = mlp(latent, [512, 1024, 256], "relu", p, "sigmoid")
    return enc, dec


def ratio_vae_specs(p: int, latent: int) -> tuple[NetworkSpec, NetworkSpec]:
    """Conditional Ratio-VAE: the mask is appended to encoder and decoder inputs."""
    enc = mlp(2 * p, [256, 256], "relu", 2 * latent, "linear")
    dec = mlp(latent + p, [256, 256], "relu", p, "sigmoid")
    return enc, dec


def gan_specs(p: int, noise_dim: int) -> tuple[NetworkSpec, NetworkSpec]:
    gen = mlp(noise_dim, [512, 1024, 256], "leaky_relu", p, "linear", slope=LEAKY_SLOPE)
    disc = mlp(p, [512, 1024, 256], "leaky_relu", 1, "sigmoid", slope=LEAKY_SLOPE)
    return gen, disc


@dataclass
class VaePass:
    mu: np.ndarray
    log_var: np.ndarray
    noise: np.ndarray
    z: np.ndarray
    recon: np.ndarray
    enc_tape: Tape
    dec_tape: Tape


class VAE:
    """Encoder/decoder pair with its own Adam state; optionally conditional."""

    def __init__(self, encoder: NetworkSpec, decoder: NetworkSpec, lr: float,
                 rng: np.random.Generator | None = None, cond_dim: int = 0):
        self.encoder, self.decoder = encoder, decoder
        self.latent_dim = encoder.output_dim // 2
        self.cond_dim = cond_dim
        if encoder.output_dim != 2 * self.latent_dim:
            raise ValueError("encoder output must be 2 x latent_dim")
        if decoder.input_dim != self.latent_dim + cond_dim:
            raise ValueError("decoder input must be latent_dim + cond_dim")
        self.lr = lr
        if rng is not None:
            self.enc = init_params(encoder, rng)
            self.dec = init_params(decoder, rng)
            self.enc_opt = AdamState.for_params(self.enc)
            self.dec_opt = AdamState.for_params(self.dec)

    @property
    def data_dim(self) -> int:
        return self.encoder.input_dim - self.cond_dim

    def forward(self, x, cond, noise) -> VaePass:
        enc_in = x if self.cond_dim == 0 else np.hstack([x, cond])
        h, enc_tape = mlp_forward(self.encoder, self.enc, enc_in)
        mu, log_var = split_moments(h)
        z = reparameterize(mu, log_var, noise)
        dec_in = z if self.cond_dim == 0 else np.hstack([z, cond])
        recon, dec_tape = mlp_forward(self.decoder, self.dec, dec_in)
        return VaePass(mu, log_var, noise, z, recon, enc_tape, dec_tape)

    def backward(self, fp: VaePass, d_recon, d_mu, d_log_var):
        """Returns (encoder grads, decoder grads, d_cond)."""
        dec_grads, g = mlp_backward(fp.dec_tape, d_recon)
        dz = g[:, :self.latent_dim]
        d_cond = g[:, self.latent_dim:] if self.cond_dim else None
        d_mu = d_mu + dz
        d_log_var = d_log_var + dz * 0.5 * np.exp(0.5 * fp.log_var) * fp.noise
        enc_grads, g = mlp_backward(fp.enc_tape, np.hstack([d_mu, d_log_var]))
        if self.cond_dim:
            d_cond = d_cond + g[:, self.data_dim:]
        return enc_grads, dec_grads, d_cond

    def step(self, enc_grads: NetworkParams, dec_grads: NetworkParams) -> None:
        adam_step(self.enc, enc_grads, self.enc_opt, self.lr)
        adam_step(self.dec, dec_grads, self.dec_opt, self.lr)

    def decode(self, z, cond=None) -> np.ndarray:
        dec_in = z if self.cond_dim == 0 else np.hstack([z, cond])
        return mlp_apply(self.decoder, self.dec, dec_in)

    def copy(self) -> "VAE":
        other = VAE(self.encoder, self.decoder, self.lr, cond_dim=self.cond_dim)
        other.enc, other.dec = self.enc.copy(), self.dec.copy()
        other.enc_opt, other.dec_opt = self.enc_opt.copy(), self.dec_opt.copy()
        return other

    # persistence
    def state(self) -> tuple[dict, dict]:
        arrays = {}
        arrays.update(self.enc.named("enc."))
        arrays.update(self.dec.named("dec."))
        arrays.update(self.enc_opt.m.named("enc.adam_m."))
        arrays.update(self.enc_opt.v.named("enc.adam_v."))
        arrays.update(self.dec_opt.m.named("dec.adam_m."))
        arrays.update(self.dec_opt.v.named("dec.adam_v."))
        meta = {"kind": "vae", "encoder": self.encoder.to_dict(), "decoder": self.decoder.to_dict(),
                "cond_dim": self.cond_dim, "lr": self.lr,
                "adam_steps": [self.enc_opt.step, self.dec_opt.step]}
        return arrays, meta

    @classmethod
    def from_state(cls, arrays: dict, meta: dict) -> "VAE":
        enc, dec = NetworkSpec.from_dict(meta["encoder"]), NetworkSpec.from_dict(meta["decoder"])
        vae = cls(enc, dec, meta["lr"], cond_dim=meta["cond_dim"])
        ne, nd = len(enc.layers), len(dec.layers)
        vae.enc = NetworkParams.from_named(arrays, ne, "enc.")
        vae.dec = NetworkParams.from_named(arrays, nd, "dec.")
        se, sd = meta["adam_steps"]
        vae.enc_opt = AdamState(NetworkParams.from_named(arrays, ne, "enc.adam_m."),
                                NetworkParams.from_named(arrays, ne, "enc.adam_v."), se)
        vae.dec_opt = AdamState(NetworkParams.from_named(arrays, nd, "dec.adam_m."),
                                NetworkParams.from_named(arrays, nd, "dec.adam_v."), sd)
        vae.enc.check(enc)
        vae.dec.check(dec)
        return vae


def _check_finite(*values) -> None:
    for v in values:
        if not np.isfinite(v):
            raise NonFiniteError(f"non-finite training loss ({v})")


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for s in range(0, n, batch_size):
        yield order[s:s + batch_size]


def _check_unit_interval(X) -> None:
    if X.min() < 0 or X.max() > 1:
        raise ValueError("training data must lie in [0, 1]")


# ---------------------------------------------------------------- families

class GenerativeModel:
    family: str

    epoch: int = 0  # epochs run so far, over all phases

    def report_epoch(self) -> int | None:
        """Epoch index used for metric curves, or None while not reportable."""
        return self.epoch

    def schedule_length(self, epochs: int) -> int:
        return epochs

    def _require_trained(self) -> None:
        if self.report_epoch() in (None, 0):
            raise UntrainedModelError(f"{self.family} model has not been trained")

    def train_fit(self, X, config: TrainConfig, rng: np.random.Generator, on_epoch=None):
        """Run the remaining epochs of the schedule; ``on_epoch(model, losses)`` after each."""
        X = np.asarray(X, dtype=np.float64)
        _check_unit_interval(X)
        M = binarize(X)
        history = []
        while self.epoch < self.schedule_length(config.epochs):
            losses = self.train_epoch(X, M, rng, config.batch_size)
            history.append(losses)
            if on_epoch is not None:
                on_epoch(self, losses)
        return history


class VanillaVAE(GenerativeModel):
    family = "vanilla"

    def __init__(self, p: int = 99, latent: int = LATENT["vanilla"], lr: float = 1e-3,
                 rng: np.random.Generator | None = None, recon_weight: float = 1.0):
        self.p = p
        self.recon_weight = recon_weight
        if rng is not None:
            self.vae = VAE(*big_vae_specs(p, latent), lr, rng)

    def train_step(self, X, noise) -> dict:
        fp = self.vae.forward(X, None, noise)
        L = vae_loss(X, fp.recon, fp.mu, fp.log_var, self.recon_weight)
        _check_finite(L.total)
        ge, gd, _ = self.vae.backward(fp, L.d_recon, L.d_mu, L.d_log_var)
        self.vae.step(ge, gd)
        return {"loss": L.total, "recon": L.recon, "kl": L.kl}

    def train_epoch(self, X, M, rng, batch_size) -> dict:
        acc = []
        for idx in _batches(len(X), batch_size, rng):
            noise = rng.standard_normal((len(idx), self.vae.latent_dim))
            acc.append(self.train_step(X[idx], noise))
        self.epoch += 1
        return _mean_losses(acc)

    def generate(self, count: int, seed: int, bernoulli_mask: bool = False) -> np.ndarray:
        self._require_trained()
        rng = np.random.default_rng(seed)
        z = rng.standard_normal((count, self.vae.latent_dim))
        return truncate_decimals(self.vae.decode(z))

    def reconstruction_bce(self, X, seed: int = 0) -> float:
        rng = np.random.default_rng(seed)
        fp = self.vae.forward(X, None, rng.standard_normal((len(X), self.vae.latent_dim)))
        return bce(X, fp.recon)[0]

    def submodels(self) -> dict:
        return {"vae": self.vae}

    def meta(self) -> dict:
        return {"recon_weight": self.recon_weight, "p": self.p}


@dataclass
class ChainedPass:
    mask: VaePass
    ratio: VaePass
    M_tilde: np.ndarray
    X_tilde: np.ndarray
    mask_loss: object
    ratio_loss: object
    total: float


class _ChainedVAE(GenerativeModel):
    """Shared machinery of the Binded and Unbinded variants."""

    def __init__(self, p: int = 99, mask_latent: int = LATENT["mask"],
                 ratio_latent: int = LATENT["ratio"], lrs: dict | None = None,
                 weights: LossWeights = LossWeights(), rng: np.random.Generator | None = None):
        lrs = {**DEFAULT_LRS["bvae"], **(lrs or {})}
        self.p = p
        self.weights = weights
        if rng is not None:
            self.mask = VAE(*big_vae_specs(p, mask_latent), lrs["mask"], rng)
            self.ratio = VAE(*ratio_vae_specs(p, ratio_latent), lrs["ratio"], rng, cond_dim=p)

    def _ratio_pass(self, X, M_tilde, noise_r):
        fr = self.ratio.forward(X, M_tilde, noise_r)
        X_tilde = M_tilde * fr.recon
        Lr = ratio_vae_loss(X, X_tilde, fr.mu, fr.log_var, self.weights)
        return fr, X_tilde, Lr

    def _ratio_backward(self, fr, M_tilde, Lr):
        """Ratio-VAE grads and the gradient reaching the mask through product and condition."""
        d_R = Lr.d_recon * M_tilde
        ge, gd, d_cond = self.ratio.backward(fr, d_R, Lr.d_mu, Lr.d_log_var)
        d_mask = Lr.d_recon * fr.recon + d_cond
        return ge, gd, d_mask

    def _noise(self, rng, n):
        return (rng.standard_normal((n, self.mask.latent_dim)),
                rng.standard_normal((n, self.ratio.latent_dim)))

    def generate(self, count: int, seed: int, bernoulli_mask: bool = False) -> np.ndarray:
        self._require_trained()
        rng = np.random.default_rng(seed)
        zm = rng.standard_normal((count, self.mask.latent_dim))
        zr = rng.standard_normal((count, self.ratio.latent_dim))
        probs = self.mask.decode(zm)
        if bernoulli_mask:
            mask = (rng.random(probs.shape) < probs).astype(np.float64)
        else:
            mask = (probs > 0.5).astype(np.float64)
        ratios = self.ratio.decode(zr, mask)
        return truncate_decimals(mask * ratios)

    def reconstruction_bce(self, X, seed: int = 0) -> float:
        rng = np.random.default_rng(seed)
        nm, nr = self._noise(rng, len(X))
        out = self.objective(X, binarize(X), nm, nr)
        return bce(X, out.X_tilde)[0]

    def submodels(self) -> dict:
        return {"mask_vae": self.mask, "ratio_vae": self.ratio}

    def meta(self) -> dict:
        return {"weights": self.weights.to_dict(), "p": self.p}


class BindedVAE(_ChainedVAE):
    family = "bvae"

    def objective(self, X, M, noise_m, noise_r) -> ChainedPass:
        fm = self.mask.forward(M, None, noise_m)
        M_tilde = fm.recon
        Lm = mask_vae_loss(M, M_tilde, fm.mu, fm.log_var, self.weights)
        fr, X_tilde, Lr = self._ratio_pass(X, M_tilde, noise_r)
        total = bvae_loss(Lm.total, Lr.total, self.weights)
        return ChainedPass(fm, fr, M_tilde, X_tilde, Lm, Lr, total)

    def gradients(self, out: ChainedPass):
        """(mask enc, mask dec, ratio enc, ratio dec) gradients of the joint loss."""
        beta = self.weights.beta
        Lm = out.mask_loss
        re, rd, d_mask = self._ratio_backward(out.ratio, out.M_tilde, out.ratio_loss)
        me, md, _ = self.mask.backward(out.mask, beta * Lm.d_recon + d_mask,
                                       beta * Lm.d_mu, beta * Lm.d_log_var)
        return me, md, re, rd

    def train_step(self, X, M, noise_m, noise_r) -> dict:
        out = self.objective(X, M, noise_m, noise_r)
        _check_finite(out.total)
        me, md, re, rd = self.gradients(out)
        self.mask.step(me, md)
        self.ratio.step(re, rd)
        return {"loss": out.total, "mask": out.mask_loss.total, "ratio": out.ratio_loss.total}

    def train_epoch(self, X, M, rng, batch_size) -> dict:
        acc = []
        for idx in _batches(len(X), batch_size, rng):
            nm, nr = self._noise(rng, len(idx))
            acc.append(self.train_step(X[idx], M[idx], nm, nr))
        self.epoch += 1
        return _mean_losses(acc)


class UnbindedVAE(_ChainedVAE):
    """Mask-VAE trained first on its own; Ratio-VAE trained afterwards on a frozen mask."""

    family = "unbinded"

    def __init__(self, *args, phase1_epochs: int = 200, **kw):
        super().__init__(*args, **kw)
        self.phase1_epochs = phase1_epochs
        self.frozen_mask: VAE | None = None

    def schedule_length(self, epochs: int) -> int:
        return self.phase1_epochs + epochs

    def report_epoch(self) -> int | None:
        return None if self.epoch <= self.phase1_epochs else self.epoch - self.phase1_epochs

    @property
    def phase(self) -> int:
        return 1 if self.epoch < self.phase1_epochs else 2

    def mask_step(self, M, noise_m) -> dict:
        fm = self.mask.forward(M, None, noise_m)
        Lm = mask_vae_loss(M, fm.recon, fm.mu, fm.log_var, self.weights)
        _check_finite(Lm.total)
        ge, gd, _ = self.mask.backward(fm, Lm.d_recon, Lm.d_mu, Lm.d_log_var)
        self.mask.step(ge, gd)
        return {"loss": Lm.total, "mask": Lm.total}

    def freeze_mask(self) -> None:
        self.frozen_mask = self.mask.copy()

    def objective(self, X, M, noise_m, noise_r) -> ChainedPass:
        """Ratio objective with the mask condition taken from the frozen snapshot."""
        if self.frozen_mask is None:
            raise UntrainedModelError("phase 1 (mask training) has not completed")
        fm = self.frozen_mask.forward(M, None, noise_m)
        M_tilde = fm.recon
        fr, X_tilde, Lr = self._ratio_pass(X, M_tilde, noise_r)
        return ChainedPass(fm, fr, M_tilde, X_tilde, None, Lr, Lr.total)

    def ratio_step(self, X, M, noise_m, noise_r) -> dict:
        out = self.objective(X, M, noise_m, noise_r)
        _check_finite(out.total)
        re, rd, _ = self._ratio_backward(out.ratio, out.M_tilde, out.ratio_loss)
        self.ratio.step(re, rd)
        return {"loss": out.total, "ratio": out.total}

    def train_epoch(self, X, M, rng, batch_size) -> dict:
        acc = []
        phase = self.phase
        for idx in _batches(len(X), batch_size, rng):
            nm, nr = self._noise(rng, len(idx))
            if phase == 1:
                acc.append(self.mask_step(M[idx], nm))
            else:
                acc.append(self.ratio_step(X[idx], M[idx], nm, nr))
        self.epoch += 1
        if self.epoch == self.phase1_epochs:
            self.freeze_mask()
        return _mean_losses(acc)

    def submodels(self) -> dict:
        subs = super().submodels()
        if self.frozen_mask is not None:
            subs["frozen_mask_vae"] = self.frozen_mask
        return subs

    def meta(self) -> dict:
        return {**super().meta(), "phase1_epochs": self.phase1_epochs}


class GAN(GenerativeModel):
    family = "gan"

    def __init__(self, p: int = 99, noise_dim: int = LATENT["gan"], lrs: dict | None = None,
                 rng: np.random.Generator | None = None):
        lrs = {**DEFAULT_LRS["gan"], **(lrs or {})}
        self.p = p
        self.noise_dim = noise_dim
        self.lrs = lrs
        self.gen_spec, self.disc_spec = gan_specs(p, noise_dim)
        if rng is not None:
            self.gen = init_params(self.gen_spec, rng)
            self.disc = init_params(self.disc_spec, rng)
            self.gen_opt = AdamState.for_params(self.gen)
            self.disc_opt = AdamState.for_params(self.disc)

    def discriminator_step(self, real, noise) -> float:
        fake = mlp_apply(self.gen_spec, self.gen, noise)
        d_real, t_real = mlp_forward(self.disc_spec, self.disc, real)
        d_fake, t_fake = mlp_forward(self.disc_spec, self.disc, fake)
        l_real, g_real = bce(np.ones_like(d_real), d_real)
        l_fake, g_fake = bce(np.zeros_like(d_fake), d_fake)
        _check_finite(l_real + l_fake)
        gr, _ = mlp_backward(t_real, g_real)
        gf, _ = mlp_backward(t_fake, g_fake)
        grads = NetworkParams([a + b for a, b in zip(gr.weights, gf.weights)],
                              [a + b for a, b in zip(gr.biases, gf.biases)])
        adam_step(self.disc, grads, self.disc_opt, self.lrs["discriminator"])
        return l_real + l_fake

    def generator_step(self, noise) -> float:
        fake, t_gen = mlp_forward(self.gen_spec, self.gen, noise)
        d_fake, t_disc = mlp_forward(self.disc_spec, self.disc, fake)
        loss, g = bce(np.ones_like(d_fake), d_fake)
        _check_finite(loss)
        _, g_fake = mlp_backward(t_disc, g)
        grads, _ = mlp_backward(t_gen, g_fake)
        adam_step(self.gen, grads, self.gen_opt, self.lrs["generator"])
        return loss

    def train_step(self, real, rng) -> dict:
        n = len(real)
        d_loss = self.discriminator_step(real, rng.standard_normal((n, self.noise_dim)))
        g_loss = self.generator_step(rng.standard_normal((n, self.noise_dim)))
        return {"d_loss": d_loss, "g_loss": g_loss}

    def train_epoch(self, X, M, rng, batch_size) -> dict:
        acc = [self.train_step(X[idx], rng) for idx in _batches(len(X), batch_size, rng)]
        self.epoch += 1
        return _mean_losses(acc)

    def generate(self, count: int, seed: int, bernoulli_mask: bool = False) -> np.ndarray:
        self._require_trained()
        rng = np.random.default_rng(seed)
        out = mlp_apply(self.gen_spec, self.gen, rng.standard_normal((count, self.noise_dim)))
        return truncate_decimals(np.clip(out, 0.0, 1.0))

    def submodels(self) -> dict:
        return {"generator": (self.gen_spec, self.gen, self.gen_opt, self.lrs["generator"]),
                "discriminator": (self.disc_spec, self.disc, self.disc_opt,
                                  self.lrs["discriminator"])}

    def meta(self) -> dict:
        return {"p": self.p, "noise_dim": self.noise_dim}


def _mean_losses(acc: list[dict]) -> dict:
    return {k: float(np.mean([a[k] for a in acc])) for k in acc[0]}


def build_model(family: str, p: int, config: TrainConfig, rng: np.random.Generator,
                weights: LossWeights = LossWeights()) -> GenerativeModel:
    lrs = config.lrs(family)
    if family == "vanilla":
        return VanillaVAE(p, lr=lrs["vae"], rng=rng)
    if family == "bvae":
        return BindedVAE(p, lrs=lrs, weights=weights, rng=rng)
    if family == "unbinded":
        return UnbindedVAE(p, lrs=lrs, weights=weights, rng=rng, phase1_epochs=config.epochs)
    if family == "gan":
        return GAN(p, lrs=lrs, rng=rng)
    raise ValueError(f"unknown model family {family!r}; choose from {FAMILIES}")


# ---------------------------------------------------------------- persistence

MANIFEST = "manifest.json"


def _net_state(spec: NetworkSpec, params: NetworkParams, opt: AdamState, lr: float):
    arrays = {**params.named("net."), **opt.m.named("adam_m."), **opt.v.named("adam_v.")}
    return arrays, {"kind": "net", "spec": spec.to_dict(), "lr": lr, "adam_step": opt.step}


def _net_from_state(arrays: dict, meta: dict):
    spec = NetworkSpec.from_dict(meta["spec"])
    n = len(spec.layers)
    params = NetworkParams.from_named(arrays, n, "net.")
    params.check(spec)
    opt = AdamState(NetworkParams.from_named(arrays, n, "adam_m."),
                    NetworkParams.from_named(arrays, n, "adam_v."), meta["adam_step"])
    return spec, params, opt, meta["lr"]


def save_model(model: GenerativeModel, directory, extra: dict | None = None) -> None:
    """One checkpoint file per sub-model plus a manifest naming the family.

    ``extra`` goes into the manifest verbatim (seed, RNG state, ...).
    """
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    files = {}
    common = {"seed": (extra or {}).get("seed"), "epoch": model.epoch}
    for name, sub in model.submodels().items():
        arrays, meta = sub.state() if isinstance(sub, VAE) else _net_state(*sub)
        checkpoint.save_arrays(d / f"{name}.ckpt", arrays, {**meta, **common})
        files[name] = f"{name}.ckpt"
    manifest = {"version": checkpoint.VERSION, "family": model.family, "epoch": model.epoch,
                "files": files, "model": model.meta(), **(extra or {})}
    tmp = d / (MANIFEST + ".tmp")
    tmp.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    tmp.replace(d / MANIFEST)


def read_manifest(directory) -> dict:
    path = Path(directory) / MANIFEST
    if not path.exists():
        raise FileNotFoundError(f"no model manifest in {directory}")
    return json.loads(path.read_text())


def load_model(directory) -> tuple[GenerativeModel, dict]:
    d = Path(directory)
    manifest = read_manifest(d)
    family, meta = manifest["family"], manifest["model"]
    subs = {}
    for name, fname in manifest["files"].items():
        arrays, m = checkpoint.load_arrays(d / fname)
        subs[name] = VAE.from_state(arrays, m) if m["kind"] == "vae" else _net_from_state(arrays, m)
    if family == "vanilla":
        model = VanillaVAE(meta["p"], recon_weight=meta["recon_weight"])
        model.vae = subs["vae"]
    elif family in ("bvae", "unbinded"):
        w = LossWeights(**meta["weights"])
        if family == "bvae":
            model = BindedVAE(meta["p"], weights=w)
        else:
            model = UnbindedVAE(meta["p"], weights=w, phase1_epochs=meta["phase1_epochs"])
            model.frozen_mask = subs.get("frozen_mask_vae")
        model.mask, model.ratio = subs["mask_vae"], subs["ratio_vae"]
    elif family == "gan":
        model = GAN(meta["p"], noise_dim=meta["noise_dim"])
        model.gen_spec, model.gen, model.gen_opt, lr_g = subs["generator"]
        model.disc_spec, model.disc, model.disc_opt, lr_d = subs["discriminator"]
        model.lrs = {"generator": lr_g, "discriminator": lr_d}
    else:
        raise ValueError(f"manifest names unknown family {family!r}")
    model.epoch = manifest["epoch"]
    return model, manifest
