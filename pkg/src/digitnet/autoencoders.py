"""Dense autoencoder (784 -> 32 -> 784) and a Gaussian-latent variational autoencoder.

Both are trained with the same ``sgd_step`` as the classifier.  Inputs are
flattened images with values in [0, 1].
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError
from .images import export_gray_image, tile
from .layers import LayerSpec as L
from .layers import Network
from .losses import EPS, binary_crossentropy, mse, mse_grad
from .mnist import BatchPlan, Dataset
from .optim import OptimizerState, SgdConfig, sgd_step
from .tensor import DTYPE, SeededRng, derive_seed

log = logging.getLogger(__name__)

IMAGE_SIDE = 28
INPUT_WIDTH = IMAGE_SIDE * IMAGE_SIDE


def _flat(x):
    x = np.asarray(x, dtype=DTYPE)
    return x.reshape(len(x), -1) if x.ndim > 2 else x


def _flat_batches(dataset: Dataset, batch_size, seed):
    order = BatchPlan(batch_size, seed=seed).order(len(dataset))
    flat = dataset.images.reshape(len(dataset), -1)
    for start in range(0, len(dataset), batch_size):
        yield flat[order[start:start + batch_size]]


def _all_params(*nets):
    pairs = [pg for net in nets for pg in net.parameters()]
    return [p for p, _ in pairs], [g for _, g in pairs]


# ---------------------------------------------------------------------------
# plain autoencoder
# ---------------------------------------------------------------------------


@dataclass
class AeConfig:
    epochs: int = 5
    batch_size: int = 128
    latent: int = 32
    seed: int = 0
    sgd: SgdConfig = field(default_factory=lambda: SgdConfig(lr0=1.0))
    limit_train: int | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")


class AeModel:
    def __init__(self, latent=32, seed=0):
        self.latent = latent
        self.encoder = Network([L.dense(latent), L.relu()], (INPUT_WIDTH,),
                               seed=derive_seed(seed, "ae-encoder"), weight_init="glorot")
        self.decoder = Network([L.dense(INPUT_WIDTH), L.sigmoid()], (latent,),
                               seed=derive_seed(seed, "ae-decoder"), weight_init="glorot")

    def encode(self, x):
        return self.encoder.forward(_flat(x), mode="eval")[0]

    def decode(self, z):
        return self.decoder.forward(z, mode="eval")[0]


def ae_forward(model: AeModel, image):
    x = np.asarray(image, dtype=DTYPE)
    single = x.ndim == 1
    x = x[None] if single else _flat(x)
    if x.shape[-1] != INPUT_WIDTH:
        raise ShapeError(f"autoencoder expects {INPUT_WIDTH}-wide inputs, got {np.shape(image)}")
    out = model.decode(model.encode(x))
    return out[0] if single else out


def ae_step(model: AeModel, x, state, cfg: SgdConfig):
    z, enc_cache = model.encoder.forward(x, mode="train")
    r, dec_cache = model.decoder.forward(z, mode="train")
    loss = mse(r, x)
    gz = model.decoder.backward(dec_cache, mse_grad(r, x))
    model.encoder.backward(enc_cache, gz)
    params, grads = _all_params(model.encoder, model.decoder)
    sgd_step(params, grads, state, cfg)
    return loss


def ae_train(config: AeConfig, dataset: Dataset):
    """Minimize reconstruction MSE; returns ``(model, [(epoch, mean_mse), ...])``."""
    data = dataset.subset(config.limit_train)
    model = AeModel(config.latent, config.seed)
    state = OptimizerState()
    curve = []
    for epoch in range(config.epochs):
        total = 0.0
        for x in _flat_batches(data, config.batch_size, derive_seed(config.seed, "ae-shuffle", epoch)):
            total += ae_step(model, x, state, config.sgd) * len(x)
        curve.append((epoch + 1, total / len(data)))
        log.info("ae epoch %d mse %.6f", epoch + 1, curve[-1][1])
    return model, curve


# ---------------------------------------------------------------------------
# variational autoencoder
# ---------------------------------------------------------------------------


@dataclass
class VaeConfig:
    epochs: int = 5
    batch_size: int = 128
    latent: int = 20
    hidden: int = 400
    seed: int = 0
    recon: str = "bce"
    sgd: SgdConfig = field(default_factory=lambda: SgdConfig(lr0=1e-3))
    limit_train: int | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.recon not in ("bce", "mse"):
            raise ConfigError(f"recon must be 'bce' or 'mse', got {self.recon!r}")


@dataclass
class VaeLossParts:
    recon: float
    kl: float

    @property
    def total(self):
        return self.recon + self.kl


class VaeModel:
    """Encoder 784 -> hidden -> (mu, logvar); decoder latent -> hidden -> 784."""

    def __init__(self, latent=20, hidden=400, seed=0):
        self.latent = latent
        self.hidden = hidden
        init = dict(weight_init="glorot")
        self.trunk = Network([L.dense(hidden), L.relu()], (INPUT_WIDTH,), seed=derive_seed(seed, "vae-trunk"), **init)
        self.mu_head = Network([L.dense(latent)], (hidden,), seed=derive_seed(seed, "vae-mu"), **init)
        self.logvar_head = Network([L.dense(latent)], (hidden,), seed=derive_seed(seed, "vae-logvar"), **init)
        self.decoder = Network([L.dense(hidden), L.relu(), L.dense(INPUT_WIDTH), L.sigmoid()], (latent,),
                               seed=derive_seed(seed, "vae-decoder"), **init)

    @property
    def networks(self):
        return [self.trunk, self.mu_head, self.logvar_head, self.decoder]

    def decode(self, z):
        return self.decoder.forward(np.atleast_2d(z), mode="eval")[0]


def kl_divergence(mu, logvar):
    """KL(N(mu, exp(logvar)) || N(0, I)) summed over the latent axis."""
    mu = np.asarray(mu, dtype=DTYPE)
    logvar = np.asarray(logvar, dtype=DTYPE)
    if mu.shape != logvar.shape:
        raise ShapeError(f"kl_divergence: mu {mu.shape} vs logvar {logvar.shape}")
    kl = -0.5 * np.sum(1.0 + logvar - mu**2 - np.exp(logvar), axis=-1)
    return float(kl) if kl.ndim == 0 else kl


def _recon_term(recon, target, kind):
    if kind == "bce":
        return binary_crossentropy(recon, target)
    return np.sum((recon - target) ** 2, axis=-1)


def vae_loss(recon, target, mu, logvar, kind="bce") -> VaeLossParts:
    """Reconstruction (summed over pixels) plus KL; batch values are means."""
    recon = np.asarray(recon, dtype=DTYPE)
    target = np.asarray(target, dtype=DTYPE)
    if recon.shape != target.shape:
        raise ShapeError(f"vae_loss: recon {recon.shape} vs target {target.shape}")
    return VaeLossParts(float(np.mean(_recon_term(recon, target, kind))), float(np.mean(kl_divergence(mu, logvar))))


def vae_encode(model: VaeModel, image, rng: SeededRng | None = None, eps=None):
    """Reparameterized sample ``z = mu + exp(logvar / 2) * eps``.

    ``eps`` defaults to standard-normal draws from ``rng``; pass zeros for a
    deterministic encoding.  Returns ``(z, mu, logvar)``.
    """
    x = _flat(np.atleast_2d(image) if np.ndim(image) == 1 else image)
    h = model.trunk.forward(x, mode="eval")[0]
    mu = model.mu_head.forward(h, mode="eval")[0]
    logvar = model.logvar_head.forward(h, mode="eval")[0]
    if eps is None:
        if rng is None:
            raise ConfigError("vae_encode needs an rng or explicit eps")
        eps = rng.normal(mu.shape)
    z = mu + np.exp(0.5 * logvar) * np.broadcast_to(eps, mu.shape)
    if np.ndim(image) == 1:
        return z[0], mu[0], logvar[0]
    return z, mu, logvar


def vae_forward_backward(model: VaeModel, x, eps, kind="bce"):
    """Loss for a batch and its gradients, stored in each network's ``grads``.

    Returns ``(VaeLossParts, grad_mu, grad_logvar)``; the latter two are
    gradients of the batch-mean total loss w.r.t. the encoder outputs.
    """
    x = _flat(x)
    n = len(x)
    h, c_trunk = model.trunk.forward(x, mode="train")
    mu, c_mu = model.mu_head.forward(h, mode="train")
    logvar, c_lv = model.logvar_head.forward(h, mode="train")
    std = np.exp(0.5 * logvar)
    z = mu + std * eps
    r, c_dec = model.decoder.forward(z, mode="train")
    parts = vae_loss(r, x, mu, logvar, kind)

    if kind == "bce":
        # sigmoid + BCE fused: d/dlogit = r - t (clipping only matters below EPS)
        gz = model.decoder.backward(c_dec, (r - x) / n, skip_last=True)
    else:
        gz = model.decoder.backward(c_dec, 2.0 * (r - x) / n)
    g_mu = gz + mu / n
    g_lv = gz * eps * 0.5 * std + 0.5 * (np.exp(logvar) - 1.0) / n
    gh = model.mu_head.backward(c_mu, g_mu) + model.logvar_head.backward(c_lv, g_lv)
    model.trunk.backward(c_trunk, gh)
    return parts, g_mu, g_lv


def vae_train(config: VaeConfig, dataset: Dataset):
    """Returns ``(model, [(epoch, recon, kl, total), ...])`` with epoch means."""
    data = dataset.subset(config.limit_train)
    model = VaeModel(config.latent, config.hidden, config.seed)
    state = OptimizerState()
    params, grads = _all_params(*model.networks)
    curve = []
    for epoch in range(config.epochs):
        noise = SeededRng(derive_seed(config.seed, "vae-noise", epoch))
        rec_sum = kl_sum = 0.0
        for x in _flat_batches(data, config.batch_size, derive_seed(config.seed, "vae-shuffle", epoch)):
            eps = noise.normal((len(x), config.latent))
            parts, _, _ = vae_forward_backward(model, x, eps, config.recon)
            sgd_step(params, grads, state, config.sgd)
            rec_sum += parts.recon * len(x)
            kl_sum += parts.kl * len(x)
        rec, kl = rec_sum / len(data), kl_sum / len(data)
        curve.append((epoch + 1, rec, kl, rec + kl))
        log.info("vae epoch %d recon %.3f kl %.3f", epoch + 1, rec, kl)
    return model, curve


def vae_sample(model: VaeModel, count, rng: SeededRng):
    """Decode ``count`` draws from the standard-normal prior."""
    return model.decode(rng.normal((count, model.latent)))


# ---------------------------------------------------------------------------
# pictures and curves
# ---------------------------------------------------------------------------


def _as_images(flat):
    return [np.asarray(v).reshape(IMAGE_SIDE, IMAGE_SIDE) for v in flat]


def export_reconstructions(model, images, path, sep=2):
    """Originals on the top row, their reconstructions below."""
    x = _flat(images)
    if isinstance(model, VaeModel):
        z, _, _ = vae_encode(model, x, eps=np.zeros((len(x), model.latent)))
        recon = model.decode(z)
    else:
        recon = ae_forward(model, x)
    grid = tile(_as_images(x) + _as_images(recon), cols=len(x), sep=sep)
    export_gray_image(grid, path, vmin=0.0, vmax=1.0)
    return grid


def export_samples(model: VaeModel, count, rng, path, cols=8, sep=2):
    samples = vae_sample(model, count, rng)
    grid = tile(_as_images(samples), cols=cols, sep=sep)
    export_gray_image(grid, path, vmin=0.0, vmax=1.0)
    return grid


def write_curve(rows, header, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([row[0]] + [f"{v:.9g}" for v in row[1:]])


__all__ = [
    "AeConfig", "AeModel", "ae_forward", "ae_train", "VaeConfig", "VaeModel", "VaeLossParts",
    "kl_divergence", "vae_loss", "vae_encode", "vae_forward_backward", "vae_train", "vae_sample",
    "export_reconstructions", "export_samples", "write_curve", "EPS",
]
