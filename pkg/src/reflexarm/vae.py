"""Variational autoencoder over clean-style depth images.

The posterior mean (or a reparameterized sample) of a trained encoder is
the image half of the observation fed to the waypoint generator and the
policy. Weighted-KL objective; reconstruction likelihood is Gaussian with
unit variance, so the data term is pixel MSE.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .nn import Tensor, ops
from .scenegen import DepthImage

IMAGE_SIZE = 64
FEATURE_SIZE = 4096            # 64 channels x 8 x 8 after three stride-2 convs


@dataclass(frozen=True)
class VaeConfig:
    latent_dim: int = 64
    beta: float = 1.0
    lr: float = 1e-4
    epochs: int = 50
    batch_size: int = 64

    def __post_init__(self):
        if self.latent_dim <= 0 or self.epochs <= 0 or self.batch_size <= 0:
            raise ValueError("latent_dim, epochs, batch_size must be positive")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.lr <= 0:
            raise ValueError("lr must be positive")


class VaeModel(nn.Module):
    """Encoder: three stride-2 convs (16/32/64) + dense heads for the
    posterior mean and log-variance. Decoder: dense to 8x8x64, three
    stride-2 transposed convs (64/32/16), stride-1 conv to one channel,
    logistic squash so outputs satisfy the depth-image range."""

    def __init__(self, latent_dim=64, rng=None):
        rng = np.random.default_rng(0) if rng is None else rng
        self.latent_dim = latent_dim
        self.enc1 = nn.Conv2d(1, 16, 3, 2, rng)
        self.enc2 = nn.Conv2d(16, 32, 3, 2, rng)
        self.enc3 = nn.Conv2d(32, 64, 3, 2, rng)
        self.fc_mu = nn.Dense(FEATURE_SIZE, latent_dim, rng)
        self.fc_logvar = nn.Dense(FEATURE_SIZE, latent_dim, rng)
        self.fc_dec = nn.Dense(latent_dim, FEATURE_SIZE, rng)
        self.dec1 = nn.ConvTranspose2d(64, 64, 3, 2, rng)
        self.dec2 = nn.ConvTranspose2d(64, 32, 3, 2, rng)
        self.dec3 = nn.ConvTranspose2d(32, 16, 3, 2, rng)
        self.out_conv = nn.Conv2d(16, 1, 3, 1, rng)

    def encode_tensor(self, x):
        """(N, 1, 64, 64) -> (mu, logvar), each (N, latent_dim)."""
        h = ops.relu(self.enc1(x))
        h = ops.relu(self.enc2(h))
        h = ops.relu(self.enc3(h))
        h = ops.reshape(h, (h.data.shape[0], FEATURE_SIZE))
        return self.fc_mu(h), self.fc_logvar(h)

    def decode_tensor(self, z):
        """(N, latent_dim) -> (N, 1, 64, 64) in [0, 1]."""
        h = ops.relu(self.fc_dec(z))
        h = ops.reshape(h, (h.data.shape[0], 64, 8, 8))
        h = ops.relu(self.dec1(h))
        h = ops.relu(self.dec2(h))
        h = ops.relu(self.dec3(h))
        return ops.sigmoid(self.out_conv(h))

    def forward(self, x, noise):
        mu, logvar = self.encode_tensor(x)
        z = ops.gaussian_reparameterize(mu, logvar, noise)
        return self.decode_tensor(z), mu, logvar


def _as_batch(images):
    arr = np.asarray(images, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3 or arr.shape[1:] != (IMAGE_SIZE, IMAGE_SIZE):
        raise ValueError(f"expected (N, {IMAGE_SIZE}, {IMAGE_SIZE}) images, got {arr.shape}")
    return arr[:, None, :, :]


def encode(model, image, eps=None, seed=0):
    """Posterior (mu, logvar) and a reparameterized sample z for one image.

    Accepts a DepthImage or a raw (64, 64) array. eps=0 (or a vector)
    injects the noise directly; otherwise it is drawn from the seed.
    """
    if isinstance(image, DepthImage):
        image = image.data
    x = Tensor(_as_batch(image))
    mu, logvar = model.encode_tensor(x)
    mu = mu.data[0].astype(np.float64)
    logvar = logvar.data[0].astype(np.float64)
    if eps is None:
        eps = np.random.default_rng(seed).standard_normal(model.latent_dim)
    eps = np.broadcast_to(np.asarray(eps, dtype=np.float64), mu.shape)
    z = mu + np.exp(0.5 * logvar) * eps
    return mu, logvar, z


def encode_batch(model, images):
    """Posterior means for (N, 64, 64) images -> (N, latent_dim) float64."""
    out = []
    for lo in range(0, len(images), 256):
        x = Tensor(_as_batch(images[lo:lo + 256]))
        mu, _ = model.encode_tensor(x)
        out.append(mu.data.astype(np.float64))
    return np.concatenate(out, axis=0)


def reconstruct(model, image):
    """Decoder output for the posterior mean; (64, 64) float array."""
    if isinstance(image, DepthImage):
        image = image.data
    x = Tensor(_as_batch(image))
    mu, _ = model.encode_tensor(x)
    return model.decode_tensor(mu).data[0, 0]


def vae_loss(model, batch, beta, noise):
    """Training objective on one batch: per-image squared reconstruction
    error plus beta times KL to the standard normal (both batch means).
    Returns (loss Tensor, recon float, kl float); recon is per-pixel MSE
    for interpretable history."""
    x = Tensor(batch)
    recon, mu, logvar = model.forward(x, noise)
    n = batch.shape[0]
    sse = ops.scale(ops.mse_loss(recon, x, reduction="sum"), 1.0 / n)
    kl = ops.kl_standard_normal(mu, logvar)
    loss = ops.add(sse, ops.scale(kl, beta))
    pixels = batch.shape[2] * batch.shape[3]
    return loss, float(sse.data) / pixels, float(kl.data)


def train_vae(images, cfg=VaeConfig(), seed=0):
    """Fit on (N, 64, 64) clean-style images. Returns (model, history)
    where history has per-epoch "recon" (per-pixel MSE) and "kl" lists."""
    images = np.asarray(images, dtype=np.float32)
    if images.ndim != 3 or len(images) == 0:
        raise ValueError("need a nonempty (N, 64, 64) image array")
    rng = np.random.default_rng(seed)
    model = VaeModel(cfg.latent_dim, rng)
    params = model.parameters()
    opt = nn.Adam(params, lr=cfg.lr)
    history = {"recon": [], "kl": []}
    n = len(images)
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        recon_sum, kl_sum = 0.0, 0.0
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            batch = images[idx][:, None, :, :]
            noise = rng.standard_normal((len(idx), cfg.latent_dim)).astype(np.float32)
            tape = nn.Tape(params)
            with tape:
                loss, recon, kl = vae_loss(model, batch, cfg.beta, noise)
            opt.step(tape.gradients(loss))
            recon_sum += recon * len(idx)
            kl_sum += kl * len(idx)
        history["recon"].append(recon_sum / n)
        history["kl"].append(kl_sum / n)
    return model, history


def save_vae(model, path):
    nn.save_checkpoint(path, model, extra={"kind": "vae",
                                           "latent_dim": model.latent_dim})


def load_vae(path):
    extra = nn.read_checkpoint_extra(path)
    if not extra or extra.get("kind") != "vae":
        raise nn.CheckpointError(f"{path} is not an image-encoder checkpoint")
    model = VaeModel(int(extra["latent_dim"]))
    nn.load_checkpoint(path, model)
    return model
