"""Image translator from degraded sensor style to clean style.

Convolutional encoder-decoder trained on pixel-aligned pairs with an L1
objective: three stride-2 downsampling convs, two residual blocks at the
bottleneck, three stride-2 transposed convs back up, and a logistic
squash so outputs satisfy the depth-image range.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .nn import Tensor, ops
from .scenegen import DepthImage

IMAGE_SIZE = 64


@dataclass(frozen=True)
class CedConfig:
    lr: float = 2e-4
    epochs: int = 100
    batch_size: int = 16

    def __post_init__(self):
        if self.lr <= 0 or self.epochs <= 0 or self.batch_size <= 0:
            raise ValueError("lr, epochs, batch_size must be positive")


class CedModel(nn.Module):
    """Downsample 64->8 over widths 16/32/64, two residual blocks at the
    bottleneck, mirror upsampling, one-channel output in [0, 1]."""

    def __init__(self, rng=None):
        rng = np.random.default_rng(0) if rng is None else rng
        self.down1 = nn.Conv2d(1, 16, 3, 2, rng)
        self.norm1 = nn.InstanceNorm(16)
        self.down2 = nn.Conv2d(16, 32, 3, 2, rng)
        self.norm2 = nn.InstanceNorm(32)
        self.down3 = nn.Conv2d(32, 64, 3, 2, rng)
        self.norm3 = nn.InstanceNorm(64)
        self.res1 = nn.ResidualBlock(64, rng)
        self.res2 = nn.ResidualBlock(64, rng)
        self.up1 = nn.ConvTranspose2d(64, 64, 3, 2, rng)
        self.unorm1 = nn.InstanceNorm(64)
        self.up2 = nn.ConvTranspose2d(64, 32, 3, 2, rng)
        self.unorm2 = nn.InstanceNorm(32)
        self.up3 = nn.ConvTranspose2d(32, 16, 3, 2, rng)
        self.unorm3 = nn.InstanceNorm(16)
        self.out_conv = nn.Conv2d(16, 1, 3, 1, rng)

    def forward(self, x):
        """(N, 1, 64, 64) -> (N, 1, 64, 64) in [0, 1]."""
        h = ops.relu(self.norm1(self.down1(x)))
        h = ops.relu(self.norm2(self.down2(h)))
        h = ops.relu(self.norm3(self.down3(h)))
        h = self.res1(h)
        h = self.res2(h)
        h = ops.relu(self.unorm1(self.up1(h)))
        h = ops.relu(self.unorm2(self.up2(h)))
        h = ops.relu(self.unorm3(self.up3(h)))
        return ops.sigmoid(self.out_conv(h))


def _as_batch(images):
    arr = np.asarray(images, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3 or arr.shape[1:] != (IMAGE_SIZE, IMAGE_SIZE):
        raise ValueError(f"expected (N, {IMAGE_SIZE}, {IMAGE_SIZE}) images, got {arr.shape}")
    return arr[:, None, :, :]


def translate(model, img):
    """Map one degraded-style image to clean style. Deterministic."""
    data = img.data if isinstance(img, DepthImage) else np.asarray(img)
    out = model.forward(Tensor(_as_batch(data))).data[0, 0]
    out = np.clip(out.astype(np.float32), 0.0, 1.0)
    return DepthImage(IMAGE_SIZE, IMAGE_SIZE, out, "sim")


def translate_batch(model, images):
    """(N, 64, 64) -> (N, 64, 64) float32 clean-style arrays."""
    out = []
    for lo in range(0, len(images), 64):
        x = Tensor(_as_batch(images[lo:lo + 64]))
        out.append(np.clip(model.forward(x).data[:, 0].astype(np.float32), 0.0, 1.0))
    return np.concatenate(out, axis=0)


def ced_loss(model, real_batch, sim_batch):
    """Mean absolute error between translated and target images."""
    pred = model.forward(Tensor(np.asarray(real_batch, dtype=np.float32)))
    return ops.l1_loss(pred, Tensor(np.asarray(sim_batch, dtype=np.float32)))


def train_ced(real_images, sim_images, cfg=CedConfig(), seed=0):
    """Fit on pixel-aligned (real, sim) pairs. Returns (model, history)
    with history = per-epoch mean L1 over the training batches."""
    real_images = np.asarray(real_images, dtype=np.float32)
    sim_images = np.asarray(sim_images, dtype=np.float32)
    if real_images.ndim != 3 or len(real_images) == 0:
        raise ValueError("need a nonempty (N, 64, 64) image array")
    if real_images.shape != sim_images.shape:
        raise ValueError("real and sim arrays must be aligned and equal-shaped")
    rng = np.random.default_rng(seed)
    model = CedModel(rng)
    params = model.parameters()
    opt = nn.Adam(params, lr=cfg.lr)
    history = []
    n = len(real_images)
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            tape = nn.Tape(params)
            with tape:
                loss = ced_loss(model, real_images[idx][:, None],
                                sim_images[idx][:, None])
            opt.step(tape.gradients(loss))
            total += float(loss.data) * len(idx)
        history.append(total / n)
    return model, history


def save_ced(model, path):
    nn.save_checkpoint(path, model, extra={"kind": "ced"})


def load_ced(path):
    extra = nn.read_checkpoint_extra(path)
    if not extra or extra.get("kind") != "ced":
        raise nn.CheckpointError(f"{path} is not an image-translator checkpoint")
    model = CedModel()
    nn.load_checkpoint(path, model)
    return model
