"""Supervised waypoint generator: image latent + robot state -> K relative
waypoints, trained on planner-labeled datasets under three data regimes
(degraded images only, degraded+clean mix, translator+clean).

The image encoder (and translator, when present) stays frozen; only the
two dense layers train. Held-out rows never share goal positions with
training rows.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .kinematics import ArmModel, end_effector
from .nn import Tensor, ops
from .planner import WaypointSet
from .real2sim import translate_batch
from .vae import encode_batch

REGIMES = ("real_only", "real_plus_sim", "ced_plus_sim")


@dataclass(frozen=True)
class WaygenConfig:
    lr: float = 1e-3
    epochs: int = 500
    batch_size: int = 64
    hidden: int = 256

    def __post_init__(self):
        if min(self.lr, self.epochs, self.batch_size, self.hidden) <= 0:
            raise ValueError("all fields must be positive")


@dataclass(frozen=True)
class TrainRegime:
    name: str
    data_fraction: float = 1.0

    def __post_init__(self):
        if self.name not in REGIMES:
            raise ValueError(f"regime must be one of {REGIMES}, got {self.name!r}")
        if not 0.0 < self.data_fraction <= 1.0:
            raise ValueError("data_fraction must be in (0, 1]")


class WaypointNet(nn.Module):
    """concat(z, s_robot) -> dense hidden + relu -> dense K*N_state."""

    def __init__(self, latent_dim, n_state, k=5, hidden=256, frame="joint",
                 rng=None):
        rng = np.random.default_rng(0) if rng is None else rng
        self.latent_dim = latent_dim
        self.n_state = n_state
        self.k = k
        self.frame = frame
        self.fc1 = nn.Dense(latent_dim + n_state, hidden, rng)
        self.fc2 = nn.Dense(hidden, k * n_state, rng)

    def forward(self, x):
        """(N, latent+n_state) -> (N, k*n_state)."""
        return self.fc2(ops.relu(self.fc1(x)))


def predict_waypoints(net, z, s_robot):
    """Deterministic K x N_state relative waypoints for one state."""
    z = np.asarray(z, dtype=np.float32).ravel()
    s = np.asarray(s_robot, dtype=np.float32).ravel()
    if z.shape != (net.latent_dim,) or s.shape != (net.n_state,):
        raise ValueError(
            f"expected latent ({net.latent_dim},) and state ({net.n_state},), "
            f"got {z.shape} and {s.shape}")
    x = Tensor(np.concatenate([z, s])[None, :])
    out = net.forward(x).data[0].astype(np.float64)
    return WaypointSet(out.reshape(net.k, net.n_state), net.frame)


def waypoint_error(pred, truth, arm, current_angles=None):
    """Mean distance between de-relativized workspace points, millimeters.

    Cartesian offsets compare directly (the shared base point cancels);
    joint offsets are mapped through forward kinematics at the current
    configuration."""
    if pred.frame != truth.frame:
        raise ValueError(f"frame mismatch: {pred.frame} vs {truth.frame}")
    if pred.offsets.shape != truth.offsets.shape:
        raise ValueError("waypoint sets differ in shape")
    if pred.frame == "cartesian":
        d = np.linalg.norm(pred.offsets - truth.offsets, axis=1)
    else:
        if current_angles is None:
            raise ValueError("joint-frame error needs the current angles")
        q = np.asarray(current_angles, dtype=np.float64)
        d = np.array([np.linalg.norm(end_effector(arm, q + p) - end_effector(arm, q + t))
                      for p, t in zip(pred.offsets, truth.offsets)])
    return float(d.mean() * 1000.0)


def split_by_goals(dataset, holdout_fraction=1 / 6, seed=0):
    """(train, holdout) datasets with disjoint goal positions."""
    goals = np.round(dataset["goal"], 6)
    uniq = np.unique(goals, axis=0)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(uniq))
    n_hold = max(1, int(round(holdout_fraction * len(uniq))))
    if len(uniq) < 2:
        raise ValueError("need at least two distinct goals to split")
    held = uniq[order[:n_hold]]
    is_held = (goals[:, None, :] == held[None, :, :]).all(axis=2).any(axis=1)
    return dataset.subset(np.nonzero(~is_held)[0]), dataset.subset(np.nonzero(is_held)[0])


def _train_images(dataset, regime):
    if regime.name == "real_only":
        return [dataset["real"]]
    if regime.name == "real_plus_sim":
        return [dataset["real"], dataset["sim"]]
    return [dataset["sim"]]                      # translator handles eval input


def eval_latents(vae, ced, regime_name, real_images):
    """Latents the generator sees at evaluation time: degraded images
    encoded directly, or translated to clean style first."""
    if regime_name == "ced_plus_sim":
        if ced is None:
            raise ValueError("regime ced_plus_sim needs a translator model at eval")
        real_images = translate_batch(ced, real_images)
    return encode_batch(vae, real_images)


def waygen_loss(net, inputs, targets):
    """Mean squared error of predicted waypoint offsets on one batch."""
    pred = net.forward(Tensor(np.asarray(inputs, dtype=np.float32)))
    return ops.mse_loss(pred, Tensor(np.asarray(targets, dtype=np.float32)))


def nested_subset(n, fraction, seed):
    """Row indices for a data fraction; smaller fractions are prefixes of
    larger ones under the same seed, so 10% of the data is a subset of 50%."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must be in (0, 1]")
    perm = np.random.default_rng([seed, 101]).permutation(n)
    return perm[:max(1, int(round(fraction * n)))]


def train_waygen(dataset, regime, vae, ced=None, cfg=WaygenConfig(), seed=0,
                 holdout=None):
    """Fit the generator on a planner-labeled dataset.

    Returns (net, metrics): per-epoch train and held-out MSE plus the
    final held-out waypoint error in millimeters. When no holdout dataset
    is given, one is split off by goal positions. data_fraction keeps a
    seeded prefix of training rows, so smaller fractions are nested in
    larger ones.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    rng = np.random.default_rng(seed)
    if holdout is None:
        dataset, holdout = split_by_goals(dataset, seed=seed)

    frame = dataset.meta.get("frame", "joint")
    k = dataset["waypoints"].shape[1]
    n_state = dataset["robot_state"].shape[1]

    # frozen encodings once up front; only the dense head trains
    z_parts = [encode_batch(vae, imgs) for imgs in _train_images(dataset, regime)]
    states = dataset["robot_state"].astype(np.float64)
    targets = dataset["waypoints"].reshape(len(dataset), k * n_state).astype(np.float64)
    x_train = np.concatenate([np.concatenate([z, states], axis=1) for z in z_parts])
    y_train = np.concatenate([targets] * len(z_parts))

    order = nested_subset(len(x_train), regime.data_fraction, seed)
    x_train, y_train = x_train[order], y_train[order]

    z_hold = eval_latents(vae, ced, regime.name, holdout["real"])
    x_hold = np.concatenate([z_hold, holdout["robot_state"].astype(np.float64)], axis=1)
    y_hold = holdout["waypoints"].reshape(len(holdout), k * n_state).astype(np.float64)

    net = WaypointNet(vae.latent_dim, n_state, k, cfg.hidden, frame, rng)
    params = net.parameters()
    opt = nn.Adam(params, lr=cfg.lr)
    metrics = {"train_mse": [], "holdout_mse": []}
    n = len(x_train)
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        total = 0.0
        for lo in range(0, n, cfg.batch_size):
            idx = perm[lo:lo + cfg.batch_size]
            tape = nn.Tape(params)
            with tape:
                loss = waygen_loss(net, x_train[idx], y_train[idx])
            opt.step(tape.gradients(loss))
            total += float(loss.data) * len(idx)
        metrics["train_mse"].append(total / n)
        with nn.no_grad():
            hold_loss = waygen_loss(net, x_hold, y_hold)
        metrics["holdout_mse"].append(float(hold_loss.data))

    pred_hold = net.forward(Tensor(x_hold.astype(np.float32))).data
    errors = []
    arm = ArmModel()
    for i in range(len(x_hold)):
        p = WaypointSet(pred_hold[i].reshape(k, n_state).astype(np.float64), frame)
        t = WaypointSet(y_hold[i].reshape(k, n_state), frame)
        errors.append(waypoint_error(p, t, arm, holdout["angles"][i].astype(np.float64)
                                     if frame == "joint" else None))
    metrics["holdout_error_mm"] = float(np.mean(errors)) if errors else float("nan")
    return net, metrics


def save_waygen(net, path):
    nn.save_checkpoint(path, net, extra={
        "kind": "waygen", "latent_dim": net.latent_dim, "n_state": net.n_state,
        "k": net.k, "hidden": net.fc1.bias.data.shape[0], "frame": net.frame})


def load_waygen(path):
    extra = nn.read_checkpoint_extra(path)
    if not extra or extra.get("kind") != "waygen":
        raise nn.CheckpointError(f"{path} is not a waypoint-generator checkpoint")
    net = WaypointNet(int(extra["latent_dim"]), int(extra["n_state"]),
                      int(extra["k"]), int(extra["hidden"]), extra["frame"])
    nn.load_checkpoint(path, net)
    return net
