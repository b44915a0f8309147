"""Bi-directional RRT* in joint space, shortcut smoothing, and extraction
of K relative waypoints along a planned path.

Paths are ordered lists of joint configurations with summed joint-space
arc length as cost. Collision checking interpolates between configs at a
fixed angular resolution.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kinematics import (check_collision, end_effector, ik_solve,
                         min_clearance_batch, within_limits)


@dataclass(frozen=True)
class PlannerConfig:
    max_iterations: int = 4000
    extend_step: float = 0.1
    rewire_radius: float = 0.4
    goal_bias: float = 0.1
    connect_tolerance: float = 0.05
    collision_check_resolution: float = 0.02
    refine_iterations: int = 300     # extra iterations after first connection
    max_rewire_candidates: int = 8

    def __post_init__(self):
        for name in ("max_iterations", "extend_step", "rewire_radius",
                     "connect_tolerance", "collision_check_resolution",
                     "refine_iterations", "max_rewire_candidates"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.goal_bias <= 1.0:
            raise ValueError("goal_bias must be in [0, 1]")


@dataclass
class Path:
    configs: np.ndarray          # (M, n_joints)
    cost: float

    def __post_init__(self):
        self.configs = np.asarray(self.configs, dtype=np.float64)
        if self.configs.ndim != 2 or len(self.configs) == 0:
            raise ValueError("path needs at least one config")

    def segment_lengths(self):
        if len(self.configs) < 2:
            return np.zeros(0)
        return np.linalg.norm(np.diff(self.configs, axis=0), axis=1)

    @property
    def length(self):
        return float(self.segment_lengths().sum())


@dataclass
class WaypointSet:
    offsets: np.ndarray          # (K, D)
    frame: str                   # "cartesian" | "joint"

    def __post_init__(self):
        self.offsets = np.asarray(self.offsets, dtype=np.float64)
        if self.offsets.ndim != 2:
            raise ValueError("offsets must be a K x D matrix")
        if not np.isfinite(self.offsets).all():
            raise ValueError("offsets must be finite")
        if self.frame not in ("cartesian", "joint"):
            raise ValueError(f"unknown frame {self.frame!r}")

    @property
    def k(self):
        return len(self.offsets)


def segment_free(arm, obstacles, a, b, resolution):
    """True when the straight joint-space segment a->b stays collision-free
    and within limits at the given angular resolution (endpoints included)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    dist = float(np.linalg.norm(b - a))
    steps = max(2, int(np.ceil(dist / resolution)) + 1)
    qs = a[None, :] + np.linspace(0.0, 1.0, steps)[:, None] * (b - a)[None, :]
    lo, hi = arm.limits_lo(), arm.limits_hi()
    if (qs < lo).any() or (qs > hi).any():
        return False
    if not obstacles:
        return True
    return bool((min_clearance_batch(arm, qs, obstacles) > 0.0).all())


class _Tree:
    """Flat-array RRT tree with parent indices and root-cost bookkeeping."""

    def __init__(self, root, capacity, n_joints):
        self.nodes = np.empty((capacity, n_joints))
        self.parent = np.full(capacity, -1, dtype=np.int64)
        self.cost = np.zeros(capacity)
        self.nodes[0] = root
        self.size = 1

    def nearest(self, q):
        d = np.linalg.norm(self.nodes[:self.size] - q, axis=1)
        return int(np.argmin(d)), float(d.min())

    def near(self, q, radius):
        d = np.linalg.norm(self.nodes[:self.size] - q, axis=1)
        return np.nonzero(d <= radius)[0]

    def add(self, q, parent, cost):
        i = self.size
        self.nodes[i] = q
        self.parent[i] = parent
        self.cost[i] = cost
        self.size += 1
        return i

    def path_to_root(self, i):
        out = []
        while i >= 0:
            out.append(self.nodes[i].copy())
            i = self.parent[i]
        return out


def _steer(from_q, to_q, step):
    d = float(np.linalg.norm(to_q - from_q))
    if d <= step:
        return to_q.copy()
    return from_q + (to_q - from_q) * (step / d)


def plan_birrt_star(arm, obstacles, start, goal, cfg=PlannerConfig(), seed=0):
    """Plan a collision-free joint path from start to goal configuration.

    Grows two rewiring trees (one per endpoint) toward uniform samples with
    goal bias, swapping roles each iteration; returns the best Path found
    or None when no connection exists within max_iterations.
    """
    start = np.asarray(start, dtype=np.float64)
    goal = np.asarray(goal, dtype=np.float64)
    if not within_limits(arm, start) or check_collision(arm, start, obstacles)[0]:
        raise ValueError("start configuration is invalid")
    if not within_limits(arm, goal) or check_collision(arm, goal, obstacles)[0]:
        raise ValueError("goal configuration is invalid")
    if (float(np.linalg.norm(goal - start)) <= cfg.connect_tolerance
            and segment_free(arm, obstacles, start, goal,
                             cfg.collision_check_resolution)):
        return Path(np.array([start, goal]), float(np.linalg.norm(goal - start)))

    rng = np.random.default_rng(seed)
    lo, hi = arm.limits_lo(), arm.limits_hi()
    res = cfg.collision_check_resolution
    cap = cfg.max_iterations + 2
    tree_a = _Tree(start, cap, arm.n_joints)   # grows from start
    tree_b = _Tree(goal, cap, arm.n_joints)    # grows from goal
    a_is_start = True
    best = None                                # (cost, configs)
    connected_at = None

    for iteration in range(cfg.max_iterations):
        if (connected_at is not None
                and iteration - connected_at >= cfg.refine_iterations):
            break
        if rng.random() < cfg.goal_bias:
            target = goal if a_is_start else start
        else:
            target = rng.uniform(lo, hi)

        i_near, _ = tree_a.nearest(target)
        q_new = _steer(tree_a.nodes[i_near], target, cfg.extend_step)
        if segment_free(arm, obstacles, tree_a.nodes[i_near], q_new, res):
            # RRT* parent choice and rewiring within the radius (capped to
            # the closest few, a k-nearest flavor of the rewire set)
            near_ids = tree_a.near(q_new, cfg.rewire_radius)
            if len(near_ids) > cfg.max_rewire_candidates:
                d = np.linalg.norm(tree_a.nodes[near_ids] - q_new, axis=1)
                near_ids = near_ids[np.argsort(d)[:cfg.max_rewire_candidates]]
            parent, parent_cost = i_near, (
                tree_a.cost[i_near] + float(np.linalg.norm(q_new - tree_a.nodes[i_near])))
            # cheapest collision-free candidate wins; sorted so the first
            # free one is optimal
            cand = sorted(
                (tree_a.cost[j] + float(np.linalg.norm(q_new - tree_a.nodes[j])), int(j))
                for j in near_ids)
            for c, j in cand:
                if c >= parent_cost:
                    break
                if segment_free(arm, obstacles, tree_a.nodes[j], q_new, res):
                    parent, parent_cost = j, c
                    break
            i_new = tree_a.add(q_new, parent, parent_cost)
            for j in near_ids:
                c = parent_cost + float(np.linalg.norm(q_new - tree_a.nodes[j]))
                if c < tree_a.cost[j] and segment_free(arm, obstacles, q_new, tree_a.nodes[j], res):
                    tree_a.parent[j] = i_new
                    tree_a.cost[j] = c

            # try to connect the other tree to the new node
            i_other, d_other = tree_b.nearest(q_new)
            if d_other <= max(cfg.connect_tolerance, cfg.rewire_radius) and segment_free(
                    arm, obstacles, tree_b.nodes[i_other], q_new, res):
                part_a = tree_a.path_to_root(i_new)[::-1]      # root_a .. q_new
                part_b = tree_b.path_to_root(i_other)          # q_other .. root_b
                configs = part_a + part_b
                if not a_is_start:
                    configs = configs[::-1]
                configs = np.asarray(configs)
                cost = float(np.linalg.norm(np.diff(configs, axis=0), axis=1).sum())
                if best is None or cost < best[0]:
                    best = (cost, configs)
                if connected_at is None:
                    connected_at = iteration

        tree_a, tree_b = tree_b, tree_a
        a_is_start = not a_is_start

    if best is None:
        return None
    return Path(best[1], best[0])


def shortcut_smooth(path, arm, obstacles, iterations=100, seed=0,
                    resolution=0.02):
    """Random shortcutting: repeatedly replace sub-paths by straight
    segments when collision-free. Cost never increases; endpoints fixed."""
    configs = [c.copy() for c in path.configs]
    rng = np.random.default_rng(seed)
    for _ in range(iterations):
        if len(configs) < 3:
            break
        i = int(rng.integers(0, len(configs) - 2))
        j = int(rng.integers(i + 2, len(configs)))
        if segment_free(arm, obstacles, configs[i], configs[j], resolution):
            configs = configs[:i + 1] + configs[j:]
    configs = np.asarray(configs)
    cost = float(np.linalg.norm(np.diff(configs, axis=0), axis=1).sum()) if len(configs) > 1 else 0.0
    return Path(configs, min(cost, path.cost))


def resample_path(path, spacing):
    """Evenly respace a path at the given joint arc-length interval,
    keeping both endpoints."""
    configs = path.configs
    if len(configs) < 2:
        return Path(configs.copy(), 0.0)
    seg = np.linalg.norm(np.diff(configs, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    n = max(2, int(np.ceil(total / spacing)) + 1)
    ss = np.linspace(0.0, total, n)
    out = np.empty((n, configs.shape[1]))
    for d in range(configs.shape[1]):
        out[:, d] = np.interp(ss, cum, configs[:, d])
    cost = float(np.linalg.norm(np.diff(out, axis=0), axis=1).sum())
    return Path(out, cost)


def config_at_arclength(path, s):
    """Interpolated config at joint arc length s from the path start."""
    configs = path.configs
    if len(configs) < 2:
        return configs[0].copy()
    seg = np.linalg.norm(np.diff(configs, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    s = float(np.clip(s, 0.0, cum[-1]))
    out = np.empty(configs.shape[1])
    for d in range(configs.shape[1]):
        out[d] = np.interp(s, cum, configs[:, d])
    return out


def project_to_path(path, q):
    """Arc-length position of the closest point on the path to config q."""
    configs = path.configs
    if len(configs) < 2:
        return 0.0
    best_s, best_d = 0.0, np.inf
    run = 0.0
    for a, b in zip(configs[:-1], configs[1:]):
        ab = b - a
        denom = float(ab @ ab)
        t = 0.0 if denom == 0.0 else float(np.clip((q - a) @ ab / denom, 0.0, 1.0))
        p = a + t * ab
        d = float(np.linalg.norm(q - p))
        seg_len = float(np.sqrt(denom))
        if d < best_d:
            best_d = d
            best_s = run + t * seg_len
        run += seg_len
    return best_s


def extract_waypoints(path, current_angles, arm, k=5, spacing=0.15,
                      frame="joint"):
    """K relative waypoints ahead of the current config along the path.

    The current config is projected onto the path; waypoints sit at
    arc-length multiples of spacing beyond the projection, clamped to the
    final config once the path runs out. Offsets are relative to the
    current state: joint-angle deltas, or end-effector deltas via FK.
    """
    current_angles = np.asarray(current_angles, dtype=np.float64)
    s0 = project_to_path(path, current_angles)
    targets = [config_at_arclength(path, s0 + (i + 1) * spacing) for i in range(k)]
    if frame == "joint":
        offsets = np.asarray(targets) - current_angles
    elif frame == "cartesian":
        ee0 = end_effector(arm, current_angles)
        offsets = np.asarray([end_effector(arm, t) - ee0 for t in targets])
    else:
        raise ValueError(f"unknown frame {frame!r}")
    return WaypointSet(offsets, frame)


def goal_joint_config(arm, obstacles, goal_point, rng, attempts=8):
    """Collision-free joint configuration whose end effector sits on a
    workspace goal point; None when IK or clearance fails repeatedly."""
    for _ in range(attempts):
        q = ik_solve(arm, goal_point, rng)
        if q is None:
            return None
        if not check_collision(arm, q, obstacles)[0]:
            return q
    return None
