"""Planar n-link arm: forward kinematics, velocity integration, joint
limits, capsule collision geometry, and damped-least-squares IK.

All functions are pure; angles and velocities are float64 vectors in
radians / rad/s, positions are meters.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ArmModel:
    link_lengths: tuple = (0.4, 0.3, 0.2)
    joint_limits: tuple = ((-np.pi, np.pi), (-np.pi, np.pi), (-np.pi, np.pi))
    base: tuple = (0.0, 0.0)
    max_velocity: float = 1.0
    link_radius: float = 0.02

    def __post_init__(self):
        if len(self.link_lengths) != len(self.joint_limits):
            raise ValueError("one joint limit pair per link required")
        if any(l <= 0 for l in self.link_lengths):
            raise ValueError("link lengths must be positive")
        if any(lo >= hi for lo, hi in self.joint_limits):
            raise ValueError("joint limits need min < max")
        if self.max_velocity <= 0:
            raise ValueError("max_velocity must be positive")
        if self.link_radius <= 0:
            raise ValueError("link_radius must be positive")

    @property
    def n_joints(self):
        return len(self.link_lengths)

    @property
    def reach(self):
        return float(sum(self.link_lengths))

    def limits_lo(self):
        return np.array([lo for lo, _ in self.joint_limits])

    def limits_hi(self):
        return np.array([hi for _, hi in self.joint_limits])


@dataclass
class JointConfig:
    angles: np.ndarray
    velocities: np.ndarray = None

    def __post_init__(self):
        self.angles = np.asarray(self.angles, dtype=np.float64)
        if self.velocities is None:
            self.velocities = np.zeros_like(self.angles)
        else:
            self.velocities = np.asarray(self.velocities, dtype=np.float64)
        if self.angles.shape != self.velocities.shape:
            raise ValueError("angles and velocities must have the same shape")
        if not (np.isfinite(self.angles).all() and np.isfinite(self.velocities).all()):
            raise ValueError("joint state must be finite")


def forward_kinematics(arm, angles):
    """Joint positions, base first. Returns (points (n+1, 2), ee (2,))."""
    angles = np.asarray(angles, dtype=np.float64)
    if angles.shape != (arm.n_joints,):
        raise ValueError(f"expected {arm.n_joints} angles, got shape {angles.shape}")
    points = np.empty((arm.n_joints + 1, 2))
    points[0] = arm.base
    heading = 0.0
    for i, length in enumerate(arm.link_lengths):
        heading += angles[i]
        points[i + 1] = points[i] + length * np.array([np.cos(heading), np.sin(heading)])
    return points, points[-1].copy()


def end_effector(arm, angles):
    return forward_kinematics(arm, angles)[1]


def within_limits(arm, angles):
    """Closed-interval joint limit test."""
    angles = np.asarray(angles, dtype=np.float64)
    return bool(np.all(angles >= arm.limits_lo()) and np.all(angles <= arm.limits_hi()))


def clamp_action(arm, action):
    """Clip a velocity command to the arm's bounds; reports whether it clipped."""
    action = np.asarray(action, dtype=np.float64)
    clipped = np.clip(action, -arm.max_velocity, arm.max_velocity)
    return clipped, bool(np.any(clipped != action))


def integrate(arm, config, action, dt):
    """One Euler step of velocity control: theta' = theta + a*dt.

    Out-of-bound actions are clamped first and flagged. The returned
    velocities are the commanded (possibly clamped) action.
    """
    action, clamped = clamp_action(arm, action)
    next_angles = config.angles + action * dt
    return JointConfig(next_angles, action.copy()), clamped


# ---------------------------------------------------------------------------
# geometry primitives

def segment_point_distance(a, b, p):
    """Distance from point p to segment ab."""
    a, b, p = (np.asarray(v, dtype=np.float64) for v in (a, b, p))
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        return float(np.linalg.norm(p - a))
    t = np.clip((p - a) @ ab / denom, 0.0, 1.0)
    return float(np.linalg.norm(p - (a + t * ab)))


def _orient(a, b, c):
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def segments_intersect(a0, a1, b0, b1):
    d1, d2 = _orient(b0, b1, a0), _orient(b0, b1, a1)
    d3, d4 = _orient(a0, a1, b0), _orient(a0, a1, b1)
    if ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)):
        return True
    # collinear overlaps count as intersection
    def on(a, b, c):
        return (min(a[0], b[0]) <= c[0] <= max(a[0], b[0])
                and min(a[1], b[1]) <= c[1] <= max(a[1], b[1]))
    if d1 == 0 and on(b0, b1, a0):
        return True
    if d2 == 0 and on(b0, b1, a1):
        return True
    if d3 == 0 and on(a0, a1, b0):
        return True
    if d4 == 0 and on(a0, a1, b1):
        return True
    return False


def segment_segment_distance(a0, a1, b0, b1):
    a0, a1, b0, b1 = (np.asarray(v, dtype=np.float64) for v in (a0, a1, b0, b1))
    if segments_intersect(a0, a1, b0, b1):
        return 0.0
    return min(segment_point_distance(a0, a1, b0),
               segment_point_distance(a0, a1, b1),
               segment_point_distance(b0, b1, a0),
               segment_point_distance(b0, b1, a1))


def rect_corners(center, width, height):
    cx, cy = center
    hw, hh = width / 2.0, height / 2.0
    return np.array([[cx - hw, cy - hh], [cx + hw, cy - hh],
                     [cx + hw, cy + hh], [cx - hw, cy + hh]])


def point_in_rect(p, center, width, height):
    return (abs(p[0] - center[0]) <= width / 2.0
            and abs(p[1] - center[1]) <= height / 2.0)


def segment_rect_distance(a, b, center, width, height):
    """Distance from segment ab to an axis-aligned rectangle (0 if touching)."""
    if point_in_rect(a, center, width, height) or point_in_rect(b, center, width, height):
        return 0.0
    corners = rect_corners(center, width, height)
    best = np.inf
    for i in range(4):
        d = segment_segment_distance(a, b, corners[i], corners[(i + 1) % 4])
        if d == 0.0:
            return 0.0
        best = min(best, d)
    return best


def segment_circle_distance(a, b, center, radius):
    """Distance from segment ab to a disc boundary (negative inside)."""
    return segment_point_distance(a, b, center) - radius


def segment_obstacle_distance(a, b, obstacle):
    """Distance from segment ab to one obstacle's boundary (<= 0 when touching)."""
    if obstacle.kind == "circle":
        return segment_circle_distance(a, b, obstacle.center, obstacle.radius)
    if obstacle.kind == "rect":
        return segment_rect_distance(a, b, obstacle.center, obstacle.width, obstacle.height)
    raise ValueError(f"unknown obstacle kind {obstacle.kind!r}")


def check_collision(arm, angles, obstacles):
    """Capsule-link collision test against a list of obstacles.

    Returns (collided, clearance) where clearance is the minimum over
    link/obstacle pairs of boundary distance minus link_radius; negative
    when penetrating, +inf for an empty obstacle list.
    """
    points, _ = forward_kinematics(arm, angles)
    clearance = np.inf
    for i in range(arm.n_joints):
        a, b = points[i], points[i + 1]
        for ob in obstacles:
            d = segment_obstacle_distance(a, b, ob) - arm.link_radius
            if d < clearance:
                clearance = d
    return bool(clearance <= 0.0), float(clearance)


# ---------------------------------------------------------------------------
# batched variants (planner hot path): same semantics as the scalar
# functions above, vectorized over N configurations

def forward_kinematics_batch(arm, angles):
    """Joint positions for a batch of configs. (N, n) -> (N, n+1, 2)."""
    angles = np.asarray(angles, dtype=np.float64)
    heading = np.cumsum(angles, axis=1)
    steps = (np.stack([np.cos(heading), np.sin(heading)], axis=2)
             * np.asarray(arm.link_lengths)[None, :, None])
    points = np.empty((len(angles), arm.n_joints + 1, 2))
    points[:, 0] = arm.base
    points[:, 1:] = np.asarray(arm.base) + np.cumsum(steps, axis=1)
    return points


def _segment_segment_distance_batch(a0, a1, b0, b1):
    """Min distances between N segments (a0, a1) and one segment (b0, b1).

    Clamped closest-point solve; intersecting pairs yield 0 because the
    unconstrained minimizer of the squared distance is the crossing point.
    """
    d1 = a1 - a0
    d2 = np.asarray(b1, dtype=np.float64) - np.asarray(b0, dtype=np.float64)
    r = a0 - np.asarray(b0, dtype=np.float64)
    a = np.einsum("ij,ij->i", d1, d1)
    e = float(d2 @ d2)
    f = r @ d2
    c = np.einsum("ij,ij->i", d1, r)
    b = d1 @ d2
    denom = a * e - b * b
    s = np.where(denom > 1e-16, (b * f - c * e) / np.where(denom > 1e-16, denom, 1.0), 0.0)
    s = np.clip(s, 0.0, 1.0)
    t = (b * s + f) / e if e > 1e-16 else np.zeros_like(s)
    t_cl = np.clip(t, 0.0, 1.0)
    redo = t != t_cl
    s = np.where(redo,
                 np.clip((b * t_cl - c) / np.where(a > 1e-16, a, 1.0), 0.0, 1.0), s)
    pa = a0 + s[:, None] * d1
    pb = np.asarray(b0, dtype=np.float64)[None, :] + t_cl[:, None] * d2[None, :]
    return np.linalg.norm(pa - pb, axis=1)


def segment_rect_distance_batch(p0, p1, center, width, height):
    cx, cy = center
    hw, hh = width / 2.0, height / 2.0
    inside = (((np.abs(p0[:, 0] - cx) <= hw) & (np.abs(p0[:, 1] - cy) <= hh))
              | ((np.abs(p1[:, 0] - cx) <= hw) & (np.abs(p1[:, 1] - cy) <= hh)))
    corners = rect_corners(center, width, height)
    d = np.full(len(p0), np.inf)
    for i in range(4):
        np.minimum(d, _segment_segment_distance_batch(
            p0, p1, corners[i], corners[(i + 1) % 4]), out=d)
    d[inside] = 0.0
    return d


def segment_circle_distance_batch(p0, p1, center, radius):
    d1 = p1 - p0
    denom = np.einsum("ij,ij->i", d1, d1)
    c = np.asarray(center, dtype=np.float64)
    t = np.where(denom > 0.0,
                 np.einsum("ij,ij->i", c[None, :] - p0, d1) / np.where(denom > 0.0, denom, 1.0),
                 0.0)
    t = np.clip(t, 0.0, 1.0)
    p = p0 + t[:, None] * d1
    return np.linalg.norm(p - c[None, :], axis=1) - radius


def min_clearance_batch(arm, angles, obstacles):
    """Per-config minimum clearance over all link/obstacle pairs (N,)."""
    angles = np.asarray(angles, dtype=np.float64)
    points = forward_kinematics_batch(arm, angles)
    clearance = np.full(len(angles), np.inf)
    for i in range(arm.n_joints):
        p0, p1 = points[:, i], points[:, i + 1]
        for ob in obstacles:
            if ob.kind == "circle":
                d = segment_circle_distance_batch(p0, p1, ob.center, ob.radius)
            else:
                d = segment_rect_distance_batch(p0, p1, ob.center, ob.width, ob.height)
            np.minimum(clearance, d - arm.link_radius, out=clearance)
    return clearance


def point_clear(point, obstacles, margin=0.0):
    """True when a point is at least margin away from every obstacle."""
    p = np.asarray(point, dtype=np.float64)
    for ob in obstacles:
        if ob.kind == "circle":
            d = float(np.linalg.norm(p - ob.center)) - ob.radius
        else:
            if point_in_rect(p, ob.center, ob.width, ob.height):
                return False
            d = segment_rect_distance(p, p, ob.center, ob.width, ob.height)
        if d <= margin:
            return False
    return True


# ---------------------------------------------------------------------------
# inverse kinematics

def jacobian(arm, angles):
    """2 x n positional Jacobian of the end effector."""
    points, ee = forward_kinematics(arm, angles)
    jac = np.empty((2, arm.n_joints))
    for j in range(arm.n_joints):
        r = ee - points[j]
        jac[0, j] = -r[1]
        jac[1, j] = r[0]
    return jac


def ik_step(arm, angles, target, iterations=50, damping=0.1, tol=1e-5):
    """Damped-least-squares refinement from a single start configuration.

    Returns (angles, error) with angles clipped into joint limits.
    """
    q = np.asarray(angles, dtype=np.float64).copy()
    lo, hi = arm.limits_lo(), arm.limits_hi()
    target = np.asarray(target, dtype=np.float64)
    for _ in range(iterations):
        ee = end_effector(arm, q)
        err = target - ee
        if float(np.linalg.norm(err)) < tol:
            break
        jac = jacobian(arm, q)
        gram = jac @ jac.T + (damping ** 2) * np.eye(2)
        q += jac.T @ np.linalg.solve(gram, err)
        np.clip(q, lo, hi, out=q)
    return q, float(np.linalg.norm(target - end_effector(arm, q)))


def ik_solve(arm, target, rng, restarts=16, iterations=100, tol=1e-4):
    """Damped-least-squares IK with random restarts.

    Returns the best in-limits solution's angles, or None when every
    restart misses the tolerance (e.g. target outside reach).
    """
    target = np.asarray(target, dtype=np.float64)
    if float(np.linalg.norm(target - np.asarray(arm.base))) > arm.reach:
        return None
    lo, hi = arm.limits_lo(), arm.limits_hi()
    best_q, best_err = None, np.inf
    for k in range(restarts):
        q0 = np.zeros(arm.n_joints) if k == 0 else rng.uniform(lo, hi)
        q, err = ik_step(arm, q0, target, iterations=iterations, tol=tol)
        if err < best_err:
            best_q, best_err = q, err
        if best_err < tol:
            break
    if best_err >= tol:
        return None
    return best_q
