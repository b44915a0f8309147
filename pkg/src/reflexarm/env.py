"""Velocity-controlled planar-arm MDP.

Observation = (joint angles, joint velocities, live waypoint offsets,
scene latent). The reward combines sparse task terms with shaping against
the polyline of the current waypoint set, so a policy is rewarded for
staying near and advancing along the short-horizon path the generator
emits each step. Scene edits mid-episode flow into the next render,
latent, and waypoint query without resetting the episode.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .kinematics import (ArmModel, JointConfig, check_collision,
                         end_effector, ik_step, integrate, within_limits)
from .planner import (PlannerConfig, WaypointSet, goal_joint_config,
                      plan_birrt_star, shortcut_smooth)
from .real2sim import translate
from .scenegen import (Obstacle, RandomizationSpec, Scene, SceneRenderer,
                       SensorParams, sample_scene)
from .vae import encode
from .waygen import predict_waypoints

log = logging.getLogger(__name__)

TASKS = ("reach", "shelf_pick")

# discrete end-effector start cells for the pick-style task (IK'd at reset)
SHELF_START_POINTS = ((0.30, 0.45), (0.45, 0.45), (0.60, 0.45),
                      (0.30, 0.60), (0.45, 0.60), (0.60, 0.60))
# single fixed goal for the motion-quality comparison
QUALITY_GOAL = (0.4, -0.2)


@dataclass(frozen=True)
class RewardCoeffs:
    """Per-term weights. Signs follow the semantics d_path >= 0 (deviation,
    penalized) and n_progress forward-positive (rewarded); literal_table()
    keeps the source table's printed signs selectable."""
    collision: float = -0.1
    goal: float = 1.0
    accel: float = -0.0001
    path_dist: float = -0.1
    progress: float = 1.0

    def __post_init__(self):
        vals = (self.collision, self.goal, self.accel, self.path_dist,
                self.progress)
        if not all(np.isfinite(v) for v in vals):
            raise ValueError("reward coefficients must be finite")

    @staticmethod
    def literal_table():
        return RewardCoeffs(path_dist=0.1, progress=-1.0)


@dataclass(frozen=True)
class TaskSpec:
    """Task preset: waypoint frame plus scene randomization ranges."""
    name: str = "reach"
    n_obs_choices: tuple = None

    def __post_init__(self):
        if self.name not in TASKS:
            raise ValueError(f"task must be one of {TASKS}, got {self.name!r}")

    @property
    def frame(self):
        return "cartesian" if self.name == "reach" else "joint"

    def randomization(self):
        if self.name == "reach":
            choices = self.n_obs_choices or (0, 1, 2)
            return RandomizationSpec(n_obs_choices=tuple(choices))
        choices = self.n_obs_choices or (0, 1)
        return RandomizationSpec(goal_x=(0.3, 0.7), goal_y=(-0.7, -0.3),
                                 n_obs_choices=tuple(choices),
                                 start_points=SHELF_START_POINTS)


@dataclass(frozen=True)
class CurriculumConfig:
    enabled: bool = True
    max_teleport_steps: int = 15

    def __post_init__(self):
        if self.max_teleport_steps < 0:
            raise ValueError("max_teleport_steps must be >= 0")


@dataclass(frozen=True)
class EnvConfig:
    dt: float = 0.01
    horizon: int = 300
    d_goal: float = 0.05
    k: int = 5
    spacing: float = 0.15
    image_style: str = "sim"
    terminate_on_collision: bool = False

    def __post_init__(self):
        if self.dt <= 0 or self.horizon <= 0 or self.d_goal <= 0:
            raise ValueError("dt, horizon, d_goal must be positive")
        if self.k <= 0 or self.spacing <= 0:
            raise ValueError("k and spacing must be positive")
        if self.image_style not in ("sim", "real"):
            raise ValueError("image_style must be 'sim' or 'real'")


@dataclass
class EnvState:
    joints: JointConfig
    scene: Scene
    waypoints: WaypointSet          # None when running without a generator
    latent: np.ndarray
    step_count: int
    reference_path: object          # planner Path; kept for diagnostics only
    last_progress_mark: float       # arc of the robot's projection onto its
                                    # current waypoint polyline
    seed: int = 0                   # episode noise key for real-style renders


@dataclass
class StepResult:
    next_state: EnvState
    reward: float
    done: bool
    info: dict


def waypoint_polyline(point, waypoints):
    """De-relativized polyline vertices: (K, D) = point + offsets."""
    return np.asarray(point, dtype=np.float64) + waypoints.offsets


def polyline_project(vertices, p):
    """(arc_length, distance) of the closest point on a polyline to p.

    Distance is always to the polyline proper. When the closest point is
    the polyline's start, the arc is the signed projection onto the first
    directed segment's supporting line (<= 0): generated waypoint windows
    sit ahead of the robot, so motion toward the window must register as
    arc progress rather than clamp to zero.
    """
    p = np.asarray(p, dtype=np.float64)
    if len(vertices) == 1:
        return 0.0, float(np.linalg.norm(p - vertices[0]))
    best_s, best_d, run = 0.0, np.inf, 0.0
    at_start = False
    for a, b in zip(vertices[:-1], vertices[1:]):
        ab = b - a
        denom = float(ab @ ab)
        t = 0.0 if denom == 0.0 else float(np.clip((p - a) @ ab / denom, 0.0, 1.0))
        d = float(np.linalg.norm(p - (a + t * ab)))
        if d < best_d:
            best_d, best_s = d, run + t * np.sqrt(denom)
            at_start = run == 0.0 and t == 0.0
        run += float(np.sqrt(denom))
    if at_start:
        for a, b in zip(vertices[:-1], vertices[1:]):
            direction = b - a
            norm = float(np.linalg.norm(direction))
            if norm > 0.0:
                best_s = float((p - vertices[0]) @ (direction / norm))
                break
    return best_s, best_d


class ArmEnv:
    """Owns the frozen models and scene machinery; states are explicit, so
    step/reward are pure functions of (state, action)."""

    def __init__(self, arm=None, task=TaskSpec(), waygen=None, vae=None,
                 ced=None, planner_cfg=None, sensor=None,
                 coeffs=RewardCoeffs(), curriculum=CurriculumConfig(),
                 cfg=EnvConfig()):
        self.arm = arm or ArmModel()
        self.task = task
        self.waygen = waygen
        self.vae = vae
        self.ced = ced
        if waygen is not None and vae is None and waygen.latent_dim > 0:
            raise ValueError("a latent-conditioned waypoint generator needs "
                             "an image encoder")
        self.planner_cfg = planner_cfg or PlannerConfig()
        self.sensor = sensor or SensorParams()
        self.coeffs = coeffs
        self.curriculum = curriculum
        self.cfg = cfg
        self.renderer = SceneRenderer(self.arm, self.sensor)
        self._static = None          # (scene, height field) render cache

    # ------------------------------------------------------------------
    # observation machinery

    def task_point(self, angles):
        """The point shaping and waypoints live on: ee or joint vector."""
        if self.task.frame == "cartesian":
            return end_effector(self.arm, angles)
        return np.asarray(angles, dtype=np.float64)

    def _render_latent(self, scene, angles, noise_key):
        if self.vae is None:
            return np.zeros(0)
        if self._static is not None and self._static[0] is scene:
            static = self._static[1]
        else:
            static = self.renderer.static_heights(scene)
            self._static = (scene, static)
        img = self.renderer.render(scene, angles, self.cfg.image_style,
                                   seed=noise_key, static=static)
        if self.ced is not None:
            img = translate(self.ced, img)
        return encode(self.vae, img, eps=0.0)[0]

    def _query(self, scene, angles, noise_key):
        """(latent, waypoints, progress_mark) at a configuration."""
        z = self._render_latent(scene, angles, noise_key)
        if self.waygen is None:
            return z, None, 0.0
        point = self.task_point(angles)
        w = predict_waypoints(self.waygen, z, point)
        mark, _ = polyline_project(waypoint_polyline(point, w), point)
        return z, w, mark

    def observe(self, state, include_waypoints=True):
        """Flat vector, fixed order: angles, velocities, waypoint offsets
        (row-major), latent."""
        parts = [state.joints.angles, state.joints.velocities]
        if include_waypoints and state.waypoints is not None:
            parts.append(state.waypoints.offsets.ravel())
        parts.append(state.latent)
        return np.concatenate(parts).astype(np.float64)

    # ------------------------------------------------------------------
    # episode lifecycle

    def reset(self, seed=0, max_attempts=20):
        """Sample scene + start, plan the reference path, optionally
        fast-forward along generated waypoints (teleport curriculum).
        Teleporting into a collision re-samples the scene."""
        rng = np.random.default_rng(seed)
        for attempt in range(max_attempts):
            scene_seed = seed * 1000003 + attempt
            try:
                scene, start = sample_scene(self.arm, self.task.randomization(),
                                            scene_seed)
            except Exception as exc:
                log.info("scene sampling failed (%s), retrying", exc)
                continue
            goal_q = goal_joint_config(self.arm, scene.obstacles, scene.goal,
                                       np.random.default_rng(scene_seed))
            if goal_q is None:
                log.info("no collision-free goal configuration, resampling")
                continue
            path = plan_birrt_star(self.arm, scene.obstacles, start.angles,
                                   goal_q, self.planner_cfg, seed=scene_seed)
            if path is None:
                log.info("planning failed, resampling scene")
                continue
            path = shortcut_smooth(path, self.arm, scene.obstacles,
                                   seed=scene_seed)

            n_tele = 0
            if self.curriculum.enabled and self.waygen is not None:
                n_tele = int(rng.integers(0, self.curriculum.max_teleport_steps + 1))
            angles = self._teleport(scene, start.angles, n_tele, seed)
            if angles is None:
                log.info("teleport hit a collision, resampling scene")
                continue

            z, w, mark = self._query(scene, angles, noise_key=seed * 10007)
            return EnvState(JointConfig(angles, np.zeros_like(angles)), scene,
                            w, z, 0, path, mark, seed)
        raise RuntimeError(f"no valid episode after {max_attempts} attempts")

    def _teleport(self, scene, angles, n, seed):
        """Fast-forward: n times, re-query waypoints and jump to the closest
        one. None when a jump leaves the freespace."""
        angles = np.asarray(angles, dtype=np.float64)
        for i in range(n):
            # offset keeps the sensor-noise stream non-negative and clear of
            # the per-step re-query keys (seed * 10007 + step_count)
            z, w, _ = self._query(scene, angles,
                                  noise_key=seed * 10007 + 9999991 + i)
            closest = w.offsets[0]
            if self.task.frame == "joint":
                nxt = angles + closest
            else:
                target = end_effector(self.arm, angles) + closest
                nxt, err = ik_step(self.arm, angles, target)
                if err > self.cfg.d_goal:
                    return None
            if not within_limits(self.arm, nxt):
                return None
            if check_collision(self.arm, nxt, scene.obstacles)[0]:
                return None
            angles = nxt
        return angles

    # ------------------------------------------------------------------
    # dynamics and reward

    def _evaluate(self, state, action, waypoints):
        """Everything one transition produces; pure in (state, action)."""
        action = np.asarray(action, dtype=np.float64)
        if action.shape != state.joints.angles.shape:
            raise ValueError(f"action shape {action.shape} != joint count")
        nxt, _ = integrate(self.arm, state.joints, action, self.cfg.dt)
        accel = float(np.linalg.norm(
            (nxt.velocities - state.joints.velocities) / self.cfg.dt))

        violation = not within_limits(self.arm, nxt.angles)
        collided = bool(check_collision(self.arm, nxt.angles,
                                        state.scene.obstacles)[0])
        ee = end_effector(self.arm, nxt.angles)
        reached = (not violation
                   and float(np.linalg.norm(ee - state.scene.goal)) <= self.cfg.d_goal)

        d_path, progress = 0.0, 0.0
        if waypoints is not None:
            before = self.task_point(state.joints.angles)
            after = self.task_point(nxt.angles)
            poly = waypoint_polyline(before, waypoints)
            s_pre, _ = polyline_project(poly, before)
            s_post, d_path = polyline_project(poly, after)
            progress = s_post - s_pre

        c = self.coeffs
        f = (c.collision * float(collided) + c.goal * float(reached)
             + c.accel * accel)
        h = c.path_dist * d_path + c.progress * progress
        return {"joints": nxt, "f": f, "h": h, "accel_norm": accel,
                "collided": collided, "reached_goal": reached,
                "limit_violation": violation, "d_path": d_path,
                "n_progress": progress}

    def reward_terms(self, state, action, waypoints=None):
        """(task_terms, shaping_terms, total) for one transition."""
        if waypoints is None:
            waypoints = state.waypoints
        ev = self._evaluate(state, action, waypoints)
        return ev["f"], ev["h"], ev["f"] + ev["h"]

    def step(self, state, action):
        ev = self._evaluate(state, action, state.waypoints)
        nxt = ev["joints"]
        count = state.step_count + 1
        timeout = (count >= self.cfg.horizon
                   and not (ev["reached_goal"] or ev["limit_violation"]))
        done = ev["reached_goal"] or ev["limit_violation"] or timeout
        if self.cfg.terminate_on_collision and ev["collided"]:
            done = True

        z, w, mark = self._query(state.scene, nxt.angles,
                                 noise_key=state.seed * 10007 + count)
        next_state = EnvState(nxt, state.scene, w, z, count,
                              state.reference_path, mark, state.seed)
        info = {"collided": ev["collided"], "reached_goal": ev["reached_goal"],
                "limit_violation": ev["limit_violation"], "timeout": timeout,
                "d_path": ev["d_path"], "n_progress": ev["n_progress"],
                "accel_norm": ev["accel_norm"]}
        return StepResult(next_state, ev["f"] + ev["h"], done, info)

    # ------------------------------------------------------------------
    # live scene edits

    def mutate_scene(self, state, edit):
        """Apply one edit dict mid-episode; the new state re-renders and
        re-queries waypoints at the current configuration. The reference
        path is left as planned (diagnostics only). Invalid placements
        raise ValueError and leave the state untouched."""
        op = edit.get("op")
        scene = state.scene
        if op == "set_goal":
            new_scene = Scene(list(scene.obstacles),
                              np.asarray(edit["point"], dtype=np.float64),
                              scene.workspace)
        elif op == "move_obstacle":
            obs = [replace(ob, center=tuple(edit["point"]))
                   if ob.id == edit["id"] else ob for ob in scene.obstacles]
            if all(ob.id != edit["id"] for ob in scene.obstacles):
                raise ValueError(f"no obstacle with id {edit['id']}")
            new_scene = Scene(obs, scene.goal.copy(), scene.workspace)
        elif op == "add_obstacle":
            next_id = 1 + max((ob.id for ob in scene.obstacles), default=-1)
            ob = Obstacle(edit["kind"], tuple(edit["center"]),
                          radius=float(edit.get("radius", 0.0)),
                          width=float(edit.get("width", 0.0)),
                          height=float(edit.get("height", 0.0)), id=next_id)
            new_scene = Scene(list(scene.obstacles) + [ob], scene.goal.copy(),
                              scene.workspace)
        elif op == "remove_obstacle":
            obs = [ob for ob in scene.obstacles if ob.id != edit["id"]]
            if len(obs) == len(scene.obstacles):
                raise ValueError(f"no obstacle with id {edit['id']}")
            new_scene = Scene(obs, scene.goal.copy(), scene.workspace)
        else:
            raise ValueError(f"unknown scene edit {op!r}")

        angles = state.joints.angles
        z, w, mark = self._query(new_scene, angles,
                                 noise_key=state.seed * 10007 + state.step_count)
        return EnvState(state.joints, new_scene, w, z, state.step_count,
                        state.reference_path, mark, state.seed)
