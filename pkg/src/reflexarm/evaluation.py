"""Evaluation harnesses: scripted mid-episode scene changes, the
waypoint-follow protocol (position commands, no policy), success/error
matrices over data regimes, motion-quality comparison against a PD path
follower, and CSV/JSON/Markdown report writers.

An episode counts as a success only when all three hold: no collision at
any step, the final end-effector lands within the goal tolerance, and the
step count stays within the horizon. The harness asserts that conjunction
on every episode it scores.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .env import QUALITY_GOAL, SHELF_START_POINTS, EnvState
from .kinematics import (JointConfig, check_collision, end_effector, ik_solve,
                         ik_step, integrate, point_clear, within_limits)
from .planner import (config_at_arclength, extract_waypoints,
                      goal_joint_config, plan_birrt_star, project_to_path,
                      shortcut_smooth)
from .scenegen import GOAL_CLEAR_MARGIN, REACH_MARGIN, Scene, sample_scene

PRESET_NAMES = ("moving_goal", "random_obstacles")


# ---------------------------------------------------------------------------
# scenario scripts

@dataclass(frozen=True)
class ScenarioScript:
    """Ordered (step, edit) pairs applied before the action at each step.

    Edits are scene-mutation dicts, plus two harness-level ops that resolve
    against the live scene at run time: "set_goal_random" (seeded valid goal
    draw) and "relocate" (resample obstacle and goal placement together).
    """
    events: tuple = ()

    def __post_init__(self):
        last = -1
        for step, edit in self.events:
            if step < 0:
                raise ValueError("script steps must be >= 0")
            if step <= last:
                raise ValueError("script steps must be strictly increasing")
            if "op" not in edit:
                raise ValueError("script edits need an 'op' key")
            last = step


def moving_goal_script(seed, horizon):
    """2-4 goal jumps scheduled in the early part of the episode."""
    rng = np.random.default_rng(seed)
    jumps = int(rng.integers(2, 5))
    lo, hi = 5, max(6 + jumps, (3 * horizon) // 5)
    steps = np.sort(rng.choice(np.arange(lo, hi), size=jumps, replace=False))
    return ScenarioScript(tuple(
        (int(t), {"op": "set_goal_random", "seed": int(rng.integers(2 ** 31))})
        for t in steps))


def random_obstacles_script(seed, horizon):
    """One mid-episode event that relocates every obstacle and the goal."""
    rng = np.random.default_rng(seed)
    t = int(rng.integers(max(2, horizon // 4), max(3, horizon // 2)))
    return ScenarioScript(((t, {"op": "relocate",
                                "seed": int(rng.integers(2 ** 31))}),))


def make_scenario(preset, seed, horizon):
    if preset is None:
        return None
    if preset == "moving_goal":
        return moving_goal_script(seed, horizon)
    if preset == "random_obstacles":
        return random_obstacles_script(seed, horizon)
    raise ValueError(f"preset must be one of {PRESET_NAMES}, got {preset!r}")


def _random_valid_goal(env, scene, rng):
    spec = env.task.randomization()
    base = np.asarray(env.arm.base)
    for _ in range(200):
        goal = np.array([rng.uniform(*spec.goal_x), rng.uniform(*spec.goal_y)])
        if np.linalg.norm(goal - base) > env.arm.reach - REACH_MARGIN:
            continue
        if point_clear(goal, scene.obstacles, margin=GOAL_CLEAR_MARGIN):
            return goal
    raise RuntimeError("no clear goal position found in 200 draws")


def _relocate(env, state, seed):
    """Resample obstacle+goal placement, keeping the robot clear of the new
    obstacles, and apply it as a chain of scene edits."""
    spec = replace(env.task.randomization(),
                   n_obs_choices=(len(state.scene.obstacles),))
    fresh = None
    for j in range(20):
        candidate, _ = sample_scene(env.arm, spec, seed + j)
        if not check_collision(env.arm, state.joints.angles,
                               candidate.obstacles)[0]:
            fresh = candidate
            break
    if fresh is None:
        raise RuntimeError("could not relocate the scene off the robot")
    for ob in list(state.scene.obstacles):
        state = env.mutate_scene(state, {"op": "remove_obstacle", "id": ob.id})
    state = env.mutate_scene(state, {"op": "set_goal", "point": fresh.goal})
    for ob in fresh.obstacles:
        state = env.mutate_scene(state, {
            "op": "add_obstacle", "kind": ob.kind, "center": ob.center,
            "radius": ob.radius, "width": ob.width, "height": ob.height})
    return state


def apply_edit(env, state, edit):
    op = edit["op"]
    if op == "set_goal_random":
        rng = np.random.default_rng(edit["seed"])
        goal = _random_valid_goal(env, state.scene, rng)
        return env.mutate_scene(state, {"op": "set_goal", "point": goal})
    if op == "relocate":
        return _relocate(env, state, edit["seed"])
    return env.mutate_scene(state, edit)


# ---------------------------------------------------------------------------
# episodes

@dataclass(frozen=True)
class EpisodeResult:
    success: bool
    steps: int
    time_s: float
    mean_accel: float
    collided: bool
    reached: bool
    goal_dist: float
    started_at_goal: bool = False


@dataclass(frozen=True)
class Metrics:
    """Aggregate row: rate over episodes plus motion-quality means."""
    success_rate: float
    waypoint_error_mm: float
    time_to_goal_s: float
    mean_accel: float
    episodes: int

    def __post_init__(self):
        if not 0.0 <= self.success_rate <= 1.0:
            raise ValueError("success_rate must lie in [0, 1]")
        if self.episodes < 0:
            raise ValueError("episodes must be >= 0")


def greedy_policy(agent):
    return lambda obs: agent.act(obs, deterministic=True)


def episode_at(env, scene, angles, seed=0):
    """Episode state at a fixed scene and start configuration.

    Same construction as env.reset minus the sampling and the curriculum:
    plan the reference path, then query the models at the start.
    """
    angles = np.asarray(angles, dtype=np.float64)
    if not within_limits(env.arm, angles):
        raise ValueError("start configuration violates joint limits")
    if check_collision(env.arm, angles, scene.obstacles)[0]:
        raise ValueError("start configuration collides")
    rng = np.random.default_rng(seed)
    goal_q = goal_joint_config(env.arm, scene.obstacles, scene.goal, rng)
    if goal_q is None:
        raise RuntimeError("no collision-free goal configuration")
    path = plan_birrt_star(env.arm, scene.obstacles, angles, goal_q,
                           env.planner_cfg, seed=seed)
    if path is None:
        raise RuntimeError("planning failed for the fixed episode")
    path = shortcut_smooth(path, env.arm, scene.obstacles, seed=seed)
    z, w, mark = env._query(scene, angles, noise_key=seed * 10007)
    return EnvState(JointConfig(angles), scene, w, z, 0, path, mark, seed)


def run_episode(policy, env, script=None, seed=0, include_waypoints=True,
                state=None, on_step=None):
    """Closed-loop rollout of policy(obs) -> action with optional scripted
    scene edits; script events fire before the action at their step index.
    on_step, when given, observes every StepResult (trace recording)."""
    if state is None:
        state = env.reset(seed=seed)
    events = list(script.events) if script is not None else []
    goal_dist = float(np.linalg.norm(
        end_effector(env.arm, state.joints.angles) - state.scene.goal))
    if goal_dist <= env.cfg.d_goal:
        return EpisodeResult(True, 0, 0.0, 0.0, False, True, goal_dist,
                             started_at_goal=True)

    collided = False
    accels = []
    next_event = 0
    while True:
        while (next_event < len(events)
               and events[next_event][0] == state.step_count):
            state = apply_edit(env, state, events[next_event][1])
            next_event += 1
        obs = env.observe(state, include_waypoints=include_waypoints)
        result = env.step(state, policy(obs))
        collided = collided or bool(result.info["collided"])
        accels.append(result.info["accel_norm"])
        state = result.next_state
        if on_step is not None:
            on_step(result)
        if result.done:
            break

    reached = bool(result.info["reached_goal"])
    steps = state.step_count
    success = reached and not collided and steps <= env.cfg.horizon
    assert success == ((not collided) and reached and steps <= env.cfg.horizon)
    goal_dist = float(np.linalg.norm(
        end_effector(env.arm, state.joints.angles) - state.scene.goal))
    return EpisodeResult(success, steps, steps * env.cfg.dt,
                         float(np.mean(accels)), collided, reached, goal_dist)


# ---------------------------------------------------------------------------
# waypoint-follow protocol (no policy)

@dataclass(frozen=True)
class FollowResult:
    success: bool
    moves: int
    collided: bool
    waypoint_error_mm: float


def waypoint_follow_episode(env, seed=0, max_moves=60, state=None):
    """Position-command protocol: jump to the nearest generated waypoint,
    re-query, repeat. Scores the generator alone, without a policy.

    The waypoint error compares the first query against waypoints read off
    the planned reference path at the start configuration.
    """
    if env.waygen is None:
        raise ValueError("the follow protocol needs a waypoint generator")
    if state is None:
        state = env.reset(seed=seed)
    arm = env.arm
    scene = state.scene
    angles = state.joints.angles.copy()

    truth = extract_waypoints(state.reference_path, angles, arm,
                              env.cfg.k, env.cfg.spacing, env.task.frame)
    err_mm = 1000.0 * float(np.mean(np.linalg.norm(
        state.waypoints.offsets - truth.offsets, axis=1)))

    waypoints = state.waypoints
    success = collided = False
    moves = 0
    for move in range(max_moves):
        ee = end_effector(arm, angles)
        if float(np.linalg.norm(ee - scene.goal)) <= env.cfg.d_goal:
            success = True
            break
        closest = waypoints.offsets[0]
        if env.task.frame == "joint":
            nxt = angles + closest
        else:
            nxt, ik_err = ik_step(arm, angles, ee + closest)
            if ik_err > env.cfg.d_goal:
                break
        if not within_limits(arm, nxt):
            break
        if check_collision(arm, nxt, scene.obstacles)[0]:
            collided = True
            break
        angles = nxt
        moves = move + 1
        _, waypoints, _ = env._query(scene, angles,
                                     noise_key=seed * 6151 + moves)
    return FollowResult(success and not collided, moves, collided, err_mm)


def eval_regime_matrix(cells, episodes=50, seed=0):
    """Success/error matrix over (regime, data fraction, obstacle count).

    cells maps (regime, fraction, n_obs) -> environment factory with the
    cell's generator loaded; a missing factory fails naming the cell.
    """
    rows = []
    for key in sorted(cells):
        regime, fraction, n_obs = key
        factory = cells[key]
        if factory is None:
            raise ValueError(f"no trained model for cell {key}")
        try:
            env = factory()
        except Exception as exc:
            raise RuntimeError(f"cell {key}: {exc}") from exc
        env.curriculum = replace(env.curriculum, enabled=False)
        results = [waypoint_follow_episode(env, seed=seed * 2713 + i)
                   for i in range(episodes)]
        rows.append({
            "regime": regime,
            "fraction": fraction,
            "n_obs": n_obs,
            "success_rate": float(np.mean([r.success for r in results])),
            "waypoint_error_mm": float(np.mean([r.waypoint_error_mm
                                                for r in results])),
            "episodes": episodes,
        })
    return rows


def eval_generalization(policy, env, preset, episodes=50, seed=0,
                        include_waypoints=True):
    """Success rate under scripted mid-episode scene changes."""
    successes = []
    for i in range(episodes):
        script = make_scenario(preset, seed * 92821 + i, env.cfg.horizon)
        result = run_episode(policy, env, script, seed=seed * 5081 + i,
                             include_waypoints=include_waypoints)
        successes.append(result.success)
    return float(np.mean(successes))


# ---------------------------------------------------------------------------
# motion quality vs a PD path follower

@dataclass(frozen=True)
class PdGains:
    kp: float = 6.0
    kd: float = 0.8
    lookahead: float = 0.2
    dt: float = 0.01
    max_steps: int = 3000
    goal_tol: float = 0.05
    divergence_floor: float = 0.05

    def __post_init__(self):
        if self.kp <= 0 or self.dt <= 0 or self.max_steps <= 0:
            raise ValueError("kp, dt, max_steps must be positive")
        if self.kd < 0 or self.lookahead < 0:
            raise ValueError("kd and lookahead must be non-negative")


@dataclass(frozen=True)
class PdResult:
    actions: np.ndarray          # (M, n_joints) velocity commands
    reached: bool
    diverged: bool


def pd_follow_baseline(path, arm, gains=PdGains()):
    """Velocity commands toward a lookahead point sliding along the path.

    Stops once the end effector is within goal_tol of the path end; reports
    divergence when the distance to the path grows past 10x the floor.
    """
    q = np.asarray(path.configs[0], dtype=np.float64).copy()
    vel = np.zeros_like(q)
    goal_ee = end_effector(arm, path.configs[-1])
    actions = []
    reached = diverged = False
    for _ in range(gains.max_steps):
        if float(np.linalg.norm(end_effector(arm, q) - goal_ee)) <= gains.goal_tol:
            reached = True
            break
        s = project_to_path(path, q)
        if float(np.linalg.norm(q - config_at_arclength(path, s))) \
                > 10.0 * gains.divergence_floor:
            diverged = True
            break
        target = config_at_arclength(path, s + gains.lookahead)
        u = np.clip(gains.kp * (target - q) - gains.kd * vel,
                    -arm.max_velocity, arm.max_velocity)
        actions.append(u)
        nxt, _ = integrate(arm, JointConfig(q, vel), u, gains.dt)
        q, vel = nxt.angles, nxt.velocities
    return PdResult(np.asarray(actions).reshape(len(actions), arm.n_joints),
                    reached, diverged)


def command_accel(actions, dt):
    """Mean acceleration norm of a velocity-command trajectory (from rest)."""
    if len(actions) == 0:
        return 0.0
    padded = np.vstack([np.zeros((1, actions.shape[1])), actions])
    return float(np.mean(np.linalg.norm(np.diff(padded, axis=0) / dt, axis=1)))


def eval_quality(policy, env, seed=0, gains=None, include_waypoints=True,
                 max_retries=5):
    """Per-start time and smoothness, policy vs PD follower, on the fixed
    high-shelf starts and pick goal. One row per start, 1-indexed."""
    if env.task.name != "shelf_pick":
        raise ValueError("quality evaluation runs on the shelf_pick task")
    gains = gains or PdGains(dt=env.cfg.dt)
    rows = []
    for idx, point in enumerate(SHELF_START_POINTS):
        q = ik_solve(env.arm, np.asarray(point, dtype=np.float64),
                     np.random.default_rng(seed * 131 + idx))
        if q is None:
            raise RuntimeError(f"start {idx + 1}: no IK solution for {point}")
        scene = Scene(obstacles=[], goal=np.asarray(QUALITY_GOAL))
        state = None
        for attempt in range(max_retries):
            try:
                state = episode_at(env, scene, q,
                                   seed=seed * 6007 + idx * 31 + attempt)
                break
            except RuntimeError:
                continue
        if state is None:
            raise RuntimeError(f"start {idx + 1}: planning failed "
                               f"{max_retries} times")
        baseline = pd_follow_baseline(state.reference_path, env.arm, gains)
        episode = run_episode(policy, env, state=state,
                              include_waypoints=include_waypoints)
        rows.append({
            "start": idx + 1,
            "start_x": point[0],
            "start_y": point[1],
            "policy_success": episode.success,
            "policy_time_s": episode.time_s if episode.success else math.nan,
            "policy_accel": episode.mean_accel,
            "baseline_success": baseline.reached and not baseline.diverged,
            "baseline_time_s": (len(baseline.actions) * gains.dt
                                if baseline.reached else math.nan),
            "baseline_accel": command_accel(baseline.actions, gains.dt),
        })
    return rows


# ---------------------------------------------------------------------------
# report files

def write_rows_csv(rows, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fields = list(rows[0].keys()) if rows else []
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)


def write_report_json(report, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(report, f, indent=1, sort_keys=True, default=float)


def markdown_summary(title, rows):
    """Fixed-order Markdown table from a list of uniform dicts."""
    if not rows:
        return f"## {title}\n\n(no rows)\n"
    fields = list(rows[0].keys())
    fmt = lambda v: f"{v:.4g}" if isinstance(v, float) else str(v)
    lines = [f"## {title}", "",
             "| " + " | ".join(fields) + " |",
             "| " + " | ".join("---" for _ in fields) + " |"]
    lines += ["| " + " | ".join(fmt(r[k]) for k in fields) + " |" for r in rows]
    return "\n".join(lines) + "\n"
