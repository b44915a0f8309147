"""Wire format for episode traces and the live demo stream.

One JSON object per frame. A state frame carries everything a viewer
needs to draw the scene: joint angles, end effector, goal, obstacles,
the de-relativized waypoint polyline in workspace coordinates, the last
reward, and termination flags. Episode traces are JSON lines of state
frames, one per environment step plus the initial state.
"""
from __future__ import annotations

import json

import numpy as np

from .env import waypoint_polyline
from .evaluation import run_episode
from .kinematics import end_effector

STATE_KEYS = ("type", "t", "joints", "ee", "goal", "obstacles", "waypoints",
              "reward", "done", "flags")
FLAG_KEYS = ("collided", "reached", "timeout", "limit")


def obstacle_json(ob):
    out = {"id": int(ob.id), "shape": ob.kind,
           "x": float(ob.center[0]), "y": float(ob.center[1])}
    if ob.kind == "circle":
        out["radius"] = float(ob.radius)
    else:
        out["width"] = float(ob.width)
        out["height"] = float(ob.height)
    return out


def absolute_waypoints(arm, frame, angles, waypoints):
    """Waypoint offsets as workspace [x, y] vertices for drawing."""
    if waypoints is None:
        return []
    if frame == "joint":
        vertices = waypoint_polyline(np.asarray(angles, dtype=np.float64),
                                     waypoints)
        return [[float(x), float(y)] for x, y in
                (end_effector(arm, q) for q in vertices)]
    point = end_effector(arm, np.asarray(angles, dtype=np.float64))
    vertices = waypoint_polyline(point, waypoints)
    return [[float(x), float(y)] for x, y in vertices]


def state_frame(env, state, reward=0.0, done=False, info=None):
    """The viewer-facing snapshot of one environment state."""
    info = info or {}
    flags = {"collided": bool(info.get("collided", False)),
             "reached": bool(info.get("reached_goal", False)),
             "timeout": bool(info.get("timeout", False)),
             "limit": bool(info.get("limit_violation", False))}
    angles = state.joints.angles
    ee = end_effector(env.arm, angles)
    return {
        "type": "state",
        "t": int(state.step_count),
        "joints": [float(a) for a in angles],
        "ee": [float(ee[0]), float(ee[1])],
        "goal": [float(state.scene.goal[0]), float(state.scene.goal[1])],
        "obstacles": [obstacle_json(ob) for ob in state.scene.obstacles],
        "waypoints": absolute_waypoints(env.arm, env.task.frame, angles,
                                        state.waypoints),
        "reward": float(reward),
        "done": bool(done),
        "flags": flags,
    }


def trace_episode(policy, env, script=None, seed=0, include_waypoints=True):
    """Roll out one episode and record a frame per state.

    Returns (frames, episode_result); frames[0] is the state after reset,
    so an episode of N steps yields N + 1 frames.
    """
    state = env.reset(seed=seed)
    frames = [state_frame(env, state)]

    def record(result):
        frames.append(state_frame(env, result.next_state, result.reward,
                                  result.done, result.info))

    episode = run_episode(policy, env, script, seed=seed,
                          include_waypoints=include_waypoints, state=state,
                          on_step=record)
    return frames, episode


def validate_frame(frame):
    if not isinstance(frame, dict) or frame.get("type") != "state":
        raise ValueError(f"not a state frame: {frame!r}")
    missing = [k for k in STATE_KEYS if k not in frame]
    if missing:
        raise ValueError(f"state frame missing key(s) {missing}")
    flags = frame["flags"]
    if not isinstance(flags, dict) or set(flags) != set(FLAG_KEYS):
        raise ValueError(f"state frame flags malformed: {flags!r}")
    return frame


def write_trace(path, frames):
    with open(path, "w") as f:
        for frame in frames:
            f.write(json.dumps(validate_frame(frame), sort_keys=True) + "\n")


def read_trace(path):
    frames = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                frame = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: not JSON: {exc}") from None
            try:
                frames.append(validate_frame(frame))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    if not frames:
        raise ValueError(f"{path}: empty trace")
    return frames
