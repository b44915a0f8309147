"""State-frame schema, de-relativized waypoint drawing, and trace IO."""
import numpy as np
import pytest

from reflexarm.env import ArmEnv, CurriculumConfig, EnvConfig, TaskSpec
from reflexarm.evaluation import run_episode
from reflexarm.kinematics import ArmModel, end_effector
from reflexarm.planner import PlannerConfig, WaypointSet
from reflexarm.scenegen import Obstacle
from reflexarm.wire import (absolute_waypoints, obstacle_json, read_trace,
                            trace_episode, validate_frame, write_trace)

from stubs import synth_frame


def test_obstacle_json_fields():
    circle = Obstacle("circle", (0.5, 0.2), radius=0.1, id=3)
    assert obstacle_json(circle) == {"id": 3, "shape": "circle",
                                     "x": 0.5, "y": 0.2, "radius": 0.1}
    rect = Obstacle("rect", (0.4, -0.1), width=0.2, height=0.3, id=1)
    assert obstacle_json(rect) == {"id": 1, "shape": "rect", "x": 0.4,
                                   "y": -0.1, "width": 0.2, "height": 0.3}


def test_absolute_waypoints_cartesian():
    arm = ArmModel()
    angles = np.zeros(3)
    ee = end_effector(arm, angles)
    offsets = np.array([[0.1, 0.0], [0.0, 0.2]])
    out = absolute_waypoints(arm, "cartesian", angles,
                             WaypointSet(offsets, "cartesian"))
    assert np.allclose(out, ee + offsets)
    assert absolute_waypoints(arm, "cartesian", angles, None) == []


def test_absolute_waypoints_joint_frame_maps_through_fk():
    arm = ArmModel()
    angles = np.array([0.3, -0.2, 0.5])
    offsets = np.array([[0.1, 0.0, -0.1], [0.2, 0.1, 0.0]])
    out = absolute_waypoints(arm, "joint", angles,
                             WaypointSet(offsets, "joint"))
    expected = [end_effector(arm, angles + o) for o in offsets]
    assert np.allclose(out, expected)


def test_validate_frame_rejects_malformed():
    good = synth_frame(0)
    assert validate_frame(good) is good
    with pytest.raises(ValueError, match="not a state frame"):
        validate_frame(["nope"])
    with pytest.raises(ValueError, match="not a state frame"):
        validate_frame({"type": "hello"})
    broken = synth_frame(0)
    del broken["goal"]
    with pytest.raises(ValueError, match="goal"):
        validate_frame(broken)
    bad_flags = synth_frame(0)
    bad_flags["flags"] = {"collided": False}
    with pytest.raises(ValueError, match="flags"):
        validate_frame(bad_flags)


def test_trace_roundtrip(tmp_path):
    frames = [synth_frame(t) for t in range(4)]
    path = tmp_path / "t.jsonl"
    write_trace(path, frames)
    assert read_trace(path) == frames


def test_read_trace_errors_name_the_line(tmp_path):
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    with pytest.raises(ValueError, match="empty trace"):
        read_trace(empty)
    bad = tmp_path / "bad.jsonl"
    import json
    bad.write_text(json.dumps(synth_frame(0)) + "\n{broken\n")
    with pytest.raises(ValueError, match=":2:"):
        read_trace(bad)


def test_trace_episode_matches_run_episode():
    env = ArmEnv(task=TaskSpec("reach", n_obs_choices=(0,)),
                 planner_cfg=PlannerConfig(max_iterations=800,
                                           refine_iterations=60),
                 curriculum=CurriculumConfig(enabled=False),
                 cfg=EnvConfig(horizon=8))

    def zero(obs):
        return np.zeros(3)

    frames, episode = trace_episode(zero, env, seed=4)
    plain = run_episode(zero, env, seed=4)
    assert episode == plain
    assert len(frames) == episode.steps + 1
    assert [f["t"] for f in frames] == list(range(len(frames)))
    assert frames[0]["reward"] == 0.0
    assert frames[-1]["done"] is True
    for f in frames:
        validate_frame(f)
