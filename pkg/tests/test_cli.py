"""Pipeline config documents and the command-line driver.

The command tests share one micro-scale artifact directory built through
the CLI itself (module-scoped fixture); they are cheap because the config
shrinks every model and the scene count.
"""
import csv
import json

import pytest

from reflexarm.cli import main, waygen_ckpt_name
from reflexarm.config import (ConfigError, PipelineConfig, build_config,
                              config_to_dict, load_config)
from reflexarm.wire import read_trace

MICRO = {
    "scene": {"task": "reach", "n_obs_choices": [0], "n_scenes": 6,
              "samples_per_path": 4},
    "planner": {"max_iterations": 800, "refine_iterations": 60},
    "vae": {"latent_dim": 8, "epochs": 2, "batch_size": 8},
    "ced": {"epochs": 2, "batch_size": 8},
    "waygen": {"regime": "ced_plus_sim", "epochs": 10, "hidden": 32,
               "batch_size": 16},
    "env": {"horizon": 40, "curriculum": {"max_teleport_steps": 3}},
    "rl": {"total_env_steps": 120, "batch_size": 16, "warmup_steps": 24,
           "eval_interval": 40, "eval_episodes": 2, "buffer_capacity": 512,
           "hidden": 16},
    "eval": {"episodes": 1, "fractions": [1.0], "n_obs": [0],
             "presets": ["moving_goal"]},
}


# ---------------------------------------------------------------------------
# config documents

def test_default_config_roundtrips_through_json():
    cfg = PipelineConfig()
    doc = json.loads(json.dumps(config_to_dict(cfg)))
    assert build_config(doc) == cfg


def test_unknown_keys_rejected_with_path():
    cases = [
        ({"bogus": {}}, "bogus"),
        ({"scene": {"bogus": 1}}, "scene"),
        ({"env": {"curriculum": {"nope": 1}}}, "env.curriculum"),
        ({"rl": {"learning_rate": 1e-3}}, "learning_rate"),
    ]
    for doc, needle in cases:
        with pytest.raises(ConfigError, match=needle):
            build_config(doc)


def test_type_mismatches_rejected():
    cases = [
        {"seed": "seven"},
        {"seed": 1.5},
        {"vae": {"latent_dim": 2.5}},
        {"env": {"image_style": 4}},
        {"scene": {"n_obs_choices": "all"}},
        {"env": {"terminate_on_collision": 1}},
        {"env": {"curriculum": {"enabled": "yes"}}},
        {"arm": "long"},
    ]
    for doc in cases:
        with pytest.raises(ConfigError):
            build_config(doc)


def test_section_validation_propagates():
    cases = [
        {"vae": {"latent_dim": 0}},
        {"rl": {"variant": "bogus"}},
        {"eval": {"fractions": [0.0]}},
        {"eval": {"presets": ["teleport"]}},
        {"serve": {"port": 0}},
        {"scene": {"task": "juggle"}},
        {"waygen": {"regime": "sim_only"}},
    ]
    for doc in cases:
        with pytest.raises(ConfigError):
            build_config(doc)


def test_overrides_reach_every_section():
    cfg = build_config({
        "seed": 9,
        "arm": {"link_lengths": [0.5, 0.3, 0.2], "max_velocity": 2.0},
        "scene": {"sensor": {"noise_sigma": 0.01}},
        "planner": {"extend_step": 0.2},
        "vae": {"beta": 4.0},
        "ced": {"lr": 1e-3},
        "waygen": {"data_fraction": 0.5},
        "env": {"reward": {"goal": 2.0},
                "curriculum": {"enabled": False}},
        "rl": {"tau": 0.01},
        "eval": {"episodes": 5},
        "serve": {"hz": 10.0},
    })
    assert cfg.seed == 9
    assert cfg.arm.link_lengths == (0.5, 0.3, 0.2)
    assert cfg.arm.max_velocity == 2.0
    assert cfg.scene.sensor.noise_sigma == 0.01
    assert cfg.planner.extend_step == 0.2
    assert cfg.vae.beta == 4.0
    assert cfg.ced.lr == 1e-3
    assert cfg.waygen.data_fraction == 0.5
    assert cfg.env.reward.goal == 2.0
    assert cfg.env.curriculum.enabled is False
    assert cfg.rl.tau == 0.01
    assert cfg.eval.episodes == 5
    assert cfg.serve.hz == 10.0
    # untouched sections keep their defaults
    assert cfg.env.env_config() == PipelineConfig().env.env_config()


def test_load_config_file_errors(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError, match="JSON"):
        load_config(bad)


def test_waygen_checkpoint_names_encode_fraction():
    assert waygen_ckpt_name("ced_plus_sim", 1.0) == \
        "waygen_ced_plus_sim_p100.ckpt"
    assert waygen_ckpt_name("real_only", 0.1) == "waygen_real_only_p010.ckpt"


# ---------------------------------------------------------------------------
# command dispatch and exit codes

def test_usage_errors_exit_1(capsys):
    for argv in ([], ["frobnicate"], ["train"], ["train", "bogus"],
                 ["eval", "table"], ["demo"], ["gen-data", "--nope"]):
        assert main(argv) == 1
    assert "usage error" in capsys.readouterr().err


def test_config_errors_exit_2(tmp_path, capsys):
    missing = tmp_path / "nope.json"
    assert main(["gen-data", "--config", str(missing),
                 "--out", str(tmp_path)]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"scene": {"bogus": 1}}))
    assert main(["gen-data", "--config", str(bad),
                 "--out", str(tmp_path)]) == 2
    assert "config error" in capsys.readouterr().err


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "c.json"
    cfg.write_text(json.dumps(MICRO))
    out = root / "artifacts"
    for argv in (["gen-data"], ["train", "vae"], ["train", "ced"],
                 ["train", "waygen"], ["train", "rl"]):
        rc = main(argv + ["--config", str(cfg), "--out", str(out),
                          "--seed", "7"])
        assert rc == 0, f"{argv} failed"
    return {"cfg": cfg, "out": out, "root": root}


def test_gen_data_twice_is_byte_identical(pipeline):
    root = pipeline["root"]
    for d in ("det_a", "det_b"):
        assert main(["gen-data", "--config", str(pipeline["cfg"]),
                     "--out", str(root / d), "--seed", "7"]) == 0
    a = sorted(p.relative_to(root / "det_a")
               for p in (root / "det_a").rglob("*") if p.is_file())
    b = sorted(p.relative_to(root / "det_b")
               for p in (root / "det_b").rglob("*") if p.is_file())
    assert a == b and len(a) > 1
    for rel in a:
        assert (root / "det_a" / rel).read_bytes() == \
            (root / "det_b" / rel).read_bytes(), rel


def test_train_outputs_exist(pipeline):
    out = pipeline["out"]
    for name in ("vae.ckpt", "ced.ckpt", "waygen.ckpt",
                 "waygen_ced_plus_sim_p100.ckpt", "sac_ours.ckpt"):
        assert (out / name / "meta.json").exists(), name
    with open(out / "curves_ours.csv") as f:
        rows = list(csv.DictReader(f))
    assert [int(r["step"]) for r in rows] == [40, 80, 120]
    with open(out / "vae_history.csv") as f:
        vrows = list(csv.DictReader(f))
    assert len(vrows) == MICRO["vae"]["epochs"]
    assert set(vrows[0]) == {"epoch", "recon", "kl"}
    # the tagged generator checkpoint and the default are the same bytes
    assert (out / "waygen.ckpt" / "params.bin").read_bytes() == \
        (out / "waygen_ced_plus_sim_p100.ckpt" / "params.bin").read_bytes()


def test_train_waygen_rerun_is_byte_identical(pipeline):
    out = pipeline["out"]
    before = (out / "waygen.ckpt" / "params.bin").read_bytes()
    assert main(["train", "waygen", "--config", str(pipeline["cfg"]),
                 "--out", str(out), "--seed", "7"]) == 0
    assert (out / "waygen.ckpt" / "params.bin").read_bytes() == before


def test_manifest_records_commands_and_hashes(pipeline):
    out = pipeline["out"]
    man = json.loads((out / "manifest.json").read_text())
    assert set(man["versions"]) == {"python", "numpy", "reflexarm"}
    for cmd in ("gen-data", "train vae", "train ced", "train waygen",
                "train rl"):
        entry = man["commands"][cmd]
        assert entry["seed"] == 7
        assert len(entry["config_sha256"]) == 64
        assert entry["outputs"]
        for digest in entry["outputs"].values():
            assert len(digest) == 64
    assert man["commands"]["train rl"]["inputs"].keys() >= \
        {"vae.ckpt", "waygen.ckpt"}
    assert "timestamp" not in (out / "manifest.json").read_text().lower()


def test_rerun_leaves_manifest_unchanged(pipeline):
    out = pipeline["out"]
    before = (out / "manifest.json").read_bytes()
    assert main(["gen-data", "--config", str(pipeline["cfg"]),
                 "--out", str(out), "--seed", "7"]) == 0
    assert (out / "manifest.json").read_bytes() == before


def test_eval_regimes_missing_cell_exits_3(pipeline, capsys):
    doc = json.loads(pipeline["cfg"].read_text())
    doc["eval"]["fractions"] = [0.5, 1.0]    # p050 was never trained
    cfg = pipeline["root"] / "c_frac.json"
    cfg.write_text(json.dumps(doc))
    assert main(["eval", "regimes", "--config", str(cfg),
                 "--out", str(pipeline["out"]), "--seed", "7"]) == 3
    err = capsys.readouterr().err
    assert "cell" in err and "0.5" in err


def test_eval_regimes_full_matrix(pipeline, capsys):
    out = pipeline["out"]
    for regime in ("real_only", "real_plus_sim"):
        doc = json.loads(pipeline["cfg"].read_text())
        doc["waygen"]["regime"] = regime
        cfg = pipeline["root"] / f"c_{regime}.json"
        cfg.write_text(json.dumps(doc))
        assert main(["train", "waygen", "--config", str(cfg),
                     "--out", str(out), "--seed", "7"]) == 0
    assert main(["eval", "regimes", "--config", str(pipeline["cfg"]),
                 "--out", str(out), "--seed", "7"]) == 0
    rows = json.loads((out / "regimes.json").read_text())["rows"]
    assert [r["regime"] for r in rows] == \
        ["ced_plus_sim", "real_only", "real_plus_sim"]
    assert all(0.0 <= r["success_rate"] <= 1.0 for r in rows)
    assert all(r["waypoint_error_mm"] >= 0.0 for r in rows)
    assert (out / "regimes.md").read_text().startswith("#")


def test_eval_generalization_writes_reports(pipeline):
    out = pipeline["out"]
    assert main(["eval", "generalization", "--config", str(pipeline["cfg"]),
                 "--out", str(out), "--seed", "7"]) == 0
    rows = json.loads((out / "generalization.json").read_text())["rows"]
    assert [r["preset"] for r in rows] == ["moving_goal"]
    assert 0.0 <= rows[0]["success_rate"] <= 1.0
    with open(out / "generalization.csv") as f:
        assert len(list(csv.DictReader(f))) == 1
    assert "moving_goal" in (out / "generalization.md").read_text()


def test_eval_quality_needs_shelf_task(pipeline, capsys):
    assert main(["eval", "quality", "--config", str(pipeline["cfg"]),
                 "--out", str(pipeline["out"]), "--seed", "7"]) == 3
    assert "shelf_pick" in capsys.readouterr().err


def test_demo_writes_trace_and_summary(pipeline):
    out = pipeline["out"]
    script = pipeline["root"] / "mg.json"
    script.write_text(json.dumps({"preset": "moving_goal", "seed": 3}))
    argv = ["demo", "--script", str(script), "--config",
            str(pipeline["cfg"]), "--out", str(out), "--seed", "7"]
    assert main(argv) == 0
    first = (out / "trace.jsonl").read_bytes()
    frames = read_trace(out / "trace.jsonl")
    summary = json.loads((out / "demo_summary.json").read_text())
    assert len(frames) == summary["frames"] == summary["steps"] + 1
    assert [f["t"] for f in frames] == list(range(len(frames)))
    assert frames[0]["reward"] == 0.0 and not frames[0]["done"]
    assert frames[-1]["done"] is True
    assert all(len(f["waypoints"]) == 5 for f in frames)
    assert summary["script"] == {"preset": "moving_goal", "seed": 3}
    # the demo replays bit-for-bit
    assert main(argv) == 0
    assert (out / "trace.jsonl").read_bytes() == first


def test_demo_event_script_changes_goal(pipeline):
    out = pipeline["out"]
    script = pipeline["root"] / "ev.json"
    script.write_text(json.dumps(
        {"events": [[0, {"op": "set_goal", "point": [0.5, 0.2]}]]}))
    assert main(["demo", "--script", str(script), "--config",
                 str(pipeline["cfg"]), "--out", str(out),
                 "--seed", "7"]) == 0
    frames = read_trace(out / "trace.jsonl")
    # the t=0 frame precedes the edit; every later frame sees the new goal
    assert frames[1]["goal"] == [0.5, 0.2]
    assert frames[-1]["goal"] == [0.5, 0.2]


def test_demo_bad_scripts_exit_3(pipeline, tmp_path, capsys):
    common = ["--config", str(pipeline["cfg"]),
              "--out", str(pipeline["out"]), "--seed", "7"]
    missing = tmp_path / "none.json"
    assert main(["demo", "--script", str(missing)] + common) == 3
    empty = tmp_path / "empty.json"
    empty.write_text(json.dumps({}))
    assert main(["demo", "--script", str(empty)] + common) == 3
    assert "preset" in capsys.readouterr().err


def test_missing_checkpoints_exit_3(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps(MICRO))
    script = tmp_path / "mg.json"
    script.write_text(json.dumps({"preset": "moving_goal", "seed": 3}))
    empty = tmp_path / "empty_out"
    assert main(["demo", "--script", str(script), "--config", str(cfg),
                 "--out", str(empty)]) == 3
    assert "vae.ckpt" in capsys.readouterr().err
    assert main(["train", "waygen", "--config", str(cfg),
                 "--out", str(empty)]) == 3
    assert "gen-data" in capsys.readouterr().err


def test_serve_replay_rejects_malformed_trace(tmp_path, capsys):
    bad = tmp_path / "bad.jsonl"
    bad.write_text("this is not json\n")
    assert main(["serve", "--replay", str(bad),
                 "--out", str(tmp_path)]) == 3
    assert "not JSON" in capsys.readouterr().err


def test_reflex_data_dir_is_default_out(pipeline, monkeypatch, tmp_path):
    monkeypatch.setenv("REFLEX_DATA_DIR", str(tmp_path / "envroot"))
    assert main(["gen-data", "--config", str(pipeline["cfg"]),
                 "--seed", "7"]) == 0
    assert (tmp_path / "envroot" / "dataset" / "meta.json").exists()
