"""Command-line pipeline driver.

    gen-data                 plan scenes and write the labeled dataset
    train vae|ced|waygen|rl  fit one model, write its checkpoint + history
    eval regimes|generalization|quality   write CSV/JSON/Markdown reports
    demo --script FILE       roll out one scripted episode, write a trace
    serve [--port N] [--replay FILE]      live demo server / trace replay

Common flags: --config FILE (JSON pipeline config), --seed N (overrides
the config seed), --out DIR (artifact root; default $REFLEX_DATA_DIR or
./artifacts). Every artifact lands under --out next to a manifest.json
recording input/output hashes and versions. Exit codes: 0 success,
1 usage error, 2 config error, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import os
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, PipelineConfig, config_to_dict, load_config
from .env import ArmEnv, CurriculumConfig, TaskSpec
from .evaluation import (ScenarioScript, eval_generalization, eval_quality,
                         eval_regime_matrix, greedy_policy, make_scenario,
                         markdown_summary, write_report_json, write_rows_csv)
from .real2sim import load_ced, save_ced, train_ced
from .rl import load_sac, save_sac, train_sac, write_curves_csv
from .scenegen import PlanningDataset, generate_dataset
from .vae import load_vae, save_vae, train_vae
from .waygen import load_waygen, save_waygen, train_waygen
from .wire import read_trace, trace_episode, write_trace

DATASET_DIR = "dataset"
VAE_CKPT = "vae.ckpt"
CED_CKPT = "ced.ckpt"
WAYGEN_CKPT = "waygen.ckpt"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def waygen_ckpt_name(regime, fraction):
    return f"waygen_{regime}_p{round(fraction * 100):03d}.ckpt"


def sac_ckpt_name(variant):
    return f"sac_{variant}.ckpt"


# ---------------------------------------------------------------------------
# artifact bookkeeping

def _sha256_file(path):
    h = hashlib.sha256()
    h.update(Path(path).read_bytes())
    return h.hexdigest()


def _artifact_digest(path):
    """One digest per artifact; directories hash (relative name, file hash)
    pairs in sorted order."""
    p = Path(path)
    if p.is_dir():
        h = hashlib.sha256()
        for f in sorted(p.rglob("*")):
            if f.is_file():
                h.update(f.relative_to(p).as_posix().encode())
                h.update(_sha256_file(f).encode())
        return h.hexdigest()
    return _sha256_file(p)


def _config_digest(cfg):
    doc = json.dumps(config_to_dict(cfg), sort_keys=True)
    return hashlib.sha256(doc.encode()).hexdigest()


def _update_manifest(out, command, cfg, inputs, outputs):
    path = out / "manifest.json"
    try:
        data = json.loads(path.read_text())
    except (FileNotFoundError, json.JSONDecodeError):
        data = {}
    data["versions"] = {"python": platform.python_version(),
                        "numpy": np.__version__,
                        "reflexarm": __version__}
    data.setdefault("commands", {})[command] = {
        "seed": cfg.seed,
        "config_sha256": _config_digest(cfg),
        "inputs": {k: _artifact_digest(v) for k, v in inputs.items()},
        "outputs": {k: _artifact_digest(v) for k, v in outputs.items()},
    }
    path.write_text(json.dumps(data, indent=1, sort_keys=True) + "\n")


def _require(path, hint):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(
            f"missing {path.name} in {path.parent} ({hint})")
    return path


def _write_history_csv(path, columns):
    """Per-epoch training history: dict of equal-length lists."""
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(("epoch",) + tuple(columns))
        for i, vals in enumerate(zip(*columns.values())):
            wr.writerow((i,) + tuple(repr(float(v)) for v in vals))


# ---------------------------------------------------------------------------
# model plumbing

def _load_dataset(out):
    _require(out / DATASET_DIR / "meta.json", "run `gen-data` first")
    return PlanningDataset.load(out / DATASET_DIR)


def _load_models(cfg, out, with_agent=False):
    """The frozen stack a live environment needs, from checkpoints."""
    vae = load_vae(_require(out / VAE_CKPT, "run `train vae` first"))
    ced = None
    if cfg.env.image_style == "real":
        ced = load_ced(_require(
            out / CED_CKPT,
            "run `train ced` first, or set env.image_style to \"sim\""))
    net = load_waygen(_require(out / WAYGEN_CKPT, "run `train waygen` first"))
    agent = None
    if with_agent:
        agent = load_sac(_require(out / sac_ckpt_name(cfg.rl.variant),
                                  "run `train rl` first"))
    return {"vae": vae, "ced": ced, "waygen": net, "agent": agent}


def _build_env(cfg, models, n_obs=None, image_style=None, curriculum=None):
    choices = (n_obs,) if n_obs is not None else cfg.scene.n_obs_choices
    env_cfg = cfg.env.env_config()
    if image_style is not None:
        env_cfg = dataclasses.replace(env_cfg, image_style=image_style)
    return ArmEnv(arm=cfg.arm, task=TaskSpec(cfg.scene.task, choices),
                  waygen=models["waygen"], vae=models["vae"],
                  ced=models["ced"], planner_cfg=cfg.planner,
                  sensor=cfg.scene.sensor, coeffs=cfg.env.reward,
                  curriculum=curriculum or cfg.env.curriculum, cfg=env_cfg)


def _write_report(out, stem, title, rows, extra=None):
    write_rows_csv(rows, out / f"{stem}.csv")
    report = {"title": title, "rows": rows}
    report.update(extra or {})
    write_report_json(report, out / f"{stem}.json")
    (out / f"{stem}.md").write_text(markdown_summary(title, rows))
    return {stem: out / f"{stem}.csv",
            f"{stem}_json": out / f"{stem}.json",
            f"{stem}_md": out / f"{stem}.md"}


# ---------------------------------------------------------------------------
# commands

def _cmd_gen_data(cfg, out, args):
    task = cfg.scene.task_spec()
    ds = generate_dataset(cfg.arm, task.randomization(), cfg.planner,
                          cfg.scene.sensor, cfg.scene.n_scenes,
                          cfg.scene.samples_per_path, seed=cfg.seed,
                          frame=task.frame, k=cfg.env.k,
                          spacing=cfg.env.spacing)
    ds.save(out / DATASET_DIR)
    print(f"dataset: {len(ds)} rows from {cfg.scene.n_scenes} scenes "
          f"-> {out / DATASET_DIR}")
    return {}, {"dataset": out / DATASET_DIR}


def _cmd_train(cfg, out, args):
    ds = _load_dataset(out)
    inputs = {"dataset": out / DATASET_DIR}

    if args.model == "vae":
        model, history = train_vae(ds["sim"], cfg.vae, seed=cfg.seed)
        save_vae(model, out / VAE_CKPT)
        _write_history_csv(out / "vae_history.csv", history)
        print(f"vae: recon {history['recon'][-1]:.5f} after "
              f"{cfg.vae.epochs} epochs -> {out / VAE_CKPT}")
        return inputs, {"vae.ckpt": out / VAE_CKPT,
                        "vae_history": out / "vae_history.csv"}

    if args.model == "ced":
        # paired collections are scene-level: one pair per planned scene,
        # optionally capped (sensor-style data is the scarce resource)
        stride = cfg.scene.samples_per_path
        real, sim = ds["real"][::stride], ds["sim"][::stride]
        if cfg.scene.ced_pairs:
            real, sim = real[:cfg.scene.ced_pairs], sim[:cfg.scene.ced_pairs]
        model, history = train_ced(real, sim, cfg.ced, seed=cfg.seed)
        save_ced(model, out / CED_CKPT)
        _write_history_csv(out / "ced_history.csv", {"l1": history})
        print(f"ced: l1 {history[-1]:.5f} over {len(real)} pairs after "
              f"{cfg.ced.epochs} epochs -> {out / CED_CKPT}")
        return inputs, {"ced.ckpt": out / CED_CKPT,
                        "ced_history": out / "ced_history.csv"}

    if args.model == "waygen":
        vae = load_vae(_require(out / VAE_CKPT, "run `train vae` first"))
        inputs["vae.ckpt"] = out / VAE_CKPT
        ced = None
        if cfg.waygen.regime == "ced_plus_sim":
            ced = load_ced(_require(out / CED_CKPT, "run `train ced` first"))
            inputs["ced.ckpt"] = out / CED_CKPT
        net, metrics = train_waygen(ds, cfg.waygen.train_regime(), vae,
                                    ced=ced, cfg=cfg.waygen.train_config(),
                                    seed=cfg.seed)
        tagged = out / waygen_ckpt_name(cfg.waygen.regime,
                                        cfg.waygen.data_fraction)
        save_waygen(net, tagged)
        save_waygen(net, out / WAYGEN_CKPT)
        _write_history_csv(out / "waygen_history.csv",
                           {"train_mse": metrics["train_mse"],
                            "holdout_mse": metrics["holdout_mse"]})
        print(f"waygen[{cfg.waygen.regime} "
              f"@{cfg.waygen.data_fraction:.0%}]: holdout error "
              f"{metrics['holdout_error_mm']:.2f} mm -> {tagged}")
        return inputs, {"waygen.ckpt": out / WAYGEN_CKPT,
                        tagged.name: tagged,
                        "waygen_history": out / "waygen_history.csv"}

    # rl: the dataset is not read, only the frozen model stack
    models = _load_models(cfg, out)
    inputs = {"vae.ckpt": out / VAE_CKPT, "waygen.ckpt": out / WAYGEN_CKPT}
    if models["ced"] is not None:
        inputs["ced.ckpt"] = out / CED_CKPT
    agent, curves = train_sac(lambda: _build_env(cfg, models), cfg.rl,
                              seed=cfg.seed, verbose=True)
    ckpt = out / sac_ckpt_name(cfg.rl.variant)
    save_sac(agent, ckpt)
    curves_path = out / f"curves_{cfg.rl.variant}.csv"
    write_curves_csv(curves, curves_path)
    last = curves[-1] if curves else {}
    print(f"rl[{cfg.rl.variant}]: goal rate "
          f"{last.get('goal_rate', float('nan')):.2f} after "
          f"{cfg.rl.total_env_steps} steps -> {ckpt}")
    return inputs, {ckpt.name: ckpt, curves_path.name: curves_path}


def _regime_cell_factory(cfg, vae, out, regime, ckpt, n_obs):
    def factory():
        ced = None
        if regime == "ced_plus_sim":
            ced = load_ced(_require(out / CED_CKPT, "run `train ced` first"))
        models = {"vae": vae, "ced": ced, "waygen": load_waygen(ckpt)}
        # every cell is scored on sensor-style images; the regimes differ
        # in what the generator was trained on and whether the translator
        # sits in front of the encoder
        return _build_env(cfg, models, n_obs=n_obs, image_style="real",
                          curriculum=CurriculumConfig(enabled=False))
    return factory


def _cmd_eval(cfg, out, args):
    if args.report == "regimes":
        vae = load_vae(_require(out / VAE_CKPT, "run `train vae` first"))
        inputs = {"vae.ckpt": out / VAE_CKPT}
        cells = {}
        for regime in cfg.eval.regimes:
            for fraction in cfg.eval.fractions:
                ckpt = out / waygen_ckpt_name(regime, fraction)
                for n_obs in cfg.eval.n_obs:
                    key = (regime, fraction, n_obs)
                    if not ckpt.exists():
                        cells[key] = None
                    else:
                        inputs[ckpt.name] = ckpt
                        cells[key] = _regime_cell_factory(
                            cfg, vae, out, regime, ckpt, n_obs)
        rows = eval_regime_matrix(cells, episodes=cfg.eval.episodes,
                                  seed=cfg.seed)
        for row in rows:
            print(f"{row['regime']:>14} @{row['fraction']:.0%} "
                  f"n_obs={row['n_obs']}: success "
                  f"{row['success_rate']:.2f}, error "
                  f"{row['waypoint_error_mm']:.2f} mm")
        return inputs, _write_report(out, "regimes",
                                     "Waypoint generator regimes", rows)

    models = _load_models(cfg, out, with_agent=True)
    inputs = {"vae.ckpt": out / VAE_CKPT, "waygen.ckpt": out / WAYGEN_CKPT,
              sac_ckpt_name(cfg.rl.variant): out / sac_ckpt_name(
                  cfg.rl.variant)}
    if models["ced"] is not None:
        inputs["ced.ckpt"] = out / CED_CKPT
    policy = greedy_policy(models["agent"])

    if args.report == "generalization":
        env = _build_env(cfg, models,
                         curriculum=CurriculumConfig(enabled=False))
        rows = []
        for preset in cfg.eval.presets:
            rate = eval_generalization(policy, env, preset,
                                       episodes=cfg.eval.episodes,
                                       seed=cfg.seed)
            rows.append({"preset": preset, "success_rate": rate,
                         "episodes": cfg.eval.episodes})
            print(f"{preset}: success {rate:.2f} over "
                  f"{cfg.eval.episodes} episodes")
        return inputs, _write_report(out, "generalization",
                                     "Scripted scene-change success", rows)

    env = _build_env(cfg, models, curriculum=CurriculumConfig(enabled=False))
    rows = eval_quality(policy, env, seed=cfg.seed)
    for row in rows:
        print(f"start ({row['start_x']:.2f}, {row['start_y']:.2f}): "
              f"policy {row['policy_time_s']:.2f}s vs "
              f"baseline {row['baseline_time_s']:.2f}s")
    return inputs, _write_report(out, "quality",
                                 "Motion quality vs PD follower", rows)


def _load_script(path, cfg):
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise FileNotFoundError(f"script file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ValueError(f"script file {path} is not valid JSON: {exc}") \
            from None
    if not isinstance(doc, dict):
        raise ValueError("script file must hold a JSON object")
    if "preset" in doc:
        unknown = sorted(set(doc) - {"preset", "seed"})
        if unknown:
            raise ValueError(f"script: unknown key(s) {unknown}")
        return doc, make_scenario(doc["preset"], int(doc.get("seed", 0)),
                                  cfg.env.horizon)
    if "events" in doc:
        unknown = sorted(set(doc) - {"events"})
        if unknown:
            raise ValueError(f"script: unknown key(s) {unknown}")
        events = tuple((int(t), dict(edit)) for t, edit in doc["events"])
        return doc, ScenarioScript(events)
    raise ValueError("script file needs a 'preset' or an 'events' key")


def _cmd_demo(cfg, out, args):
    doc, script = _load_script(args.script, cfg)
    models = _load_models(cfg, out, with_agent=True)
    inputs = {"script": Path(args.script), "vae.ckpt": out / VAE_CKPT,
              "waygen.ckpt": out / WAYGEN_CKPT,
              sac_ckpt_name(cfg.rl.variant): out / sac_ckpt_name(
                  cfg.rl.variant)}
    if models["ced"] is not None:
        inputs["ced.ckpt"] = out / CED_CKPT
    env = _build_env(cfg, models, curriculum=CurriculumConfig(enabled=False))
    frames, episode = trace_episode(greedy_policy(models["agent"]), env,
                                    script, seed=cfg.seed)
    trace_path = out / "trace.jsonl"
    write_trace(trace_path, frames)
    summary = {"success": episode.success, "steps": episode.steps,
               "time_s": episode.time_s, "mean_accel": episode.mean_accel,
               "collided": episode.collided, "reached": episode.reached,
               "goal_dist": episode.goal_dist, "frames": len(frames),
               "seed": cfg.seed, "script": doc}
    summary_path = out / "demo_summary.json"
    summary_path.write_text(json.dumps(summary, indent=1, sort_keys=True,
                                       default=float) + "\n")
    print(f"demo: success={episode.success} steps={episode.steps} "
          f"-> {trace_path}")
    return inputs, {"trace": trace_path, "demo_summary": summary_path}


def _cmd_serve(cfg, out, args):
    port = args.port if args.port is not None else cfg.serve.port
    if args.replay:
        frames = read_trace(args.replay)
        from .bridge import run_replay
        run_replay(frames, port=port, hz=cfg.serve.hz)
        return {"trace": Path(args.replay)}, {}
    models = _load_models(cfg, out, with_agent=True)
    env = _build_env(cfg, models, curriculum=CurriculumConfig(enabled=False))
    from .bridge import run_live
    run_live(env, models["agent"], port=port, hz=cfg.serve.hz, seed=cfg.seed)
    return {}, {}


# ---------------------------------------------------------------------------
# argument parsing and dispatch

def _add_common(sp):
    sp.add_argument("--config", help="pipeline config JSON")
    sp.add_argument("--seed", type=int, default=None,
                    help="override the config seed")
    sp.add_argument("--out", help="artifact directory "
                    "(default $REFLEX_DATA_DIR or ./artifacts)")


def _build_parser():
    parser = _Parser(prog="reflexarm",
                     description="dataset, training, evaluation, and demo "
                                 "pipeline for the reactive arm")
    sub = parser.add_subparsers(dest="command", metavar="command",
                                parser_class=_Parser)
    sub.required = True

    g = sub.add_parser("gen-data", help="plan scenes, write the dataset")
    _add_common(g)
    g.set_defaults(handler=_cmd_gen_data)

    t = sub.add_parser("train", help="fit one model")
    t.add_argument("model", choices=("vae", "ced", "waygen", "rl"))
    _add_common(t)
    t.set_defaults(handler=_cmd_train)

    e = sub.add_parser("eval", help="write an evaluation report")
    e.add_argument("report", choices=("regimes", "generalization", "quality"))
    _add_common(e)
    e.set_defaults(handler=_cmd_eval)

    d = sub.add_parser("demo", help="run one scripted episode headless")
    d.add_argument("--script", required=True,
                   help="JSON: {\"preset\", \"seed\"} or {\"events\"}")
    _add_common(d)
    d.set_defaults(handler=_cmd_demo)

    s = sub.add_parser("serve", help="run the live demo server")
    s.add_argument("--port", type=int, default=None)
    s.add_argument("--replay", help="stream a recorded trace instead")
    _add_common(s)
    s.set_defaults(handler=_cmd_serve)
    return parser


def main(argv=None):
    try:
        args = _build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1

    try:
        cfg = load_config(args.config) if args.config else PipelineConfig()
        if args.seed is not None:
            cfg = dataclasses.replace(cfg, seed=args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    out = Path(args.out or os.environ.get("REFLEX_DATA_DIR") or "artifacts")
    out.mkdir(parents=True, exist_ok=True)
    command = " ".join([args.command] +
                       [getattr(args, a) for a in ("model", "report")
                        if hasattr(args, a)])
    try:
        inputs, outputs = args.handler(cfg, out, args)
    except Exception as exc:
        if os.environ.get("REFLEX_DEBUG"):
            raise
        print(f"error: {exc}", file=sys.stderr)
        return 3
    _update_manifest(out, command, cfg, inputs, outputs)
    return 0


def entry():
    raise SystemExit(main())


if __name__ == "__main__":
    entry()
