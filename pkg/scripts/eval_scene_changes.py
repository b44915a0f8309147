"""Score the end-to-end system under scripted mid-episode scene changes
(moving goal, relocated obstacles), comparing the translator-based image
pipeline against the degraded-image-only pipeline with the same policy.

Reads the models produced by train_waypoint_regimes.py and the best
policy from train_rl_variants.py; writes scene_changes.{csv,json,md} to
artifacts/acceptance. A few minutes on one core.
"""
from __future__ import annotations

from _common import REPO, best_seed_dir, load_doc

BASE = REPO / "configs" / "acceptance.json"
ROOT = REPO / "artifacts" / "acceptance"

# the two pipelines only differ in image handling at evaluation time:
# translate degraded frames back to clean style, or encode them raw
PIPELINES = {
    "ced_plus_sim": {"waygen": "waygen_ced_plus_sim_p100.ckpt", "ced": True},
    "real_only": {"waygen": "waygen_real_only_p100.ckpt", "ced": False},
}


def build_env(doc, waygen_path, use_ced):
    import dataclasses

    from reflexarm.config import build_config
    from reflexarm.env import ArmEnv, CurriculumConfig, TaskSpec
    from reflexarm.real2sim import load_ced
    from reflexarm.vae import load_vae
    from reflexarm.waygen import load_waygen

    cfg = build_config(doc)
    env_cfg = dataclasses.replace(cfg.env.env_config(), image_style="real")
    return ArmEnv(arm=cfg.arm,
                  task=TaskSpec(cfg.scene.task, cfg.scene.n_obs_choices),
                  waygen=load_waygen(ROOT / waygen_path),
                  vae=load_vae(ROOT / "vae.ckpt"),
                  ced=load_ced(ROOT / "ced.ckpt") if use_ced else None,
                  planner_cfg=cfg.planner, sensor=cfg.scene.sensor,
                  coeffs=cfg.env.reward,
                  curriculum=CurriculumConfig(enabled=False),
                  cfg=env_cfg)


def main():
    from reflexarm.evaluation import (eval_generalization, greedy_policy,
                                      markdown_summary, write_report_json,
                                      write_rows_csv)
    from reflexarm.rl import load_sac

    doc = load_doc(BASE)
    episodes = doc.get("eval", {}).get("episodes", 50)
    seed = doc.get("seed", 0)
    agent_dir = best_seed_dir(ROOT)
    policy = greedy_policy(load_sac(agent_dir / "sac_ours.ckpt"))
    print(f"policy: {agent_dir / 'sac_ours.ckpt'}")

    rows = []
    for name, parts in PIPELINES.items():
        env = build_env(doc, parts["waygen"], parts["ced"])
        for preset in ("moving_goal", "random_obstacles"):
            rate = eval_generalization(policy, env, preset,
                                       episodes=episodes, seed=seed)
            rows.append({"pipeline": name, "preset": preset,
                         "success_rate": rate, "episodes": episodes})
            print(f"{name} / {preset}: success {rate:.2f}", flush=True)

    write_rows_csv(rows, ROOT / "scene_changes.csv")
    write_report_json({"title": "Scene-change generalization", "rows": rows,
                       "policy": str(agent_dir / "sac_ours.ckpt")},
                      ROOT / "scene_changes.json")
    (ROOT / "scene_changes.md").write_text(
        markdown_summary("Scene-change generalization", rows))


if __name__ == "__main__":
    main()
