"""Train the policy comparison: three method variants (full, no teleport
curriculum, no waypoints) across three seeds, each with its own evaluation
curve.

Each seed gets its own artifact directory (artifacts/acceptance/rl_s<N>)
holding copies of the frozen image/waypoint models, the three agent
checkpoints, and curves_<variant>.csv. Requires train_waypoint_regimes.py
first. Roughly 5 h on one desktop core; finished runs are skipped.
"""
from __future__ import annotations

from _common import REPO, copy_checkpoint, load_doc, run_cli, write_config

BASE = REPO / "configs" / "acceptance.json"
ROOT = REPO / "artifacts" / "acceptance"

SEEDS = (0, 1, 2)
VARIANTS = ("ours", "no_curriculum", "baseline_no_waypoints")


def main():
    for name in ("vae.ckpt", "waygen.ckpt"):
        if not (ROOT / name).exists():
            raise SystemExit(f"missing {ROOT / name}; "
                             f"run train_waypoint_regimes.py first")

    doc = load_doc(BASE)
    for variant in VARIANTS:
        for seed in SEEDS:
            out = ROOT / f"rl_s{seed}"
            if (out / f"curves_{variant}.csv").exists():
                continue
            out.mkdir(parents=True, exist_ok=True)
            for name in ("vae.ckpt", "waygen.ckpt"):
                if not (out / name).exists():
                    copy_checkpoint(ROOT / name, out / name)
            doc["rl"] = dict(doc.get("rl", {}), variant=variant)
            cfg = write_config(doc, out / "configs" / f"rl_{variant}.json")
            run_cli(["train", "rl", "--config", str(cfg), "--out", str(out),
                     "--seed", str(seed)])


if __name__ == "__main__":
    main()
