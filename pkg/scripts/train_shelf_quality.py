"""Build the pick-style (shelf) pipeline and compare the trained policy
against the PD path follower on the six fixed start cells: dataset, image
models, joint-frame waypoint generator, policy, then quality.{csv,json,md}.

Artifacts land in artifacts/shelf. The policy trains on clean renders; the
quality comparison runs end to end on degraded renders through the
translator. Roughly 1.5 h on one desktop core; finished stages are skipped.
"""
from __future__ import annotations

from _common import REPO, load_doc, run_cli, write_config

BASE = REPO / "configs" / "shelf.json"
OUT = REPO / "artifacts" / "shelf"


def main():
    doc = load_doc(BASE)

    if not (OUT / "dataset" / "meta.json").exists():
        run_cli(["gen-data", "--config", str(BASE), "--out", str(OUT)])
    if not (OUT / "vae.ckpt").exists():
        run_cli(["train", "vae", "--config", str(BASE), "--out", str(OUT)])
    if not (OUT / "ced.ckpt").exists():
        run_cli(["train", "ced", "--config", str(BASE), "--out", str(OUT)])
    if not (OUT / "waygen.ckpt").exists():
        run_cli(["train", "waygen", "--config", str(BASE), "--out", str(OUT)])
    if not (OUT / "sac_ours.ckpt").exists():
        run_cli(["train", "rl", "--config", str(BASE), "--out", str(OUT)])

    if not (OUT / "quality.csv").exists():
        doc["env"] = dict(doc.get("env", {}), image_style="real")
        cfg = write_config(doc, OUT / "configs" / "quality_eval.json")
        run_cli(["eval", "quality", "--config", str(cfg), "--out", str(OUT)])


if __name__ == "__main__":
    main()
