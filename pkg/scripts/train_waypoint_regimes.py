"""Build the waypoint-generator study end to end: dataset, image models,
one generator per (data regime, data fraction) cell, and the success/error
matrix over obstacle counts.

Artifacts land in artifacts/acceptance. Finished stages are skipped, so
the script resumes after interruption. Roughly 1.5 h on one desktop core,
dominated by dataset planning and image-model epochs.
"""
from __future__ import annotations

from _common import REPO, load_doc, run_cli, write_config

BASE = REPO / "configs" / "acceptance.json"
OUT = REPO / "artifacts" / "acceptance"

FRACTIONS = (0.1, 0.5, 1.0)
# ced_plus_sim at 100% trains last on purpose: it is the reference
# generator, and waygen.ckpt always mirrors the most recent cell
REGIMES = ("real_only", "real_plus_sim", "ced_plus_sim")


def main():
    doc = load_doc(BASE)

    if not (OUT / "dataset" / "meta.json").exists():
        run_cli(["gen-data", "--config", str(BASE), "--out", str(OUT)])
    if not (OUT / "vae.ckpt").exists():
        run_cli(["train", "vae", "--config", str(BASE), "--out", str(OUT)])
    if not (OUT / "ced.ckpt").exists():
        run_cli(["train", "ced", "--config", str(BASE), "--out", str(OUT)])

    for fraction in FRACTIONS:
        for regime in REGIMES:
            tag = f"waygen_{regime}_p{round(fraction * 100):03d}"
            if (OUT / f"{tag}.ckpt").exists():
                continue
            doc["waygen"] = dict(doc.get("waygen", {}),
                                 regime=regime, data_fraction=fraction)
            cfg = write_config(doc, OUT / "configs" / f"{tag}.json")
            run_cli(["train", "waygen", "--config", str(cfg),
                     "--out", str(OUT)])

    if not (OUT / "regimes.csv").exists():
        run_cli(["eval", "regimes", "--config", str(BASE), "--out", str(OUT)])


if __name__ == "__main__":
    main()
