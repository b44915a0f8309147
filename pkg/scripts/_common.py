"""Shared plumbing for the reproduction scripts: config overrides, CLI
invocation with failure propagation, and checkpoint copying."""
from __future__ import annotations

import json
import shutil
import sys
import time
from pathlib import Path

REPO = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(REPO / "src"))

from reflexarm.cli import main as cli_main  # noqa: E402


def load_doc(path):
    with open(path) as f:
        return json.load(f)


def write_config(doc, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def run_cli(argv):
    """Run one CLI command in-process; abort the script on any failure."""
    t0 = time.time()
    print(f"$ reflexarm {' '.join(argv)}", flush=True)
    code = cli_main(list(argv))
    print(f"  [{time.time() - t0:.0f}s]", flush=True)
    if code != 0:
        raise SystemExit(f"command failed with exit {code}: {argv}")


def copy_checkpoint(src, dst):
    """Checkpoints are directories; replace dst with a copy of src."""
    src, dst = Path(src), Path(dst)
    if dst.exists():
        shutil.rmtree(dst)
    shutil.copytree(src, dst)


def best_seed_dir(root, variant="ours"):
    """The RL run to demo/evaluate: highest final goal rate, ties to the
    lowest seed."""
    from reflexarm.rl import read_curves_csv

    best = None
    for d in sorted(root.glob("rl_s*")):
        curves = read_curves_csv(d / f"curves_{variant}.csv")
        rate = curves[-1]["goal_rate"]
        if best is None or rate > best[0]:
            best = (rate, d)
    if best is None:
        raise SystemExit(f"no rl_s*/curves_{variant}.csv under {root}; "
                         f"run train_rl_variants.py first")
    return best[1]
