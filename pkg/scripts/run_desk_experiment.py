"""Run the desk-scale synthetic experiment and print the headline metrics.

    python scripts/run_desk_experiment.py --workdir runs/desk [--config overrides.json]
"""

import argparse
import json
import logging
from pathlib import Path

from gesturestyle.experiment import ExperimentConfig, run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--workdir", type=Path, required=True)
    ap.add_argument("--config", type=Path, help="JSON overrides for ExperimentConfig")
    ap.add_argument("--steps", type=int, help="override train.total_iterations")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    overrides = json.loads(args.config.read_text()) if args.config else {}
    if args.steps is not None:
        overrides.setdefault("train", {})["total_iterations"] = args.steps
    cfg = ExperimentConfig.from_dict(overrides)
    args.workdir.mkdir(parents=True, exist_ok=True)
    out = run_experiment(cfg, args.workdir)
    keys = ("seen", "unseen", "probe_style_accuracy", "probe_content_accuracy", "first_rec", "last_rec", "timings")
    print(json.dumps({k: out[k] for k in keys}, indent=2))


if __name__ == "__main__":
    main()
