"""
train_agent.py – fit the deployable RVR model for one task on the whole fleet.

Uses the top-n features of selection_<task>.json, tunes the kernel width by
inner K-fold CV and writes model_<task>.json (versioned model format plus
the task and feature names). The model footprint goes to the log.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from agents import settings  # noqa: E402
from agents.core import rvr  # noqa: E402
from agents.core.errors import ConfigError, InputError  # noqa: E402
from agents.core.pipeline import GuardedLabels, tune_width  # noqa: E402
from agents.select_agent import load_dataset  # noqa: E402


def parse_args(argv=None) -> argparse.Namespace:
    ap = argparse.ArgumentParser(description="Train the RVR estimator for one task")
    settings.add_common_args(ap)
    settings.add_task_arg(ap)
    ap.add_argument("--n-features", type=int, help="overrides [evaluate] n_features")
    return ap.parse_args(argv)


def main(argv=None) -> None:
    args = parse_args(argv)
    settings.setup_logging("train")
    config = settings.load_config(args.config)
    task = args.task or settings.default_task(config)
    run_config = settings.run_config(config, task, seed=args.seed, workers=args.workers)
    n_features = args.n_features or settings.reported_count(config)

    run = settings.RunDir(Path(args.out))
    selection = json.loads(settings.require(run.selection(task), "select").read_text())
    ranked = selection["ranked_selected"]
    if n_features > len(ranked):
        raise ConfigError(f"asked for {n_features} features, selection has {len(ranked)}")
    chosen = ranked[:n_features]

    dataset = load_dataset(run)
    y = GuardedLabels(dataset.labels, task).target()
    frame = dataset.features[chosen]
    keep = frame.notna().all(axis=1).to_numpy()
    if not keep.all():
        logging.warning("%s: %d rows lack selected features", task, int((~keep).sum()))
    if keep.sum() < rvr.MIN_TRAIN:
        raise InputError(f"{int(keep.sum())} complete rows, need {rvr.MIN_TRAIN}")
    x, y = frame.to_numpy(dtype=float)[keep], y[keep]

    width, scores = tune_width(x, y, run_config)
    model = rvr.train(x, y, rvr.KernelConfig(width, run_config.include_offset),
                      run_config.limits)
    footprint = model.footprint()

    payload = model.as_dict()
    payload.update({"task": task, "features": chosen,
                    "width_scores": {str(w): s for w, s in scores.items()}})
    settings.write_json(run.model(task), payload)
    logging.info("%s model: width %.3g, footprint %s", task, width, footprint)
    print(f"[OK]  {task}: {model.n_rv} relevance vectors × {model.n_inputs} inputs "
          f"→ {run.model(task)}")


if __name__ == "__main__":
    sys.exit(settings.run(main))
