"""
evaluate_agent.py – nested cross-validation for one task.

Writes under evaluate/<task>/:
    report.json            headline metrics, the sweep and the presentation ranking
    pred_vs_truth.csv      per-point prediction, variance and three-sigma interval
    mae_vs_nfeatures.csv   MAE, average 3σ, relevance vectors per feature count
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from agents import settings  # noqa: E402
from agents.core.pipeline import (  # noqa: E402
    GuardedLabels,
    feature_count_sweep,
    presentation_ranking,
)
from agents.select_agent import load_dataset  # noqa: E402


def parse_args(argv=None) -> argparse.Namespace:
    ap = argparse.ArgumentParser(description="Nested LOOCV of selection + RVR")
    settings.add_common_args(ap)
    settings.add_task_arg(ap)
    return ap.parse_args(argv)


def main(argv=None) -> None:
    args = parse_args(argv)
    settings.setup_logging("evaluate")
    config = settings.load_config(args.config)
    task = args.task or settings.default_task(config)
    run_config = settings.run_config(config, task, seed=args.seed, workers=args.workers)
    reported = settings.reported_count(config)

    run = settings.RunDir(Path(args.out))
    dataset = load_dataset(run)
    labels = GuardedLabels(dataset.labels, task)

    sweep, reports = feature_count_sweep(dataset, run_config, labels)
    report = reports[reported]
    ranking = presentation_ranking(dataset, run_config, labels)

    folder = run.report(task)
    folder.mkdir(parents=True, exist_ok=True)
    report.predictions.to_csv(folder / "pred_vs_truth.csv", index=False)
    sweep.to_csv(folder / "mae_vs_nfeatures.csv", index=False)
    settings.write_json(folder / "report.json", {
        **report.metrics(),
        "outer_scheme": "leave-one-out",
        "inner_folds": run_config.inner_folds,
        "kernel_width_grid": list(run_config.kernel_width_grid),
        "sweep": sweep.to_dict("records"),
        "presentation_ranking": {
            "scope": "all data; for presentation only, predictions use per-fold rankings",
            "ranked_selected": list(ranking.selected),
            "removed": list(ranking.removed),
        },
        "labels_read": sorted(set(labels.accessed)),
    })

    logging.info("%s: mae %.5f, coverage %.3f, r %.3f", task, report.mae, report.coverage,
                 report.pearson_r)
    print(f"[OK]  {task}: MAE {report.mae:.5f}  avg 3σ {report.avg_three_sigma:.5f}  "
          f"coverage {report.coverage:.3f}  r {report.pearson_r:.3f} → {folder}")
    if report.n_flagged:
        sys.stderr.write(f"[WARN]  {task}: {report.n_flagged} points excluded "
                         "(missing selected features)\n")


if __name__ == "__main__":
    sys.exit(settings.run(main))
