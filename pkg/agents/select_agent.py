"""
select_agent.py – greedy MI/CMI feature selection for one estimation target.

Writes selection_<task>.json (ranked selected set, removed set and the
per-iteration scores). With --dump-scores it also writes the relevance,
redundancy and complementarity tables under scores/<task>/.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import pandas as pd

ROOT = Path(__file__).resolve().parent.parent
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from agents import settings  # noqa: E402
from agents.core.featsel import rank_report, score_matrices, select_features  # noqa: E402
from agents.core.pipeline import Dataset, GuardedLabels  # noqa: E402


def load_dataset(run: settings.RunDir, features: str | None = None,
                 labels: str | None = None) -> Dataset:
    feature_path = Path(features) if features else settings.require(run.features, "extract")
    label_path = Path(labels) if labels else settings.require(run.labels, "simulate")
    return Dataset.from_tables(pd.read_csv(feature_path), pd.read_csv(label_path))


def parse_args(argv=None) -> argparse.Namespace:
    ap = argparse.ArgumentParser(description="Rank features by relevance, redundancy "
                                             "and complementarity")
    settings.add_common_args(ap)
    settings.add_task_arg(ap)
    ap.add_argument("--features", help="feature table (default <out>/features.csv)")
    ap.add_argument("--labels", help="label table (default <out>/labels.csv)")
    ap.add_argument("--threshold", type=float, help="complete-redundancy threshold")
    ap.add_argument("--preselect", nargs="*", default=[], help="features forced into S")
    ap.add_argument("--dump-scores", action="store_true",
                    help="write relevance/redundancy/complementarity CSVs")
    return ap.parse_args(argv)


def main(argv=None) -> None:
    args = parse_args(argv)
    settings.setup_logging("select")
    config = settings.load_config(args.config)
    task = args.task or settings.default_task(config)
    selection = settings.selection_config(config, seed=args.seed, threshold=args.threshold)

    run = settings.RunDir(Path(args.out))
    dataset = load_dataset(run, args.features, args.labels)
    y = GuardedLabels(dataset.labels, task).target()
    result = select_features(dataset.features, y, args.preselect, selection)

    payload = {"task": task, "k": selection.k, "seed": selection.seed,
               "feature_alignment": "ordinal", **result.as_dict(),
               "ranking": rank_report(result).to_dict("records")}
    settings.write_json(run.selection(task), payload)
    logging.info("%s: selected %s", task, ", ".join(result.selected))
    print(f"[OK]  {task}: {len(result.selected)} selected, {len(result.removed)} removed "
          f"→ {run.selection(task)}")

    if args.dump_scores:
        folder = run.scores(task)
        folder.mkdir(parents=True, exist_ok=True)
        scores = score_matrices(dataset.features, y, selection)
        scores.relevance.to_frame().to_csv(folder / "relevance.csv", index_label="feature")
        scores.redundancy.to_csv(folder / "redundancy.csv", index_label="feature")
        scores.complementarity.to_csv(folder / "complementarity.csv", index_label="feature")
        print(f"[OK]  score matrices → {folder}")


if __name__ == "__main__":
    sys.exit(settings.run(main))
