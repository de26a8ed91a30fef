"""
extract_agent.py – smooth every Q-V profile, write its IC/DV curves and the fleet feature table.

Reads profiles.csv from the run directory; writes curves/<stem>_ic.csv,
curves/<stem>_dv.csv (abscissa,value) and features.csv (one row per
module and C-rate, empty cells for absent features).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import pandas as pd
from joblib import Parallel, delayed

ROOT = Path(__file__).resolve().parent.parent
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from agents import settings  # noqa: E402
from agents.core.curves import QVProfile, SmoothingConfig  # noqa: E402
from agents.core.errors import InputError, NumericError  # noqa: E402
from agents.core.features import FeatureConfig, extract_features, feature_table  # noqa: E402


def extract_one(run: settings.RunDir, row: dict, smoothing: SmoothingConfig,
                config: FeatureConfig):
    """Curves and feature vector for one index row; None when smoothing fails."""
    path = run.root / row["path"]
    profile = QVProfile.from_frame(pd.read_csv(path), c_rate=float(row["c_rate"]),
                                   module_id=str(row["module_id"]),
                                   temperature=float(row.get("temperature", 25.0)))
    try:
        ic, dv, vector = extract_features(profile, smoothing, config)
    except NumericError as exc:
        return row, None, str(exc)
    stem = Path(row["path"]).stem
    ic.to_frame().to_csv(run.curves / f"{stem}_ic.csv", index=False)
    dv.to_frame().to_csv(run.curves / f"{stem}_dv.csv", index=False)
    return row, vector, ""


def parse_args(argv=None) -> argparse.Namespace:
    ap = argparse.ArgumentParser(description="Extract IC/DV curves and features")
    settings.add_common_args(ap)
    return ap.parse_args(argv)


def main(argv=None) -> None:
    args = parse_args(argv)
    settings.setup_logging("extract")
    config = settings.load_config(args.config)
    smoothing = settings.smoothing_config(config)
    features = settings.feature_config(config)
    workers = settings.pick(args.workers, config["simulate"], "workers", "MODHEALTH_WORKERS", 1)

    run = settings.RunDir(Path(args.out))
    index = pd.read_csv(settings.require(run.profile_index, "simulate"))
    run.curves.mkdir(parents=True, exist_ok=True)
    rows = index.to_dict("records")

    if int(workers) > 1:
        results = Parallel(n_jobs=int(workers))(
            delayed(extract_one)(run, row, smoothing, features) for row in rows)
    else:
        results = [extract_one(run, row, smoothing, features) for row in rows]

    vectors = []
    for row, vector, problem in results:
        if vector is None:
            logging.warning("%s @ %sC skipped: %s", row["module_id"], row["c_rate"], problem)
            sys.stderr.write(f"[WARN]  {row['module_id']} @ {row['c_rate']}C: "
                             f"{problem} – skipped\n")
            continue
        vectors.append(vector)
    if not vectors:
        raise InputError("no profile could be smoothed")

    table = feature_table(vectors)
    table.to_csv(run.features, index=False)
    logging.info("features.csv: %d rows × %d features", len(table), table.shape[1] - 2)
    print(f"[OK]  {len(vectors)}/{len(rows)} profiles → {run.features}")


if __name__ == "__main__":
    sys.exit(settings.run(main))
