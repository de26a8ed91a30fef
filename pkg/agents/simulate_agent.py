"""
simulate_agent.py – simulate a labelled fleet of parallel-cell modules.

Writes into the run directory:
    profiles/<module>_c<rate>.csv   capacity_ah,voltage_v per CC charge
    profiles.csv                    index: module_id,c_rate,temperature,path
    labels.csv                      module_id,c_rate,m_soh,sd,range,cv,c_soh_1..N,m_soh_measured
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
from agents.core.simulate import generate_fleet, labels_frame  # noqa: E402


def profile_name(module_id: str, c_rate: float) -> str:
    return f"{module_id}_c{c_rate:g}.csv"


def parse_args(argv=None) -> argparse.Namespace:
    ap = argparse.ArgumentParser(description="Simulate a labelled module fleet")
    settings.add_common_args(ap)
    ap.add_argument("--n-modules", type=int, help="overrides [simulate] n_modules")
    return ap.parse_args(argv)


def main(argv=None) -> None:
    args = parse_args(argv)
    settings.setup_logging("simulate")
    config = settings.load_config(args.config)
    if args.n_modules is not None:
        config["simulate"]["n_modules"] = args.n_modules
    setup = settings.fleet_setup(config, seed=args.seed, workers=args.workers)

    run = settings.RunDir(Path(args.out))
    run.profiles.mkdir(parents=True, exist_ok=True)
    records = generate_fleet(**setup)

    index = []
    for rec in records:
        name = profile_name(rec.module_id, rec.c_rate)
        rec.profile.to_frame().to_csv(run.profiles / name, index=False)
        index.append({"module_id": rec.module_id, "c_rate": rec.c_rate,
                      "temperature": rec.profile.temperature, "path": f"profiles/{name}"})
    pd.DataFrame(index).to_csv(run.profile_index, index=False)
    labels_frame(records).to_csv(run.labels, index=False)

    logging.info("wrote %d profiles and labels to %s", len(records), run.root)
    print(f"[OK]  {len(records)} profiles → {run.profiles}")
    print(f"[OK]  labels → {run.labels}")


if __name__ == "__main__":
    sys.exit(settings.run(main))
