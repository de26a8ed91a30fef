"""modhealth CLI: run one estimation stage, or the whole chain with ``all``."""

from __future__ import annotations

import argparse
import subprocess
import sys
from pathlib import Path

from agents import settings
from agents.core.errors import ModHealthError

ROOT = Path(__file__).resolve().parent
AGENTS = ROOT / "agents"

STAGE_TO_SCRIPT = {
    "simulate": AGENTS / "simulate_agent.py",
    "extract": AGENTS / "extract_agent.py",
    "select": AGENTS / "select_agent.py",
    "train": AGENTS / "train_agent.py",
    "evaluate": AGENTS / "evaluate_agent.py",
}
PER_TASK = ("select", "train", "evaluate")


def run_script(path: Path, extra: list[str]) -> int:
    return subprocess.run([sys.executable, str(path), *extra]).returncode


def configured_tasks(extra: list[str]) -> list[str]:
    ap = argparse.ArgumentParser(add_help=False)
    ap.add_argument("--config")
    known, _ = ap.parse_known_args(extra)
    return settings.tasks(settings.load_config(known.config))


def run_all(extra: list[str]) -> int:
    for stage in ("simulate", "extract"):
        code = run_script(STAGE_TO_SCRIPT[stage], extra)
        if code:
            return code
    try:
        tasks = configured_tasks(extra)
    except ModHealthError as exc:
        sys.stderr.write(f"[ERROR] {exc}\n")
        return settings.exit_code(exc)
    for task in tasks:
        for stage in PER_TASK:
            code = run_script(STAGE_TO_SCRIPT[stage], [*extra, "--task", task])
            if code:
                return code
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        description="Estimate CtCV and module SoH from module-level charging curves",
        epilog="Arguments after the stage (--config, --out, --seed, ...) go to the stage.",
    )
    parser.add_argument("stage", choices=[*STAGE_TO_SCRIPT.keys(), "all"], help="Stage to run")
    args, extra = parser.parse_known_args(argv)

    if args.stage == "all":
        return run_all(extra)
    return run_script(STAGE_TO_SCRIPT[args.stage], extra)


if __name__ == "__main__":
    sys.exit(main())
