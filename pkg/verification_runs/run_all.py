"""Run every verification experiment and collect the summaries.

Each folder holds one ``config.yaml``; its artifacts go to ``<folder>/run``.
Select folders by name on the command line, e.g.

    python verification_runs/run_all.py rectangle-eigs disc-cavity
"""

import logging
import sys
from pathlib import Path

import pandas as pd
from dotenv import load_dotenv

from resonate.cli import LOG_FORMAT, main
from resonate.config import default_log_level
from resonate.outputs import read_json, write_csv

load_dotenv()

logger = logging.getLogger("verification_runs")

HERE = Path(__file__).resolve().parent

EXPERIMENTS = {
    "rectangle-eigs": ["mesh", "eigs", "nodal"],
    "disc-cavity": ["eigs", "nodal"],
    "benchmark-resonance": ["resonance"],
    "width-law": ["sweep"],
    "dumbbell-splitting": ["sweep"],
    "eigenfunction-comparison": ["eigs"],
    "resolvent-gluing": ["gluing"],
    "nodal-ellipse": ["nodal"],
    "wave-decay": ["wave"],
    "wave-off-window": ["wave"],
}


def run_experiment(name: str) -> dict:
    config = HERE / name / "config.yaml"
    codes = {}
    for command in EXPERIMENTS[name] + ["report"]:
        codes[command] = main([command, "--config", str(config)])
        if codes[command] != 0:
            logger.error("%s: %s exited with %d", name, command, codes[command])
            break
    summary = config.parent / "run" / "summary.json"
    passed = read_json(summary)["passed"] if codes.get("report") == 0 and summary.exists() else False
    return {"experiment": name, "passed": passed, **{f"exit_{k}": v for k, v in codes.items()}}


if __name__ == "__main__":
    logging.basicConfig(level=default_log_level(), format=LOG_FORMAT)
    names = sys.argv[1:] or list(EXPERIMENTS)
    unknown = sorted(set(names) - set(EXPERIMENTS))
    if unknown:
        sys.exit(f"unknown experiments: {', '.join(unknown)}")
    rows = [run_experiment(name) for name in names]
    table = pd.DataFrame(rows)
    write_csv(table, HERE / "overall_summary.csv")
    print(table.to_string(index=False))
    sys.exit(0 if table["passed"].all() else 1)
