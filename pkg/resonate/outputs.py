"""Writers for run-directory artifacts.

CSV and JSON are written so that re-running a command with the same
configuration reproduces the files byte for byte.
"""

import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Dict

import matplotlib
import numpy as np
import pandas as pd

matplotlib.use("Agg")

import matplotlib.pyplot as plt

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"

SVG_SETTINGS = {
    "svg.hashsalt": "resonate",
    "svg.fonttype": "none",
    "path.simplify": False,
}


def _plain(value: Any) -> Any:
    """Convert numpy scalars, arrays and complex numbers to JSON types."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (complex, np.complexfloating)):
        return {"re": _plain(value.real), "im": _plain(value.imag)}
    if isinstance(value, (float, np.floating)):
        value = float(value)
        # JSON has no NaN or infinity
        return value if np.isfinite(value) else None
    if isinstance(value, Path):
        return str(value)
    return value


def write_csv(table: pd.DataFrame, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    logger.debug("wrote %s (%d rows)", path, len(table))
    return path


def read_csv(path) -> pd.DataFrame:
    return pd.read_csv(path)


def write_json(data: Dict, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(_plain(data), fh, indent=2, sort_keys=True)
        fh.write("\n")
    logger.debug("wrote %s", path)
    return path


def read_json(path) -> Dict:
    with open(path) as fh:
        return json.load(fh)


def sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def save_svg(fig, path) -> Path:
    """Save a matplotlib figure as SVG without dates or random ids."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with matplotlib.rc_context(SVG_SETTINGS):
        fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    logger.debug("wrote %s", path)
    return path
