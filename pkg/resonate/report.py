"""Aggregate the artifacts of a run directory into one summary.

Each command leaves its own CSV/JSON files behind; this module reads
whatever is present and condenses it to ``summary.json`` and a flat
``summary.csv`` with one row per checked quantity.
"""

import logging
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from resonate.errors import MissingArtifactError
from resonate.outputs import read_csv, read_json, write_csv, write_json
from resonate.resonance import EXCLUDED_FLAGS

logger = logging.getLogger(__name__)

# Tolerances used for the pass/fail verdicts in the summary.
SLOPE_RTOL = 0.15
RATE_RTOL = 0.20
AMPLITUDE_RTOL = 0.10
MIN_EXPONENT = 0.25
DEFECT_MAX = 1e-3
REFINEMENT_FACTOR = 1.5
CONTOUR_RATIO_MAX = 10.0
CROSS_CHECK_MAX = 1e-3
ENERGY_DRIFT_MAX = 1e-6
RATIO_RANGE = (1.6, 2.4)
LIMIT_IM_MAX = 1e-8


def _row(section: str, quantity: str, value, target=None, passed: Optional[bool] = None) -> Dict:
    return {
        "section": section,
        "quantity": quantity,
        "value": value,
        "target": np.nan if target is None else target,
        "passed": "" if passed is None else bool(passed),
    }


def _relative_ok(value: float, target: float, rtol: float) -> bool:
    return bool(np.isfinite(value) and abs(value - target) <= rtol * abs(target))


def _strictly_decreasing(values) -> bool:
    values = np.asarray(values, dtype=float)
    return bool(len(values) > 1 and np.all(np.diff(values) < 0))


def summarize_eigs(run_dir: Path, rows: List[Dict]) -> Dict:
    out = {}
    path = run_dir / "eigenvalues.csv"
    if path.exists():
        table = read_csv(path)
        if "reference" in table:
            errors = (table["eigenvalue"] - table["reference"]).abs() / table["reference"]
            out["max_relative_error"] = float(errors.max())
            rows.append(_row("eigs", "max_relative_error", out["max_relative_error"], 1e-3, out["max_relative_error"] < 1e-3))
        out["eigenvalues"] = table["eigenvalue"].tolist()
    path = run_dir / "comparison_fit.json"
    if path.exists():
        fits = read_json(path)
        table = read_csv(run_dir / "comparison.csv")
        # the table runs from the widest neck down, so norms must shrink along it
        for key in ("sup_compact", "grad_sup_compact"):
            decreasing = _strictly_decreasing(table[key])
            exponent = fits[key]["slope"]
            out[f"{key}_exponent"] = exponent
            rows.append(_row("eigs", f"{key}_decreasing", decreasing, passed=decreasing))
            rows.append(_row("eigs", f"{key}_exponent", exponent, MIN_EXPONENT, exponent >= MIN_EXPONENT))
    return out


def _resonance_trends(path: Path, rows: List[Dict]) -> Dict:
    table = read_csv(path)
    flags = table["flag"].fillna("").astype(str)
    kept = table[~flags.apply(lambda f: any(x in f.split(";") for x in EXCLUDED_FLAGS))]
    kept = kept.sort_values("epsilon", ascending=False)
    alpha_gap = np.abs(kept["alpha_re"] + 1j * kept["alpha_im"] - 1.0).to_numpy()
    rho_gap = np.abs(kept["re_rho"] + 1j * kept["im_rho"] - kept["lambda0"]).to_numpy()
    name = path.stem
    out = {}
    # along decreasing ε: α_ε → 1 and ρ(ε) → λ₀
    for quantity, gap in (("alpha_minus_one", alpha_gap), ("rho_minus_lambda0", rho_gap)):
        ok = _strictly_decreasing(gap)
        value = float(gap[-1]) if len(gap) else np.nan
        rows.append(_row("sweep", f"{quantity}[{name}]", value, passed=ok))
        out[quantity] = value
    return out


def summarize_sweep(run_dir: Path, rows: List[Dict]) -> Dict:
    out = {}
    path = run_dir / "sweep_fit.json"
    if path.exists():
        fit = read_json(path)
        for name, entry in fit["sweeps"].items():
            ok = _relative_ok(entry["slope"], entry["target"], SLOPE_RTOL)
            rows.append(_row("sweep", f"slope[{name}]", entry["slope"], entry["target"], ok))
            rows.append(_row("sweep", f"unflagged_rows[{name}]", entry["unflagged"], 4, entry["unflagged"] >= 4))
        out.update(fit)
        if fit.get("slope_ratio") is not None:
            ratio = fit["slope_ratio"]
            ok = RATIO_RANGE[0] <= ratio <= RATIO_RANGE[1]
            rows.append(_row("sweep", "slope_ratio", ratio, fit.get("length_ratio"), ok))
    for path in sorted(run_dir.glob("sweep*.csv")):
        out.setdefault("trends", {})[path.stem] = _resonance_trends(path, rows)
    path = run_dir / "splitting_fit.json"
    if path.exists():
        fit = read_json(path)
        ok = _relative_ok(fit["slope"], fit["target"], SLOPE_RTOL)
        rows.append(_row("splitting", "slope", fit["slope"], fit["target"], ok))
        out["splitting"] = fit
    return out


def summarize_resonance(run_dir: Path, rows: List[Dict]) -> Dict:
    out = {}
    path = run_dir / "resonance.json"
    if path.exists():
        state = read_json(path)
        trusted = not state["flags"]
        rows.append(_row("resonance", "im_rho", state["rho"]["im"], passed=trusted))
        rows.append(_row("resonance", "pml_spread", state["spread"], 0.1, trusted))
        out["resonance"] = state
    path = run_dir / "oracle_1d.csv"
    if path.exists():
        table = read_csv(path)
        worst = float(table["relative_error"].max())
        rows.append(_row("resonance", "oracle_1d_error", worst, 1e-6, worst <= 1e-6))
        out["oracle_1d_error"] = worst
    path = run_dir / "oracle_limit.csv"
    if path.exists():
        table = read_csv(path).sort_values("height")
        # taller barriers decouple the inner interval: Re ρ → π², Im ρ → 0
        ok = _strictly_decreasing(table["shift"]) and abs(float(table["im"].iloc[-1])) <= LIMIT_IM_MAX
        rows.append(_row("resonance", "oracle_limit_shift", float(table["shift"].iloc[-1]), passed=ok))
        out["oracle_limit_shift"] = float(table["shift"].iloc[-1])
    return out


def summarize_nodal(run_dir: Path, rows: List[Dict]) -> Dict:
    out = {}
    path = run_dir / "courant.csv"
    if path.exists():
        table = read_csv(path)
        ok = bool(table["passed"].astype(str).eq("True").all())
        rows.append(_row("nodal", "courant", int((~table["skipped"].astype(str).eq("True")).sum()), passed=ok))
        out["courant"] = ok
    path = run_dir / "nodal.json"
    if path.exists():
        data = read_json(path)
        floors = [f["verdicts"]["floor"] for f in data.get("fields", [])]
        if floors:
            rows.append(_row("nodal", "volume_floor", len(floors), passed=all(floors)))
            out["volume_floor"] = all(floors)
        if data.get("second_count") is not None:
            rows.append(_row("nodal", "second_count", data["second_count"], 2, data["second_count"] == 2))
        if data.get("threshold") is not None or "monotonicity" in data:
            out["threshold"] = data.get("threshold")
            rows.append(_row("nodal", "monotonicity_threshold", data.get("threshold"), passed=data.get("monotonicity")))
    path = run_dir / "positivity.csv"
    if path.exists():
        table = read_csv(path)
        ok = bool(table["passed"].astype(str).eq("True").all())
        rows.append(_row("nodal", "positivity", len(table), passed=ok))
        out["positivity"] = ok
    return out


def summarize_wave(run_dir: Path, rows: List[Dict]) -> Dict:
    out = {}
    path = run_dir / "wave.json"
    if path.exists():
        data = read_json(path)
        if data.get("offset", 0.0) != 0.0:
            # a packet filtered away from the resonance must not decay at the resonant rate
            plateau = bool(data.get("plateau"))
            rows.append(_row("wave", "off_window_plateau", plateau, False, not plateau))
        else:
            rows.append(_row("wave", "decay_rate", data["rate"], data["target_rate"],
                             _relative_ok(data["rate"], data["target_rate"], RATE_RTOL)))
            rows.append(_row("wave", "amplitude", data["amplitude"], data["predicted_amplitude"],
                             _relative_ok(data["amplitude"], data["predicted_amplitude"], AMPLITUDE_RTOL)))
        if data.get("energy_drift") is not None:
            drift = data["energy_drift"]
            rows.append(_row("wave", "closed_energy_drift", drift, ENERGY_DRIFT_MAX, drift <= ENERGY_DRIFT_MAX))
        out.update(data)
    return out


def summarize_gluing(run_dir: Path, rows: List[Dict]) -> Dict:
    out = {}
    path = run_dir / "gluing.csv"
    if path.exists():
        table = read_csv(path)
        for key in ("bint_norm", "projector_diff_norm"):
            ok = _strictly_decreasing(table[key])
            rows.append(_row("gluing", f"{key}_decreasing", ok, passed=ok))
        flux = str(table["defect_flux"].iloc[0])
        worst = float(table["defect_residual"].max())
        rows.append(_row("gluing", f"defect_residual[{flux}]", worst, DEFECT_MAX, worst < DEFECT_MAX))
        out["defect_residual"] = worst
        ratio = float(table["bint_contour_ratio"].max())
        rows.append(_row("gluing", "bint_contour_ratio", ratio, CONTOUR_RATIO_MAX, ratio < CONTOUR_RATIO_MAX))
        change = float(table["projector_shrink_change"].max())
        rows.append(_row("gluing", "projector_shrink_change", change, CROSS_CHECK_MAX, change < CROSS_CHECK_MAX))
        gap = float((table["projector_diff_norm"] - table["projector_eigen_norm"]).abs().max())
        rows.append(_row("gluing", "projector_eigen_discrepancy", gap, CROSS_CHECK_MAX, gap < CROSS_CHECK_MAX))
        out.update(bint_contour_ratio=ratio, projector_shrink_change=change, projector_eigen_discrepancy=gap)
    path = run_dir / "gluing_fit.json"
    if path.exists():
        fits = read_json(path)
        for key in ("bint_norm", "projector_diff_norm"):
            if key not in fits:
                rows.append(_row("gluing", f"{key}_exponent", np.nan, MIN_EXPONENT, False))
                continue
            exponent = fits[key]["slope"]
            out[f"{key}_exponent"] = exponent
            rows.append(_row("gluing", f"{key}_exponent", exponent, MIN_EXPONENT, exponent >= MIN_EXPONENT))
    path = run_dir / "refinement.csv"
    if path.exists():
        table = read_csv(path)
        flux = str(table["flux"].iloc[0])
        # the baseline bound and the refinement gain are checked on the same defect
        baseline = float(table["coarse"].max())
        rows.append(_row("gluing", f"refinement_baseline_defect[{flux}]", baseline, DEFECT_MAX, baseline < DEFECT_MAX))
        ratio = float(table["ratio"].min())
        rows.append(_row("gluing", f"refinement_ratio[{flux}]", ratio, REFINEMENT_FACTOR, ratio >= REFINEMENT_FACTOR))
        out.update(refinement_baseline_defect=baseline, refinement_ratio=ratio)
    return out


SECTIONS = {
    "eigs": summarize_eigs,
    "sweep": summarize_sweep,
    "resonance": summarize_resonance,
    "nodal": summarize_nodal,
    "wave": summarize_wave,
    "gluing": summarize_gluing,
}


def build_summary(run_dir) -> Dict:
    """Read the run directory and write ``summary.json`` and ``summary.csv``.

    Args:
        run_dir: directory written by earlier commands.

    Returns:
        dict: per-section summaries plus the overall verdict.
    """
    run_dir = Path(run_dir)
    rows: List[Dict] = []
    sections = {}
    for name, summarize in SECTIONS.items():
        section = summarize(run_dir, rows)
        if section:
            sections[name] = section
    if not rows:
        raise MissingArtifactError(
            f"{run_dir}: no command outputs to summarize",
            {"run_dir": str(run_dir), "expected": sorted(SECTIONS)},
        )
    table = pd.DataFrame(rows)
    verdicts = [p for p in table["passed"] if p != ""]
    summary = {"sections": sections, "checks": len(verdicts), "passed": bool(all(verdicts))}
    write_csv(table, run_dir / "summary.csv")
    write_json(summary, run_dir / "summary.json")
    logger.info("summary: %d checks, %d failed", len(verdicts), sum(1 for v in verdicts if not v))
    return summary
