import numpy as np
import pandas as pd
import pytest

from resonate.errors import MissingArtifactError
from resonate.outputs import read_csv, write_csv, write_json
from resonate.report import build_summary


def _gluing_table(**overrides):
    data = {
        "epsilon": [0.3, 0.2],
        "bint_norm": [0.5, 0.2],
        "bint_contour_ratio": [1.8, 2.1],
        "projector_diff_norm": [0.1, 0.01],
        "projector_eigen_norm": [0.1002, 0.0101],
        "projector_shrink_change": [2e-5, 4e-5],
        "defect_residual": [1e-6, 2e-6],
        "defect_flux": ["pointwise", "pointwise"],
    }
    data.update(overrides)
    return pd.DataFrame(data)


def _sweep_table(**overrides):
    data = {
        "epsilon": [0.2, 0.3, 0.25, 0.15],
        "lambda0": [5.78] * 4,
        "re_rho": [5.70, 5.50, 5.62, 5.75],
        "im_rho": [-1e-3, -2e-2, -5e-3, -1e-5],
        "alpha_re": [1.01, 1.1, 1.04, 1.002],
        "alpha_im": [0.001, 0.02, 0.005, 0.0001],
        "flag": ["", "", "", "precision_floor"],
    }
    data.update(overrides)
    return pd.DataFrame(data)


def _quantities(run_dir):
    table = read_csv(run_dir / "summary.csv")
    return dict(zip(table["quantity"], table["passed"].astype(str)))


def test_empty_run_directory(tmp_path):
    with pytest.raises(MissingArtifactError) as info:
        build_summary(tmp_path)
    assert info.value.exit_code == 4


def test_eigenvalue_errors_are_checked(tmp_path):
    write_csv(
        pd.DataFrame({"index": [1, 2], "eigenvalue": [12.3371, 19.7393], "reference": [12.3370, 19.7392]}),
        tmp_path / "eigenvalues.csv",
    )
    summary = build_summary(tmp_path)
    assert summary["passed"]
    assert summary["checks"] == 1
    assert summary["sections"]["eigs"]["max_relative_error"] < 1e-3
    assert (tmp_path / "summary.csv").exists()


def test_failed_slope_fails_the_run(tmp_path):
    write_json({"slope": -1.0, "target": -1.2566, "mode": 1}, tmp_path / "splitting_fit.json")
    summary = build_summary(tmp_path)
    assert not summary["passed"]
    table = read_csv(tmp_path / "summary.csv")
    assert table.loc[0, "quantity"] == "slope"


def test_wave_and_gluing_sections(tmp_path):
    write_json(
        {"offset": 0.0, "rate": 0.101, "target_rate": 0.1, "amplitude": 0.98,
         "predicted_amplitude": 1.0, "energy_drift": 1e-9},
        tmp_path / "wave.json",
    )
    write_csv(_gluing_table(), tmp_path / "gluing.csv")
    summary = build_summary(tmp_path)
    assert summary["passed"]
    assert summary["checks"] == 9
    assert "defect_residual[pointwise]" in _quantities(tmp_path)


@pytest.mark.parametrize(
    "column, values",
    [
        ("bint_contour_ratio", [1.8, 12.0]),
        ("projector_shrink_change", [2e-5, 5e-3]),
        ("projector_eigen_norm", [0.1, 0.05]),
    ],
)
def test_gluing_cross_checks_fail_the_run(tmp_path, column, values):
    write_csv(_gluing_table(**{column: values}), tmp_path / "gluing.csv")
    assert not build_summary(tmp_path)["passed"]


def test_gluing_exponents_are_checked(tmp_path):
    write_json(
        {"bint_norm": {"slope": 0.4, "intercept": 0.0, "stderr": 0.01, "rvalue": 0.99, "points": 4},
         "projector_diff_norm": {"slope": 0.1, "intercept": 0.0, "stderr": 0.01, "rvalue": 0.99, "points": 4}},
        tmp_path / "gluing_fit.json",
    )
    summary = build_summary(tmp_path)
    assert not summary["passed"]
    assert summary["sections"]["gluing"]["bint_norm_exponent"] == 0.4
    verdicts = _quantities(tmp_path)
    assert verdicts["bint_norm_exponent"] == "True"
    assert verdicts["projector_diff_norm_exponent"] == "False"


def test_missing_gluing_fit_fails(tmp_path):
    write_json({}, tmp_path / "gluing_fit.json")
    assert not build_summary(tmp_path)["passed"]


def test_refinement_baseline_uses_the_refined_flux(tmp_path):
    write_csv(
        pd.DataFrame({"z_re": [-10.0], "z_im": [0.0], "coarse": [4e-3], "fine": [1e-3], "ratio": [4.0],
                      "flux": ["pointwise"]}),
        tmp_path / "refinement.csv",
    )
    summary = build_summary(tmp_path)
    assert not summary["passed"]
    verdicts = _quantities(tmp_path)
    assert verdicts["refinement_baseline_defect[pointwise]"] == "False"
    assert verdicts["refinement_ratio[pointwise]"] == "True"


def test_resonance_trends_along_the_sweep(tmp_path):
    write_csv(_sweep_table(), tmp_path / "sweep.csv")
    summary = build_summary(tmp_path)
    assert summary["passed"]
    trends = summary["sections"]["sweep"]["trends"]["sweep"]
    # the flagged ε = 0.15 row is left out
    assert trends["rho_minus_lambda0"] == pytest.approx(abs(5.70 - 1e-3j - 5.78))
    assert trends["alpha_minus_one"] == pytest.approx(np.hypot(0.01, 0.001))


def test_resonance_drifting_from_lambda0_fails(tmp_path):
    write_csv(_sweep_table(re_rho=[5.40, 5.50, 5.62, 5.75]), tmp_path / "sweep.csv")
    summary = build_summary(tmp_path)
    assert not summary["passed"]
    assert _quantities(tmp_path)["rho_minus_lambda0[sweep]"] == "False"


def test_off_window_packet_must_not_plateau(tmp_path):
    write_json({"offset": 1.5, "plateau": True}, tmp_path / "wave.json")
    assert not build_summary(tmp_path)["passed"]
