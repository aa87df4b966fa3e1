from types import SimpleNamespace

import numpy as np
import pandas as pd
import pytest

from resonate import resonance
from resonate.errors import ConfigError, ResonanceNotFound
from resonate.fem import DiscreteField
from resonate.geometry import benchmark_resonator
from resonate.resonance import (
    EXCLUDED_FLAGS,
    Barrier,
    PMLConfig,
    ResonantState,
    SweepResult,
    decoupling_limit,
    find_resonance,
    lowest_resonance,
    neck_decay_profile,
    oracle_1d,
    oracle_comparison,
    slope_ratio,
    sqrt_rho,
    truncated_problem,
    width_sweep,
)
from resonate.spectra import cavity_mode, track_eigenvalue


def test_sqrt_rho_branch():
    r = sqrt_rho(4.0 - 0.1j)
    assert r.real > 0 and r.imag < 0
    assert r * r == pytest.approx(4.0 - 0.1j)


def test_lifetime_from_width():
    state = ResonantState(rho=4.0 - 0.04j, field=None, alpha=1.0, residual=0.0)
    assert state.width == pytest.approx(0.04)
    assert state.lifetime == pytest.approx(1.0 / (2 * abs(sqrt_rho(4.0 - 0.04j).imag)))
    assert state.trusted
    state.flags.append(EXCLUDED_FLAGS[0])
    assert not state.trusted


def test_growing_root_has_its_own_flag():
    assert "not_outgoing" in EXCLUDED_FLAGS
    state = ResonantState(rho=4.0 + 0.01j, field=None, alpha=1.0, residual=0.0, flags=["not_outgoing"])
    assert not state.trusted


def test_window_is_centred_on_the_cavity_eigenvalue(monkeypatch):
    ops = SimpleNamespace(matrix=None)
    monkeypatch.setattr(resonance, "assemble_absorbing", lambda *args: (ops, ops))
    monkeypatch.setattr(resonance, "complex_eigs", lambda K, M, seed: (np.array([6.0 - 0.01j]), np.ones((3, 1))))
    # the root sits on the seed but a full window away from λ₀
    with pytest.raises(ResonanceNotFound) as info:
        resonance._solve_state(None, None, 6.0, 0.5, 2, center=5.0)
    assert info.value.details["center"] == 5.0


def test_absorber_profile():
    pml = PMLConfig((0.0, 0.0), inner=3.0, thickness=2.0, sigma0=5.0)
    assert pml.outer == 5.0
    assert pml.sigma(np.array([1.0, 3.0])).tolist() == [0.0, 0.0]
    assert pml.sigma(np.array([5.0]))[0] == pytest.approx(5.0)
    assert pml.stretched(np.array([2.0]))[0] == 2.0
    assert pml.stretched(np.array([5.0]))[0].imag == pytest.approx(5.0 * 2.0 / 3.0)


def test_absorber_variants():
    pml = PMLConfig((0.0, 0.0), inner=3.0, thickness=2.0, sigma0=5.0)
    variants = pml.variants()
    assert set(variants) == {"sigma_half", "sigma_double", "thick"}
    assert variants["sigma_half"].sigma0 == 2.5
    assert variants["sigma_double"].sigma0 == 10.0
    assert variants["thick"].thickness == pytest.approx(3.0)
    assert variants["thick"].inner == pml.inner


def test_invalid_absorber_is_a_config_error():
    with pytest.raises(ConfigError):
        PMLConfig((0.0, 0.0), inner=3.0, thickness=0.0, sigma0=5.0)
    with pytest.raises(ConfigError):
        PMLConfig.for_wavenumber(benchmark_resonator(), 10.0, inner=1.0)


def test_absorber_defaults_follow_the_wavelength():
    spec = benchmark_resonator()
    pml = PMLConfig.for_wavenumber(spec, np.pi**2)
    assert pml.thickness == pytest.approx(2.0)
    assert pml.inner == pytest.approx(spec.envelope.radius + 2.0)
    assert pml.center == spec.envelope.center


def test_barrier_root_sits_below_the_inner_eigenvalue():
    root = oracle_1d((Barrier(50.0, 1.0, 1.2),), [np.pi**2 - 0.01j])[0]
    assert root.imag < 0
    # the wave leaks into the barrier, so the effective well is longer than 1
    assert root.real < np.pi**2
    assert root == pytest.approx(7.346 - 0.185j, abs=5e-3)
    assert lowest_resonance((Barrier(50.0, 1.0, 1.2),)) == pytest.approx(root, abs=1e-6)


def test_reference_barrier_resonance():
    root = lowest_resonance((Barrier(10.0, 1.0, 1.5),))
    assert root.imag < 0
    assert 0 < root.real < np.pi**2


def test_tall_barriers_decouple_the_inner_interval():
    table = decoupling_limit()
    assert table["height"].tolist() == sorted(table["height"])
    assert np.all(np.diff(table["shift"]) < 0)
    assert abs(table["im"].iloc[1]) < abs(table["im"].iloc[0])
    assert table["shift"].iloc[-1] < 0.08
    assert abs(table["im"].iloc[-1]) <= 1e-8


def test_absorbing_layer_matches_oracle():
    table = oracle_comparison()
    assert list(table["case"]) == ["reference", "single", "thin", "double"]
    assert (table["relative_error"] <= 1e-6).all()
    assert (table["oracle_im"] < 0).all()


def test_slope_ratio():
    empty = pd.DataFrame()
    short = SweepResult(empty, -2.5, 0.0, 0.0, -2.5, 0.4)
    long = SweepResult(empty, -5.0, 0.0, 0.0, -5.0, 0.8)
    assert slope_ratio(short, long) == pytest.approx(2.0)
    assert short.relative_error == 0.0


def test_neck_decay_of_a_synthetic_mode(closed_benchmark):
    spec, closed, _ = closed_benchmark
    eps = spec.eps
    field = DiscreteField.interpolate(
        closed.dofmap,
        lambda p: np.exp(-np.pi * p[:, 0] / eps) * np.cos(np.pi * p[:, 1] / eps),
    )
    profile = neck_decay_profile(field, spec)
    assert profile.target == pytest.approx(-np.pi / eps)
    assert profile.relative_error < 0.02


@pytest.mark.slow
def test_benchmark_resonance_is_trusted(closed_benchmark):
    spec, closed, cavity = closed_benchmark
    u0 = cavity_mode(cavity, 1)
    v = track_eigenvalue(u0, closed)
    problem = truncated_problem(spec, u0.eigenvalue, h=0.12, order=2)
    state = find_resonance(problem, v.eigenvalue, 0.5 * u0.gap, lam0=u0.eigenvalue)
    assert state.lam0 == u0.eigenvalue
    assert state.rho.imag < 0
    assert abs(state.rho.real - v.eigenvalue) < 0.5 * u0.gap
    assert state.spread < 0.1
    assert state.trusted


@pytest.mark.slow
def test_width_law_slope():
    spec = benchmark_resonator(eps=0.3, neck_length=0.4)
    result = width_sweep(spec, [0.30, 0.26, 0.22, 0.19, 0.16, 0.14], h=0.08)
    assert len(result.trusted_rows()) >= 4
    assert result.relative_error <= 0.15
