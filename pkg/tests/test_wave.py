import numpy as np
import pytest
import scipy.sparse as sp
from scipy.linalg import eigh

from resonate.errors import CFLViolation, ConfigError, FilterError, FitRefused, NumericalGuardError
from resonate.geometry import benchmark_resonator
from resonate.wave import (
    SpectralWindow,
    WavePacket,
    chebyshev_coefficients,
    decay_fit,
    dominant_period,
    energy_drift,
    evolve,
    pi_projection,
    propagator_forms,
    reflection_1d,
    smooth_cutoff,
    spectral_filter,
    wave_experiment,
    wave_system,
)


@pytest.fixture(scope="module")
def square_system(unit_square_mesh):
    return wave_system(unit_square_mesh)


@pytest.fixture(scope="module")
def square_modes(square_system):
    lam, phi = eigh(square_system.K.matrix.toarray(), np.diag(square_system.mass))
    return lam, phi


def _bump(system):
    coords = system.dofmap.coordinates
    return system.restrict(np.sin(np.pi * coords[:, 0]) * np.sin(np.pi * coords[:, 1]))


def test_window_shape():
    psi = SpectralWindow(1.0, 2.0, 3.0, 4.0)
    assert psi(np.array([0.5, 2.5, 4.5])).tolist() == [0.0, 1.0, 0.0]
    between = psi(np.array([1.5, 3.5]))
    assert np.all((between > 0) & (between < 1))


def test_window_around_a_resonance():
    psi = SpectralWindow.around(10.0, gap=4.0)
    assert (psi.plateau_lo, psi.plateau_hi) == (9.0, 11.0)
    assert (psi.lo, psi.hi) == (8.0, 12.0)


def test_invalid_window_is_a_config_error():
    with pytest.raises(ConfigError):
        SpectralWindow(2.0, 1.0, 3.0, 4.0)
    with pytest.raises(ConfigError):
        SpectralWindow(0.0, 1.0, 3.0, 4.0)


def test_cutoffs_are_nested():
    spec = benchmark_resonator()
    outer, inner = smooth_cutoff(spec, absorber_start=4.0)
    assert inner.outer <= outer.outer
    assert outer.inner > spec.envelope.radius
    centre = np.array([spec.envelope.center])
    assert outer(centre)[0] == 1.0 and inner(centre)[0] == 1.0
    assert outer(np.array([[-1.0 + 3.9, 0.0]]))[0] == 0.0


def test_chebyshev_coefficients_of_a_cubic():
    c = chebyshev_coefficients(lambda x: x**3, 8)
    expected = np.zeros(9)
    expected[1], expected[3] = 0.75, 0.25
    assert np.allclose(c, expected, atol=1e-12)


def test_filter_keeps_modes_inside_the_window(square_system, square_modes):
    lam, phi = square_modes
    psi = SpectralWindow.around(lam[0], gap=lam[1] - lam[0])
    inside = spectral_filter(phi[:, 0], psi, square_system)
    assert np.allclose(inside.values, phi[:, 0], atol=1e-4 * np.abs(phi[:, 0]).max())
    outside = spectral_filter(phi[:, 5], psi, square_system)
    assert np.abs(outside.values).max() < 1e-4 * np.abs(phi[:, 5]).max()
    assert inside.degree + 1 >= np.pi * inside.lam_max / (psi.hi - psi.lo)


def test_filter_degree_cap(square_system, square_modes):
    lam, _ = square_modes
    narrow = SpectralWindow(lam[0] - 1e-3, lam[0] - 5e-4, lam[0] + 5e-4, lam[0] + 1e-3)
    with pytest.raises(FilterError):
        spectral_filter(_bump(square_system), narrow, square_system, max_degree=512)


def test_window_missed_by_every_node_is_not_converged(square_system, square_modes):
    lam, _ = square_modes
    narrow = SpectralWindow(lam[0] - 1e-3, lam[0] - 5e-4, lam[0] + 5e-4, lam[0] + 1e-3)
    # a bare callable hides the support, so the first degree cannot be chosen from it
    with pytest.raises(FilterError) as info:
        spectral_filter(_bump(square_system), lambda x: narrow(x), square_system, max_degree=512)
    assert info.value.details["degree"] > 512


def test_closed_system_conserves_energy(square_system):
    assert square_system.closed
    assert energy_drift(square_system, _bump(square_system), steps=1000) <= 1e-6


def test_step_above_the_stability_limit(square_system):
    f0 = _bump(square_system)
    dt = 1.01 * 2.0 / np.sqrt(square_system.lambda_max())
    with pytest.raises(CFLViolation):
        evolve(WavePacket(f0, np.zeros_like(f0)), square_system, 10 * dt, dt=dt)


def test_trajectory_table(square_system):
    f0 = _bump(square_system)
    traj = evolve(WavePacket(f0, np.zeros_like(f0)), square_system, 1.0, samples=50, probe=f0)
    table = traj.table()
    assert list(table.columns) == ["t", "energy", "local_energy", "probe"]
    assert np.all(np.diff(table["t"]) > 0)
    assert traj.steps * traj.dt >= 1.0


def test_dominant_period():
    t = np.linspace(0.0, 30.0, 3001)
    assert dominant_period(t, np.sin(2 * np.pi * t / 3.0)) == pytest.approx(3.0, rel=1e-4)
    with pytest.raises(NumericalGuardError):
        dominant_period(t[:10], np.sin(t[:10]))


def test_decay_fit_recovers_rate_and_amplitude():
    t = np.linspace(0.0, 20.0, 400)
    fit = decay_fit(t, 3.0 * np.exp(-0.5 * t), target=0.5)
    assert fit.rate == pytest.approx(0.5)
    assert fit.amplitude == pytest.approx(3.0)
    assert fit.relative_error < 1e-10


def test_decay_fit_refuses_below_the_floor():
    t = np.linspace(0.0, 10.0, 400)
    with pytest.raises(FitRefused):
        decay_fit(t, np.exp(-100.0 * t))


def test_projection_normalizations_agree(rng):
    n = 12
    f = rng.standard_normal(n)
    u = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    chi = np.linspace(1.0, 0.0, n)
    mass = np.full(n, 0.1)
    a = pi_projection(f, u, 0.8 - 0.1j, chi, mass)
    b = pi_projection(f, u, 0.8 - 0.1j, chi, mass, normalization="w")
    assert np.allclose(a.field, b.field)
    with pytest.raises(NumericalGuardError):
        pi_projection(f, u, 0.0, chi, mass)


def test_propagator_forms_agree(rng):
    n = 8
    K = sp.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1]).toarray() * n**2
    M = np.diag(np.linspace(0.5, 1.5, n)) / n
    forms = propagator_forms(K, M, 0.7, rng.standard_normal(n), rng.standard_normal(n))
    assert max(forms.values()) < 1e-8


def test_sponge_absorbs_a_pulse():
    result = reflection_1d()
    assert result.reflected < 1e-3
    assert result.absorbed == pytest.approx(1.0 - result.reflected)


@pytest.mark.slow
def test_local_energy_decays_at_the_resonant_rate():
    spec = benchmark_resonator(eps=0.3, neck_length=0.4)
    result = wave_experiment(spec, 0.3, h=0.08)
    assert result.fit.relative_error <= 0.2
    assert result.amplitude_error <= 0.1
