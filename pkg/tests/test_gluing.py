import numpy as np
import pytest

from resonate.errors import ConfigError, ContourError, MeshError, SpectrumProximity
from resonate.gluing import (
    Contour,
    bint_contour_sweep,
    bint_norm_estimate,
    decompose,
    gluing_sweep,
    interface_jump,
    projector_difference,
    refinement_study,
    resolvent_defect,
    unit_probes,
)
from resonate.spectra import cavity_mode


@pytest.fixture(scope="module")
def decomposed(closed_benchmark):
    return decompose(closed_benchmark[1].mesh, order=2)


def test_contour_needs_sixteen_nodes():
    with pytest.raises(ContourError):
        Contour(5.0, 1.0, nodes=8).points()


def test_contour_quadrature_integrates_a_simple_pole():
    contour = Contour(5.0, 1.0, nodes=16)
    zs, ws = contour.points()
    assert np.sum(ws / (zs - 5.3)) == pytest.approx(1.0, abs=1e-6)
    assert np.sum(ws / (zs - 9.0)) == pytest.approx(0.0, abs=1e-8)
    # a pole at distance 2r is only damped by the geometric factor 2^-16
    assert abs(np.sum(ws / (zs - 7.0))) <= 1.01 * 0.5**16 / (1 - 0.5**16)
    assert contour.encloses([4.5, 6.5]) == [4.5]


def test_dof_accounting(decomposed):
    nc, nz, ni = decomposed.block_dimensions
    assert nc > 0 and nz > 0 and ni > 0
    assert nc + nz + ni == decomposed.dimension
    assert len(np.intersect1d(decomposed.cavity.free, decomposed.neck.free)) == 0


def test_mesh_without_interface_is_rejected(unit_square_mesh):
    with pytest.raises(MeshError):
        decompose(unit_square_mesh)


def test_random_loads_are_unit_vectors(decomposed):
    X = unit_probes(decomposed, 4, seed=3)
    norms = np.einsum("ij,ij->j", X, decomposed.M @ X)
    assert np.allclose(norms, 1.0)


def test_decoupled_resolvent_vanishes_on_interface(decomposed):
    X = unit_probes(decomposed, 2, seed=1)
    W = decomposed.decoupled_resolvent(-10.0, X)
    assert np.all(W[decomposed.interface_dofs] == 0)


def test_resolvent_identity_far_from_spectrum(decomposed):
    report = resolvent_defect(decomposed, -10.0, probes=5)
    assert report.max < 1e-3
    assert report.flux == "consistent"
    assert len(report.residuals) == 5


def test_spectral_parameter_too_close(decomposed, closed_benchmark):
    u0 = cavity_mode(closed_benchmark[2], 1)
    with pytest.raises(SpectrumProximity):
        resolvent_defect(decomposed, u0.eigenvalue, probes=2)


def test_unknown_flux_is_rejected(decomposed):
    w = np.zeros(decomposed.dofmap.n_dofs)
    with pytest.raises(ConfigError):
        interface_jump(decomposed, w, flux="upwind")


def test_pointwise_jump_of_a_quadratic_vanishes(decomposed):
    coords = decomposed.dofmap.coordinates
    w = coords[:, 0] ** 2 - coords[:, 0] * coords[:, 1] + 0.5 * coords[:, 1] ** 2
    jump = interface_jump(decomposed, w, flux="pointwise")
    assert jump.l2_norm() < 1e-8
    assert len(jump.values) == len(decomposed.interface_edges)


def test_bint_norm_is_positive(decomposed, closed_benchmark):
    u0 = cavity_mode(closed_benchmark[2], 1)
    estimate = bint_norm_estimate(decomposed, u0.eigenvalue + 0.5j * u0.gap, probes=4, iterations=10)
    assert np.isfinite(estimate.estimate) and estimate.estimate > 0
    assert estimate.estimate >= estimate.mean


@pytest.mark.slow
def test_projector_difference_matches_eigenpairs(decomposed, closed_benchmark):
    u0 = cavity_mode(closed_benchmark[2], 1)
    report = projector_difference(decomposed, Contour(u0.eigenvalue, 0.5 * u0.gap))
    assert report.discrepancy < 1e-3


@pytest.mark.slow
def test_pointwise_defect_shrinks_under_refinement(closed_benchmark):
    table = refinement_study(closed_benchmark[1].mesh, [-10.0], probes=4)
    assert (table["flux"] == "pointwise").all()
    assert (table["coarse"] < 1e-3).all()
    assert (table["ratio"] >= 1.5).all()


@pytest.mark.slow
def test_gluing_norms_shrink_with_eps(benchmark):
    sweep = gluing_sweep(benchmark, [0.3, 0.22, 0.16], h=0.1, probes=6, iterations=15, samples=4)
    table = sweep.table
    assert np.all(np.diff(table["bint_norm"]) < 0)
    assert (table["defect_flux"] == "pointwise").all()
    assert (table["defect_residual"] < 1e-3).all()
    assert (table["bint_contour_ratio"] < 10).all()
    assert (table["projector_shrink_change"] < 1e-3).all()


def test_shrunk_contour_keeps_centre_and_nodes():
    small = Contour(5.0, 2.0, nodes=20).shrunk(2.0)
    assert (small.center, small.radius, small.nodes) == (5.0, 1.0, 20)


@pytest.mark.slow
def test_bint_norm_is_uniform_along_the_contour(decomposed, closed_benchmark):
    u0 = cavity_mode(closed_benchmark[2], 1)
    gamma = Contour(u0.eigenvalue, 0.5 * u0.gap)
    sweep = bint_contour_sweep(decomposed, gamma, count=8, probes=4, iterations=10)
    assert len(sweep.estimates) == 8
    assert np.allclose(np.abs(sweep.points - gamma.center), gamma.radius)
    assert np.all(sweep.points.imag != 0)
    assert sweep.ratio < 10


@pytest.mark.slow
def test_projector_is_unchanged_on_a_shrunk_contour(decomposed, closed_benchmark):
    u0 = cavity_mode(closed_benchmark[2], 1)
    gamma = Contour(u0.eigenvalue, 0.5 * u0.gap)
    full = projector_difference(decomposed, gamma)
    small = projector_difference(decomposed, gamma.shrunk(2.0))
    assert abs(full.norm - small.norm) < 1e-3
    assert small.eigen_norm == pytest.approx(full.eigen_norm, abs=1e-12)
