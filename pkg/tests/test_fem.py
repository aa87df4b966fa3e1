import numpy as np
import pytest
import scipy.sparse as sp

from resonate.errors import AssemblyError, SolverError
from resonate.fem import (
    DiscreteField,
    DofMap,
    Factorization,
    assemble,
    boundary_mass,
    export_matrix,
    lumped_mass,
    normal_flux,
    region_mass,
    solve_linear,
)
from resonate.mesh import CAVITY, DIRICHLET_WALL


@pytest.mark.parametrize("order", [1, 2])
def test_mass_integrates_constants(unit_square_mesh, order):
    K, M = assemble(unit_square_mesh, order)
    ones = np.ones(K.dofmap.n_dofs)
    assert ones @ (M.full @ ones) == pytest.approx(1.0, abs=1e-12)
    # constants are in the kernel of the unconstrained stiffness
    assert np.abs(K.full @ ones).max() < 1e-10


@pytest.mark.parametrize("order", [1, 2])
def test_stiffness_energy_of_linear_function(unit_square_mesh, order):
    K, _ = assemble(unit_square_mesh, order)
    u = K.dofmap.coordinates[:, 0] + 2.0 * K.dofmap.coordinates[:, 1]
    # |grad u|^2 = 5 over the unit square
    assert u @ (K.full @ u) == pytest.approx(5.0, rel=1e-10)


def test_operators_are_symmetric(unit_square_mesh):
    K, M = assemble(unit_square_mesh, 2)
    assert abs(K.matrix - K.matrix.T).max() < 1e-12
    assert abs(M.matrix - M.matrix.T).max() < 1e-12


def test_dirichlet_dofs_are_eliminated(unit_square_mesh):
    K, _ = assemble(unit_square_mesh, 2)
    bnd = K.dofmap.boundary_dofs()
    assert len(np.intersect1d(bnd, K.free)) == 0
    assert len(bnd) + len(K.free) == K.dofmap.n_dofs
    x = np.arange(K.dimension, dtype=float)
    full = K.expand(x)
    assert np.all(full[bnd] == 0.0)
    assert np.array_equal(K.restrict(full), x)


def test_p2_dof_count(unit_square_mesh):
    dofmap = DofMap(unit_square_mesh, 2)
    edges, _ = unit_square_mesh.unique_edges()
    assert dofmap.n_dofs == unit_square_mesh.n_vertices + len(edges)


def test_invalid_order_is_rejected(unit_square_mesh):
    with pytest.raises(AssemblyError):
        DofMap(unit_square_mesh, 3)


def test_p2_reproduces_quadratics(unit_square_mesh):
    dofmap = DofMap(unit_square_mesh, 2)
    fn = lambda p: p[:, 0] ** 2 - 3 * p[:, 0] * p[:, 1] + 0.5
    field = DiscreteField.interpolate(dofmap, fn)
    points = np.array([[0.13, 0.71], [0.5, 0.5], [0.91, 0.07]])
    assert np.allclose(field.evaluate(points), fn(points), atol=1e-12)
    grad = field.gradient(points)
    exact = np.stack([2 * points[:, 0] - 3 * points[:, 1], -3 * points[:, 0]], axis=1)
    assert np.allclose(grad, exact, atol=1e-10)


def test_evaluate_outside_raises(unit_square_mesh):
    field = DiscreteField(DofMap(unit_square_mesh, 1), np.zeros(unit_square_mesh.n_vertices))
    with pytest.raises(AssemblyError):
        field.evaluate(np.array([[2.0, 2.0]]))


def test_field_length_is_checked(unit_square_mesh):
    with pytest.raises(AssemblyError):
        DiscreteField(DofMap(unit_square_mesh, 1), np.zeros(3))


def test_poisson_solution_matches_series(unit_square_mesh):
    # -Δu = 2π² sin(πx) sin(πy) has u = sin(πx) sin(πy)
    K, M = assemble(unit_square_mesh, 2)
    coords = K.dofmap.coordinates
    exact = np.sin(np.pi * coords[:, 0]) * np.sin(np.pi * coords[:, 1])
    load = K.restrict(M.full @ (2 * np.pi**2 * exact))
    u = K.expand(solve_linear(K.matrix, load))
    assert np.max(np.abs(u - exact)) < 5e-3


def test_singular_matrix_is_reported():
    A = sp.csr_matrix(np.array([[1.0, 1.0], [1.0, 1.0]]))
    with pytest.raises(SolverError) as info:
        Factorization(A)
    assert "pivot" in info.value.details


def test_complex_solve():
    A = sp.csr_matrix(np.array([[2.0 + 1j, 0.5], [0.5, 3.0 - 1j]]))
    b = np.array([1.0, 2.0j])
    x = solve_linear(A, b)
    assert np.allclose(A @ x, b)


def test_lumped_mass_sums_to_area(unit_square_mesh):
    _, M = assemble(unit_square_mesh, 1, natural=())
    total = np.asarray(M.full.sum(axis=1)).ravel().sum()
    assert total == pytest.approx(1.0)
    assert np.all(lumped_mass(M) > 0)


def test_region_mass_measures_the_cavity(closed_benchmark):
    _, closed, _ = closed_benchmark
    mesh = closed.mesh
    cavity = np.nonzero(mesh.regions == CAVITY)[0]
    Mc = region_mass(closed.dofmap, cavity)
    ones = np.ones(closed.dofmap.n_dofs)
    assert ones @ (Mc @ ones) == pytest.approx(mesh.area([CAVITY]), rel=1e-12)


def test_boundary_mass_measures_perimeter(unit_square_mesh):
    for order in (1, 2):
        dofmap = DofMap(unit_square_mesh, order)
        Mb, dofs, _ = boundary_mass(dofmap, unit_square_mesh.tagged(DIRICHLET_WALL))
        ones = np.ones(len(dofs))
        assert ones @ (Mb @ ones) == pytest.approx(4.0)


def test_flux_satisfies_divergence_theorem(unit_square_mesh):
    # u = x(1 - x) has -Δu = 2, so the outward flux through the boundary is -2
    K, M = assemble(unit_square_mesh, 2)
    coords = K.dofmap.coordinates
    field = DiscreteField(K.dofmap, coords[:, 0] * (1 - coords[:, 0]))
    flux = normal_flux(field, DIRICHLET_WALL, K, M, load=np.full(K.dofmap.n_dofs, 2.0))
    assert flux.total == pytest.approx(-2.0, abs=1e-10)
    assert flux.total_outflow == pytest.approx(2.0, abs=1e-10)
    assert len(flux.edges) == len(unit_square_mesh.tagged(DIRICHLET_WALL))


def test_export_matrix(tmp_path):
    A = sp.csr_matrix(np.array([[1.0, 0.0], [2.5, -1.0]]))
    path = export_matrix(A, tmp_path / "A.txt")
    lines = path.read_text().splitlines()
    assert lines[0] == "% 2 2 3"
    assert "1 0 2.5 0.0" in lines
