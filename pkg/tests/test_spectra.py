import numpy as np
import pytest
from scipy.special import jn_zeros

from resonate.errors import EigenSolverError, FitRefused, TrackingError
from resonate.geometry import CavitySpec, RectangleSpec, benchmark_resonator, build_dumbbell
from resonate.mesh import triangulate
from resonate.spectra import (
    Discretization,
    RateFit,
    cavity_mode,
    compare_fields,
    comparison_sweep,
    dirichlet_eigs,
    extend_from_submesh,
    fix_sign,
    gram_matrix,
    restrict_to_submesh,
    splitting,
    track_eigenvalue,
)

SWEEP = [0.40, 0.33, 0.28, 0.24, 0.21]


def test_rectangle_eigenvalues(rectangle_disc):
    pairs = dirichlet_eigs(rectangle_disc.K, rectangle_disc.M, count=3, probe=None)
    rect = RectangleSpec(1.0, 2.0)
    exact = [rect.eigenvalue(1, 1), rect.eigenvalue(1, 2), rect.eigenvalue(1, 3)]
    computed = [p.eigenvalue for p in pairs]
    assert computed == pytest.approx(exact, rel=1e-3)
    assert computed == sorted(computed)


def test_disc_ground_state():
    disc = Discretization.build(triangulate(CavitySpec.disc(1.0), 0.05), order=2)
    pair = cavity_mode(disc, 1)
    assert pair.eigenvalue == pytest.approx(jn_zeros(0, 1)[0] ** 2, rel=1e-3)
    assert pair.index == 1
    assert pair.gap > 0


def test_pairs_are_mass_orthonormal(rectangle_disc):
    pairs = dirichlet_eigs(rectangle_disc.K, rectangle_disc.M, count=4, probe=None)
    G = gram_matrix(pairs, rectangle_disc.M)
    assert np.allclose(G, np.eye(4), atol=1e-8)
    assert all(p.residual <= 1e-8 for p in pairs)


def test_fix_sign_makes_reference_point_positive(rectangle_disc):
    pair = dirichlet_eigs(rectangle_disc.K, rectangle_disc.M, count=1, probe=None)[0]
    flipped = pair.field.with_values(-pair.field.values)
    probe = (0.3, 0.4)
    assert fix_sign(flipped, probe).evaluate(np.array([probe]))[0] > 0


def test_too_many_pairs_is_an_error(unit_square_mesh):
    disc = Discretization.build(unit_square_mesh, order=1)
    with pytest.raises(EigenSolverError):
        dirichlet_eigs(disc.K, disc.M, count=disc.K.dimension + 1)


def test_tracking_stays_below_the_cavity_eigenvalue(closed_benchmark):
    _, closed, cavity = closed_benchmark
    u0 = cavity_mode(cavity, 1)
    v = track_eigenvalue(u0, closed)
    # Dirichlet monotonicity: 𝒞 ⊂ 𝒞(ε)
    assert v.eigenvalue < u0.eigenvalue
    assert abs(v.eigenvalue - u0.eigenvalue) < 0.5 * u0.gap
    assert v.index == 1


def test_tracking_rejects_clusters(closed_benchmark):
    _, closed, cavity = closed_benchmark
    u0 = cavity_mode(cavity, 1)
    u0.cluster = True
    with pytest.raises(TrackingError):
        track_eigenvalue(u0, closed)


def test_submesh_transfer_roundtrip(closed_benchmark, rng):
    _, closed, cavity = closed_benchmark
    x = rng.standard_normal(cavity.dofmap.n_dofs)
    up = extend_from_submesh(x, cavity.dofmap, closed.dofmap)
    assert np.array_equal(restrict_to_submesh(up, closed.dofmap, cavity.dofmap), x)


def test_compare_fields_reports_small_differences(closed_benchmark):
    spec, closed, cavity = closed_benchmark
    u0 = cavity_mode(cavity, 1)
    v = track_eigenvalue(u0, closed)
    report = compare_fields(u0, v, closed, spec.cavity, margin=0.1, eps=spec.eps)
    assert 0 < report.sup_compact <= report.sup_full
    assert report.sup_compact < 0.5 * np.max(np.abs(u0.field.values))
    assert report.eigenvalue_gap == pytest.approx(u0.eigenvalue - v.eigenvalue)


def test_rate_fit_recovers_a_line():
    x = np.array([1.0, 2.0, 3.0, 4.0])
    fit = RateFit.fit(x, 2.0 - 0.5 * x)
    assert fit.slope == pytest.approx(-0.5)
    assert fit.intercept == pytest.approx(2.0)
    assert fit.points == 4


def test_rate_fit_needs_three_points():
    with pytest.raises(FitRefused):
        RateFit.fit([1.0, 2.0], [0.0, 1.0])


@pytest.mark.slow
def test_eigenfunction_comparison_rates():
    spec = benchmark_resonator(eps=0.4, neck_length=0.4)
    table, fits = comparison_sweep(spec, [0.4, 0.33, 0.28, 0.24, 0.21, 0.17, 0.14, 0.12, 0.1], h=0.08)
    for key in ("sup_compact", "grad_sup_compact"):
        assert np.all(np.diff(table[key]) < 0)
        assert fits[key].slope >= 0.25


@pytest.mark.slow
def test_splitting_law():
    dumbbell = build_dumbbell(CavitySpec.disc(1.0), 0.4, 0.4)
    result = splitting(dumbbell, SWEEP, h=0.08)
    assert np.all(result.table["E2"] > result.table["E1"])
    assert result.fit.slope == pytest.approx(-np.pi * 0.4, rel=0.15)
