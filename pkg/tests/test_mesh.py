import numpy as np
import pytest

from resonate.errors import MeshError
from resonate.geometry import CavitySpec, RectangleSpec, build_dumbbell
from resonate.mesh import (
    CAVITY,
    DIRICHLET_WALL,
    INTERFACE,
    NECK,
    SYMMETRY_PLANE,
    Mesh,
    neck_transect_counts,
    read_mesh,
    refine,
    triangulate,
    write_mesh,
)


def _edge_set(edges):
    return {tuple(sorted(e)) for e in np.asarray(edges).tolist()}


def test_unit_square_area_is_exact(unit_square_mesh):
    assert unit_square_mesh.area() == pytest.approx(1.0, abs=1e-6)


def test_unit_disc_area():
    mesh = triangulate(CavitySpec.disc(1.0), 0.05)
    assert mesh.area() == pytest.approx(np.pi, abs=5e-3)


@pytest.mark.slow
def test_unit_disc_area_fine():
    mesh = triangulate(CavitySpec.disc(1.0), 0.02)
    assert mesh.area() == pytest.approx(np.pi, abs=5e-3)


def test_triangles_are_positively_oriented(disc_mesh):
    assert np.all(disc_mesh.areas() > 0)


def test_minimum_angle(unit_square_mesh, disc_mesh):
    for mesh in (unit_square_mesh, disc_mesh):
        assert mesh.quality().min_angle >= 20.0


def test_every_boundary_edge_has_one_tag(disc_mesh):
    boundary = _edge_set(disc_mesh.boundary_edges())
    tagged = [tuple(sorted(e)) for e in disc_mesh.edges.tolist()]
    assert boundary == set(tagged)
    assert len(tagged) == len(set(tagged))
    assert np.all(disc_mesh.edge_tags == DIRICHLET_WALL)


def test_boundary_vertices_lie_on_the_circle(disc_mesh):
    nodes = np.unique(disc_mesh.boundary_edges())
    r = np.hypot(disc_mesh.vertices[nodes, 0] + 1.0, disc_mesh.vertices[nodes, 1])
    assert np.allclose(r, 1.0, atol=1e-12)


def test_resonator_regions_and_interface(closed_benchmark):
    spec, closed, _ = closed_benchmark
    mesh = closed.mesh
    assert set(np.unique(mesh.regions).tolist()) == {CAVITY, NECK}
    edges = mesh.tagged(INTERFACE)
    assert len(edges) > 0
    uniq, _ = mesh.unique_edges()
    index = {tuple(e): i for i, e in enumerate(uniq.tolist())}
    adjacent = mesh.edge_triangles()[[index[tuple(sorted(e))] for e in edges.tolist()]]
    assert np.all(adjacent >= 0)
    sides = np.sort(mesh.regions[adjacent], axis=1)
    assert np.all(sides == [CAVITY, NECK])


def test_neck_layers_across_every_station():
    from resonate.geometry import benchmark_resonator

    spec = benchmark_resonator(eps=0.1)
    mesh = triangulate(spec, 0.15, neck_layers=8)
    counts = neck_transect_counts(mesh, np.linspace(0.05, 0.35, 7))
    assert counts.min() >= 8


def test_too_few_neck_layers_is_rejected(benchmark):
    with pytest.raises(MeshError):
        triangulate(benchmark, 0.1, neck_layers=4)


def test_non_positive_size_is_rejected():
    with pytest.raises(MeshError):
        triangulate(RectangleSpec(), 0.0)


def test_submesh_keeps_parent_numbering(closed_benchmark):
    _, closed, cavity = closed_benchmark
    sub = cavity.mesh
    parent = closed.mesh
    assert np.allclose(sub.vertices, parent.vertices[sub.parent_nodes])
    assert np.all(parent.regions[sub.parent_triangles] == CAVITY)
    assert sub.area() == pytest.approx(parent.area([CAVITY]))
    assert len(sub.tagged(INTERFACE)) == len(parent.tagged(INTERFACE))


def test_empty_marker_is_identity(unit_square_mesh):
    out = refine(unit_square_mesh, np.zeros(unit_square_mesh.n_triangles, dtype=bool))
    assert np.array_equal(out.vertices, unit_square_mesh.vertices)
    assert np.array_equal(out.triangles, unit_square_mesh.triangles)


def test_uniform_refinement_quadruples(unit_square_mesh):
    out = refine(unit_square_mesh, np.ones(unit_square_mesh.n_triangles, dtype=bool))
    assert out.n_triangles == 4 * unit_square_mesh.n_triangles
    assert out.area() == pytest.approx(1.0, abs=1e-12)
    assert _edge_set(out.boundary_edges()) == _edge_set(out.edges)


def test_partial_refinement_is_conforming(unit_square_mesh):
    marker = np.zeros(unit_square_mesh.n_triangles, dtype=bool)
    marker[:5] = True
    out = refine(unit_square_mesh, marker)
    assert out.n_triangles > unit_square_mesh.n_triangles
    assert out.area() == pytest.approx(1.0, abs=1e-12)
    assert out.angles().min() >= 20.0
    # conforming: every interior edge is shared by exactly two triangles
    assert _edge_set(out.boundary_edges()) == _edge_set(out.edges)


def test_refining_the_neck_halves_its_size_only(closed_benchmark):
    mesh = closed_benchmark[1].mesh
    before = mesh.quality()
    out = refine(mesh, mesh.regions == NECK)
    after = out.quality()
    assert after.min_angle >= 20.0
    assert after.h_max["neck"] == pytest.approx(0.5 * before.h_max["neck"], rel=1e-9)
    assert after.h_max["cavity"] == pytest.approx(before.h_max["cavity"], rel=1e-9)
    assert out.area() == pytest.approx(mesh.area(), rel=1e-12)


def test_unreachable_quality_floor_is_an_error(unit_square_mesh):
    marker = np.zeros(unit_square_mesh.n_triangles, dtype=bool)
    marker[0] = True
    with pytest.raises(MeshError) as info:
        refine(unit_square_mesh, marker, min_angle=75.0)
    assert "region" in info.value.details


def test_half_dumbbell_has_symmetry_plane():
    spec = build_dumbbell(CavitySpec.disc(1.0), 0.4, 0.2)
    half = triangulate(spec, 0.15, neck_layers=8, half=True)
    plane = half.tagged(SYMMETRY_PLANE)
    assert len(plane) > 0
    assert np.allclose(half.vertices[np.unique(plane), 0], 0.0)
    assert half.vertices[:, 0].max() <= 1e-12
    full = triangulate(spec, 0.15, neck_layers=8)
    assert full.area() == pytest.approx(2 * half.area())


def test_mesh_file_roundtrip(tmp_path, closed_benchmark):
    mesh = closed_benchmark[1].mesh
    path = write_mesh(mesh, tmp_path / "mesh.txt")
    back = read_mesh(path)
    assert isinstance(back, Mesh)
    assert np.array_equal(back.vertices, mesh.vertices)
    assert np.array_equal(back.triangles, mesh.triangles)
    assert np.array_equal(back.regions, mesh.regions)
    assert np.array_equal(back.edge_tags, mesh.edge_tags)


def test_read_rejects_foreign_file(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("hello\n")
    with pytest.raises(MeshError):
        read_mesh(path)
