import numpy as np
import pytest

from growthfem.mesh import (
    Boundary,
    MeshError,
    Region,
    build_annulus,
    read_snapshot,
    reference_edge_matrix,
    signed_areas,
    write_snapshot,
)


def test_paper_mesh_counts(paper_mesh):
    assert paper_mesh.n_nodes == 1196
    assert paper_mesh.n_triangles == 2208
    assert paper_mesh.n_free_dofs == 2 * (1196 - 92)


def test_counts_match_independent_enumeration():
    for nr, nc in [(1, 3), (2, 5), (4, 7), (12, 92)]:
        mesh = build_annulus(0.5, 1.0, nr, nc, 0)
        nodes = {(i, j) for i in range(nr + 1) for j in range(nc)}
        quads = [(i, j) for i in range(nr) for j in range(nc)]
        assert mesh.n_nodes == len(nodes)
        assert mesh.n_triangles == 2 * len(quads)


def test_minimal_annulus():
    mesh = build_annulus(0.5, 1.0, 1, 3, 0)
    assert mesh.n_nodes == 6 and mesh.n_triangles == 6
    assert np.all(mesh.region == Region.NON_GROWING)
    assert np.all(signed_areas(mesh.nodes, mesh.triangles) > 0)


def test_grading_ratio_and_growing_layers(paper_mesh):
    radii = np.hypot(*paper_mesh.nodes[:: paper_mesh.n_circ].T)
    ratios = radii[1:] / radii[:-1]
    assert np.allclose(ratios, 2.0 ** (1 / 12))
    assert abs(ratios[0] - 1.0595) < 1e-4
    per_layer = 2 * paper_mesh.n_circ
    assert np.all(paper_mesh.region[: 2 * per_layer] == Region.GROWING)
    assert np.all(paper_mesh.region[2 * per_layer :] == Region.NON_GROWING)


@pytest.mark.parametrize("split", ["uniform", "alternating"])
def test_all_triangles_counterclockwise(split):
    mesh = build_annulus(0.5, 1.0, 12, 92, 2, split=split)
    M = mesh.reference_edge_matrices()
    assert np.all(np.linalg.det(M) > 0)


def test_boundary_tags_on_circles(paper_mesh):
    r = np.hypot(*paper_mesh.nodes.T)
    ext = paper_mesh.boundary == Boundary.DIRICHLET_EXTERIOR
    inner = paper_mesh.boundary == Boundary.FREE_INTERIOR
    assert ext.sum() == 92 and inner.sum() == 92
    assert np.allclose(r[ext], 1.0, atol=1e-14)
    assert np.allclose(r[inner], 0.5, atol=1e-14)


def test_free_dof_map_excludes_dirichlet(paper_mesh):
    fm = paper_mesh.free_dof_map
    ext = paper_mesh.boundary == Boundary.DIRICHLET_EXTERIOR
    assert np.all(fm[ext] == -1)
    used = np.sort(fm[~ext].ravel())
    assert np.array_equal(used, np.arange(paper_mesh.n_free_dofs))


def test_total_area_polygon_deficit(paper_mesh):
    area = paper_mesh.reference_areas().sum()
    polygon = 0.5 * 92 * np.sin(2 * np.pi / 92) * (1.0 - 0.25)
    exact = np.pi * 0.75
    assert area == pytest.approx(polygon, rel=1e-12)
    assert 0 < (exact - area) / exact < 3e-3


def test_reference_edge_matrix_unit_triangle():
    from growthfem.mesh import Mesh

    mesh = Mesh(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), np.array([[0, 1, 2]]),
                np.zeros(1), np.zeros(3))
    assert np.array_equal(reference_edge_matrix(mesh, 0), np.eye(2))
    with pytest.raises(IndexError):
        reference_edge_matrix(mesh, 5)


def test_edge_matrix_determinant_is_twice_shoelace(paper_mesh):
    x = paper_mesh.nodes[paper_mesh.triangles]
    shoelace = 0.5 * (
        (x[:, 1, 0] - x[:, 0, 0]) * (x[:, 2, 1] - x[:, 0, 1])
        - (x[:, 2, 0] - x[:, 0, 0]) * (x[:, 1, 1] - x[:, 0, 1])
    )
    dets = np.linalg.det(paper_mesh.reference_edge_matrices())
    assert np.allclose(dets / 2, shoelace, rtol=1e-12)


def test_layer_areas_follow_grading(paper_mesh):
    areas = paper_mesh.reference_areas().reshape(12, 2 * 92)
    q = 2.0 ** (1 / 12)
    for j in range(12):
        assert np.allclose(areas[j].sum() / areas[0].sum(), q ** (2 * j), rtol=1e-10)


@pytest.mark.parametrize(
    "args",
    [(0.0, 1.0, 2, 8, 1), (1.0, 0.5, 2, 8, 1), (0.5, 1.0, 0, 8, 0), (0.5, 1.0, 2, 2, 0),
     (0.5, 1.0, 2, 8, 3)],
)
def test_invalid_arguments(args):
    with pytest.raises(MeshError):
        build_annulus(*args)


def test_snapshot_round_trip_bitwise(tmp_path, small_mesh, rng):
    coords = small_mesh.nodes + 1e-3 * rng.standard_normal(small_mesh.nodes.shape) / 3
    path = tmp_path / "snap.txt"
    write_snapshot(path, small_mesh, coords)
    mesh2, coords2 = read_snapshot(path)
    assert np.array_equal(coords2, coords)
    assert np.array_equal(mesh2.triangles, small_mesh.triangles)
    assert np.array_equal(mesh2.region, small_mesh.region)
    assert np.array_equal(mesh2.boundary, small_mesh.boundary)
    assert path.read_text().splitlines()[0] == f"nodes {small_mesh.n_nodes} triangles {small_mesh.n_triangles}"


def test_snapshot_rejects_bad_header(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("vertices 3\n")
    with pytest.raises(MeshError):
        read_snapshot(p)


def test_inner_ring_in_circumferential_order(paper_mesh):
    ring = paper_mesh.inner_ring
    assert np.array_equal(ring, np.arange(92))
