"""
Tests for the Kuhn mesh: counts, volumes, point location and prolongation.
"""

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from fem_core import FeFunction, lq_norm
from mesh import (
    MeshError,
    build_structured_mesh,
    dump_mesh,
    evaluate,
    interpolate,
    locate,
    prolongate,
    prolongate_to,
    prolongation_matrix,
    vertex_values,
)
from scheme import sine_field


@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_counts(n):
    mesh = build_structured_mesh(n)
    assert mesh.num_vertices == (n + 1) ** 3
    assert len(mesh.tets) == 6 * n ** 3
    assert mesh.num_dofs == (n - 1) ** 3


@pytest.mark.parametrize("n", [1, 2, 5])
def test_volumes_are_equal_and_sum_to_one(n):
    mesh = build_structured_mesh(n)
    assert_allclose(mesh.volumes, 1.0 / (6 * n ** 3), rtol=1e-12)
    assert abs(mesh.volumes.sum() - 1.0) < 1e-12


def test_tets_are_positively_oriented():
    mesh = build_structured_mesh(3)
    p = mesh.vertices[mesh.tets]
    signed = np.linalg.det(p[:, 1:, :] - p[:, :1, :]) / 6.0
    assert np.all(signed > 0)


def test_h_is_cell_diagonal():
    assert build_structured_mesh(4).h == pytest.approx(np.sqrt(3.0) / 4)


@pytest.mark.parametrize("n", [0, -2, 2.5, True, "4"])
def test_invalid_size_rejected(n):
    with pytest.raises(MeshError):
        build_structured_mesh(n)


def test_mesh_is_cached_and_immutable():
    mesh = build_structured_mesh(4)
    assert build_structured_mesh(4) is mesh
    with pytest.raises(ValueError):
        mesh.vertices[0, 0] = 1.0


def test_boundary_vertices_carry_no_dof():
    mesh = build_structured_mesh(3)
    on_boundary = np.any((mesh.vertices == 0.0) | (mesh.vertices == 1.0), axis=1)
    assert np.all(mesh.dof_of_vertex[on_boundary] == -1)
    assert_array_equal(mesh.dof_of_vertex[~on_boundary], np.arange(mesh.num_dofs))
    assert mesh.interior_dofs == {int(v): d for d, v in enumerate(mesh.interior_vertices)}


def test_interpolate_rejects_bad_fields():
    mesh = build_structured_mesh(3)
    with pytest.raises(MeshError):
        interpolate(mesh, lambda points: np.zeros(len(points) + 1))
    with pytest.raises(MeshError):
        interpolate(mesh, lambda points: np.full(len(points), np.nan))


def test_evaluate_reproduces_vertex_values():
    mesh = build_structured_mesh(4)
    u = interpolate(mesh, sine_field)
    assert_allclose(evaluate(u, mesh.vertices), vertex_values(u), atol=1e-12)


def test_locate_returns_a_mesh_tet():
    mesh = build_structured_mesh(3)
    rng = np.random.default_rng(7)
    points = rng.random((200, 3))
    corners, bary = locate(mesh, points)

    assert np.all(bary >= -1e-14)
    assert_allclose(bary.sum(axis=1), 1.0, atol=1e-14)
    assert_allclose(np.einsum('na,nad->nd', bary, mesh.vertices[corners]), points, atol=1e-14)

    tets = {tuple(sorted(tet)) for tet in mesh.tets.tolist()}
    assert all(tuple(sorted(c)) in tets for c in corners.tolist())


def test_locate_outside_cube_rejected():
    with pytest.raises(MeshError):
        locate(build_structured_mesh(2), [[0.5, 0.5, 1.5]])


def test_prolongation_is_exact_on_fine_vertices():
    coarse = build_structured_mesh(4)
    fine = build_structured_mesh(8)
    rng = np.random.default_rng(3)
    u = FeFunction(coarse, rng.standard_normal(coarse.num_dofs))
    v = prolongate(u, fine)
    assert_allclose(vertex_values(v), evaluate(u, fine.vertices), atol=1e-12)


def test_prolongation_agrees_at_random_points():
    coarse = build_structured_mesh(4)
    rng = np.random.default_rng(21)
    u = FeFunction(coarse, rng.standard_normal(coarse.num_dofs))
    v = prolongate(u, build_structured_mesh(8))
    points = rng.random((100, 3))
    assert np.abs(evaluate(u, points) - evaluate(v, points)).max() <= 1e-12


def test_interpolant_l4_norm_converges_at_second_order():
    exact = (27.0 / 512.0) ** 0.25
    gaps = [exact - lq_norm(interpolate(build_structured_mesh(n), sine_field), 4) for n in (16, 32)]
    assert 0.0 < gaps[1] <= 1.5e-3
    assert 3.0 <= gaps[0] / gaps[1] <= 5.0


def test_prolongation_matrix_shape():
    P = prolongation_matrix(2)
    assert P.shape == (build_structured_mesh(4).num_dofs, build_structured_mesh(2).num_dofs)


@pytest.mark.parametrize("q", [2, 4])
def test_prolongation_preserves_norms(q):
    coarse = build_structured_mesh(4)
    rng = np.random.default_rng(11)
    u = FeFunction(coarse, rng.standard_normal(coarse.num_dofs))
    fine = prolongate_to(u, build_structured_mesh(16))
    assert lq_norm(fine, q) == pytest.approx(lq_norm(u, q), rel=1e-12)


def test_non_nested_meshes_rejected():
    u = FeFunction.zeros(build_structured_mesh(2))
    with pytest.raises(MeshError):
        prolongate(u, build_structured_mesh(6))
    with pytest.raises(MeshError):
        prolongate_to(u, build_structured_mesh(12))


def test_dump_mesh(tmp_path):
    mesh = build_structured_mesh(2)
    path = dump_mesh(mesh, tmp_path / "mesh.txt")
    lines = path.read_text().splitlines()
    assert lines[0] == "# n 2 vertices 27 tets 48"
    assert len(lines) == 3 + mesh.num_vertices + len(mesh.tets)
