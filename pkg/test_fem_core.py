"""
Tests for assembly, projection, the cubic nonlinearity and L^q norms.
"""

from math import factorial

import numpy as np
import pytest
from numpy.testing import assert_allclose

from fem_core import (
    DEGREE2,
    FeFunction,
    Quadrature,
    apply_discrete_laplacian,
    assemble_mass,
    assemble_stiffness,
    conical_rule,
    cubic_jacobian,
    cubic_load,
    field_values,
    l2_project,
    load_vector,
    lq_distance,
    lq_norm,
    mass_matrix,
    quadrature_values,
    square_function_norm,
    stiffness_matrix,
    weighted_mass,
)
from mesh import Mesh, MeshError, build_structured_mesh, evaluate, interpolate
from scheme import sine_field
from sparse_linalg import SolverConfig
from study_harness import _principal_mode


def _reference_tet():
    vertices = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    return vertices


def _reference_mesh():
    return Mesh(
        n=1,
        vertices=_reference_tet(),
        tets=np.array([[0, 1, 2, 3]]),
        volumes=np.array([1.0 / 6.0]),
        interior_vertices=np.arange(4),
        dof_of_vertex=np.arange(4),
    )


def _barycentric_moment(alpha):
    '''∫_K λ^α / |K| = 6 α! / (|α| + 3)!.'''
    return 6.0 * np.prod([factorial(a) for a in alpha]) / factorial(sum(alpha) + 3)


def _random_function(mesh, seed=0):
    return FeFunction(mesh, np.random.default_rng(seed).standard_normal(mesh.num_dofs))


# ==============================================================================
# QUADRATURE
# ==============================================================================

def test_degree2_rule_is_exact_for_quadratics():
    for alpha in [(2, 0, 0, 0), (1, 1, 0, 0), (0, 0, 1, 0)]:
        values = np.prod(DEGREE2.points ** np.array(alpha), axis=1)
        assert values @ DEGREE2.weights == pytest.approx(_barycentric_moment(alpha), rel=1e-14)


@pytest.mark.parametrize("m", [2, 3, 4, 5])
def test_conical_rule_exact_to_degree(m):
    rule = Quadrature.conical(m)
    assert rule.degree == 2 * m - 1
    for alpha in [(m, m - 1, 0, 0), (0, 1, m - 1, m - 1), (2 * m - 1, 0, 0, 0)]:
        values = np.prod(rule.points ** np.array(alpha), axis=1)
        assert values @ rule.weights == pytest.approx(_barycentric_moment(alpha), rel=1e-12)


def test_conical_rule_is_cached():
    assert conical_rule(3) is conical_rule(3)


# ==============================================================================
# OPERATORS
# ==============================================================================

@pytest.mark.parametrize("full", [False, True])
def test_operators_are_symmetric(full):
    mesh = build_structured_mesh(4)
    for matrix in (assemble_mass(mesh, full=full), assemble_stiffness(mesh, full=full)):
        assert abs(matrix - matrix.T).max() <= 1e-14


def test_full_mass_integrates_one():
    mesh = build_structured_mesh(3)
    ones = np.ones(mesh.num_vertices)
    assert ones @ (assemble_mass(mesh, full=True) @ ones) == pytest.approx(1.0, rel=1e-13)


def test_stiffness_annihilates_constants():
    mesh = build_structured_mesh(4)
    A = assemble_stiffness(mesh, full=True)
    assert np.abs(A @ np.ones(mesh.num_vertices)).max() <= 1e-13


def test_interior_operators_are_positive_definite():
    mesh = build_structured_mesh(3)
    for matrix in (mass_matrix(mesh), stiffness_matrix(mesh)):
        assert np.linalg.eigvalsh(matrix.toarray()).min() > 0


def test_mass_matches_quadrature_assembly():
    mesh = build_structured_mesh(3)
    quadrature = weighted_mass(mesh, np.ones((len(mesh.tets), 4)), DEGREE2)
    assert abs(quadrature - mass_matrix(mesh)).max() <= 1e-16


def test_mass_on_reference_tet():
    M = assemble_mass(_reference_mesh()).toarray()
    V = 1.0 / 6.0
    assert_allclose(np.diag(M), np.full(4, V / 10.0), rtol=1e-15)
    assert_allclose(M[~np.eye(4, dtype=bool)], np.full(12, V / 20.0), rtol=1e-15)


def test_stiffness_on_reference_tet():
    A = assemble_stiffness(_reference_mesh()).toarray()
    expected = np.array([
        [3.0, -1.0, -1.0, -1.0],
        [-1.0, 1.0, 0.0, 0.0],
        [-1.0, 0.0, 1.0, 0.0],
        [-1.0, 0.0, 0.0, 1.0],
    ]) / 6.0
    assert_allclose(A, expected, atol=1e-15)


def test_degenerate_tet_rejected():
    vertices = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 1.0, 0.0]])
    mesh = Mesh(
        n=1,
        vertices=vertices,
        tets=np.array([[0, 1, 2, 3]]),
        volumes=np.array([0.0]),
        interior_vertices=np.array([], dtype=np.int64),
        dof_of_vertex=np.full(4, -1),
    )
    with pytest.raises(MeshError):
        assemble_stiffness(mesh)


# ==============================================================================
# PROJECTION AND LAPLACIAN
# ==============================================================================

def test_projection_of_zero():
    mesh = build_structured_mesh(3)
    u = l2_project(mesh, lambda points: np.zeros(len(points)))
    assert np.all(u.coeffs == 0.0)


def test_projection_is_idempotent():
    mesh = build_structured_mesh(4)
    tight = SolverConfig(cg_rel_tol=1e-12)
    u = l2_project(mesh, sine_field, cfg=tight)
    assert_allclose(l2_project(mesh, u, cfg=tight).coeffs, u.coeffs, atol=1e-9)


def test_projection_of_coarser_function_is_exact():
    coarse = build_structured_mesh(2)
    fine = build_structured_mesh(4)
    u = _random_function(coarse)
    projected = l2_project(fine, u, cfg=SolverConfig(cg_rel_tol=1e-12))
    assert_allclose(evaluate(projected, fine.vertices), evaluate(u, fine.vertices), atol=1e-9)


def test_projection_is_galerkin_orthogonal():
    mesh = build_structured_mesh(4)
    rng = np.random.default_rng(12)
    a, b, c = rng.uniform(0.5, 2.0, size=3)
    f = lambda points: np.exp(a * points[:, 0]) * np.cos(b * points[:, 1]) + c * points[:, 2] ** 2
    u = l2_project(mesh, f, cfg=SolverConfig(cg_rel_tol=1e-12))

    moments = load_vector(mesh, field_values(mesh, f, DEGREE2), DEGREE2)
    defect = moments - mass_matrix(mesh) @ u.coeffs
    f_norm = lq_distance(FeFunction.zeros(mesh), f, 2)
    assert np.abs(defect).max() <= 1e-8 * f_norm


def test_projection_error_order():
    tight = SolverConfig(cg_rel_tol=1e-12)
    errors = [
        lq_distance(l2_project(build_structured_mesh(n), sine_field, cfg=tight), sine_field, 2)
        for n in (4, 8, 16)
    ]
    orders = np.log2(np.array(errors[:-1]) / np.array(errors[1:]))
    assert np.all(orders >= 1.8)


def test_principal_eigenvalue_converges_at_second_order():
    exact = 3 * np.pi ** 2
    gaps = [_principal_mode(build_structured_mesh(n))[1] - exact for n in (4, 8, 16)]
    assert all(gap > 0 for gap in gaps)
    assert gaps[2] <= 0.02 * exact
    for coarse, fine in zip(gaps, gaps[1:]):
        assert 3.0 <= coarse / fine <= 5.0


def test_principal_mode_on_fine_mesh():
    mesh = build_structured_mesh(32)
    mode, mu = _principal_mode(mesh)
    M, A = mass_matrix(mesh), stiffness_matrix(mesh)
    assert mode.coeffs @ (M @ mode.coeffs) == pytest.approx(1.0, rel=1e-12)
    defect = A @ mode.coeffs - mu * (M @ mode.coeffs)
    assert np.linalg.norm(defect) <= 1e-8 * mu * np.linalg.norm(M @ mode.coeffs)
    assert mu == pytest.approx(3 * np.pi ** 2, rel=0.01)


def test_laplacian_of_principal_mode():
    mesh = build_structured_mesh(4)
    mode, mu = _principal_mode(mesh)
    lap = apply_discrete_laplacian(mode)
    assert_allclose(lap.coeffs, -mu * mode.coeffs, atol=1e-7 * mu * np.abs(mode.coeffs).max())


# ==============================================================================
# CUBIC TERM
# ==============================================================================

def test_cubic_jacobian_matches_finite_differences():
    mesh = build_structured_mesh(4)
    u = _random_function(mesh, seed=1)
    d = _random_function(mesh, seed=2)
    eps = 1e-4
    fd = (cubic_load(u + d * eps) - cubic_load(u - d * eps)) / (2 * eps)
    exact = cubic_jacobian(u) @ d.coeffs
    assert np.linalg.norm(fd - exact) <= 1e-5 * np.linalg.norm(exact)


def test_cubic_jacobian_is_symmetric_positive_semidefinite():
    mesh = build_structured_mesh(3)
    jac = cubic_jacobian(_random_function(mesh, seed=4)).toarray()
    assert np.abs(jac - jac.T).max() <= 1e-15
    assert np.linalg.eigvalsh(jac).min() >= -1e-15


def test_cubic_load_on_single_dof_mesh():
    mesh = build_structured_mesh(2)
    u = FeFunction(mesh, np.array([1.7]))
    dense = conical_rule(4)
    oracle = load_vector(mesh, quadrature_values(u, dense) ** 3, dense)[0]

    # ∫_K λ⁴ = |K|/35; the degree-2 rule gives |K|(b⁴ + 3a⁴)/4 instead
    a = (5.0 - np.sqrt(5.0)) / 20.0
    b = (5.0 + 3.0 * np.sqrt(5.0)) / 20.0
    rule_factor = 35.0 * (b ** 4 + 3.0 * a ** 4) / 4.0
    assert cubic_load(u)[0] == pytest.approx(rule_factor * oracle, rel=1e-12)
    assert cubic_load(u)[0] == pytest.approx(oracle, rel=0.05)


def test_cubic_load_is_odd_and_cubic():
    mesh = build_structured_mesh(3)
    u = _random_function(mesh, seed=5)
    assert_allclose(cubic_load(-u), -cubic_load(u), atol=0.0)
    assert_allclose(cubic_load(u * 2.0), 8.0 * cubic_load(u), rtol=1e-13)


# ==============================================================================
# NORMS
# ==============================================================================

def test_l2_norm_matches_mass_form():
    mesh = build_structured_mesh(4)
    u = _random_function(mesh, seed=6)
    assert lq_norm(u, 2) == pytest.approx(np.sqrt(u.coeffs @ (mass_matrix(mesh) @ u.coeffs)), rel=1e-12)


@pytest.mark.parametrize("q", [4, 6])
def test_exact_even_norms_match_quadrature(q):
    mesh = build_structured_mesh(3)
    u = _random_function(mesh, seed=q)
    rule = conical_rule(q // 2 + 1)
    assert lq_norm(u, q) == pytest.approx(lq_norm(u, q, quad=rule), rel=1e-12)


def test_odd_exponent_on_nonnegative_function():
    mesh = build_structured_mesh(4)
    u = interpolate(mesh, sine_field)
    assert lq_norm(u, 3) == pytest.approx(lq_norm(u, 3, quad=conical_rule(6)), rel=1e-12)


@pytest.mark.parametrize("q", [1.5, np.inf, np.nan])
def test_invalid_exponent_rejected(q):
    u = FeFunction.zeros(build_structured_mesh(2))
    with pytest.raises(ValueError):
        lq_norm(u, q)


def test_norm_is_homogeneous():
    u = _random_function(build_structured_mesh(3), seed=8)
    assert lq_norm(u * -3.0, 16) == pytest.approx(3.0 * lq_norm(u, 16), rel=1e-12)


def test_distance_to_itself_is_zero():
    u = _random_function(build_structured_mesh(3), seed=9)
    assert lq_distance(u, lambda points: evaluate(u, points), 4) <= 1e-12


def test_distance_from_zero_to_sine():
    zero = FeFunction.zeros(build_structured_mesh(8))
    assert lq_distance(zero, sine_field, 2, quad=conical_rule(5)) == pytest.approx(0.5 ** 1.5, rel=1e-4)


def test_square_function_norm_single_mode():
    u = _random_function(build_structured_mesh(3), seed=10)
    rule = conical_rule(3)
    assert square_function_norm([u], [1.0], 4, rule) == pytest.approx(lq_norm(u, 4, quad=rule), rel=1e-12)
    assert square_function_norm([u, u], [1.0, 3.0], 4, rule) == pytest.approx(2.0 * lq_norm(u, 4, quad=rule), rel=1e-12)


def test_functions_on_different_meshes_do_not_mix():
    a = FeFunction.zeros(build_structured_mesh(2))
    b = FeFunction.zeros(build_structured_mesh(3))
    with pytest.raises(MeshError):
        a + b
    with pytest.raises(ValueError):
        FeFunction(build_structured_mesh(3), np.zeros(3))
