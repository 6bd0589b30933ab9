"""
Tests for diffusion modes, Brownian paths, coarsening and the Itô isometry.
"""

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from fem_core import FeFunction, lq_norm, mass_matrix
from mesh import build_structured_mesh, interpolate
from noise import (
    BrownianPaths,
    build_noise_model,
    coarsen,
    diffusion_increment,
    diffusion_load,
    generate_paths,
    ito_isometry_check,
    step_process_from,
    tabulated_mode,
)
from scheme import sine_field

IDENTITY = build_noise_model(['identity'])
TWO_MODES = build_noise_model(['identity', 'damped-identity'], [1.0, 0.5])


# ==============================================================================
# MODES
# ==============================================================================

@pytest.mark.parametrize("kind", ['identity', 'damped-identity', 'sine-weighted', 'tabulated'])
def test_modes_vanish_at_zero(kind):
    model = build_noise_model([kind], table=[(-1.0, -2.0), (0.0, 0.0), (1.0, 0.5)])
    points = np.random.default_rng(0).random((10, 3))
    assert np.all(model.modes[0](points, np.zeros(10)) == 0.0)


def test_lipschitz_bound_is_largest_mode_constant():
    model = build_noise_model(['identity', 'tabulated'], table=[(-1.0, -3.0), (0.0, 0.0), (2.0, 1.0)])
    assert model.lipschitz_bound == pytest.approx(3.0)


def test_tabulated_mode_validation():
    with pytest.raises(ValueError):
        tabulated_mode([(0.0, 0.0)])
    with pytest.raises(ValueError):
        tabulated_mode([(0.0, 1.0), (1.0, 2.0)])
    with pytest.raises(ValueError):
        tabulated_mode([(1.0, 1.0), (2.0, 2.0)])


def test_tabulated_mode_is_constant_beyond_table():
    mode = tabulated_mode([(-1.0, -1.0), (0.0, 0.0), (1.0, 2.0)])
    points = np.zeros((3, 3))
    assert_allclose(mode(points, np.array([-5.0, 0.5, 5.0])), [-1.0, 1.0, 2.0])


def test_model_construction_errors():
    with pytest.raises(ValueError):
        build_noise_model(['unknown'])
    with pytest.raises(ValueError):
        build_noise_model(['identity'], [1.0, 2.0])
    with pytest.raises(ValueError):
        build_noise_model(['tabulated'])
    with pytest.raises(ValueError):
        build_noise_model(['identity'], [-1.0])
    with pytest.raises(ValueError):
        build_noise_model([])


# ==============================================================================
# PATHS AND COUPLING
# ==============================================================================

def test_paths_are_reproducible():
    a = generate_paths(TWO_MODES, 42, 3, 64, 1.0)
    b = generate_paths(TWO_MODES, 42, 3, 64, 1.0)
    assert_array_equal(a.increments, b.increments)
    assert a.increments.shape == (2, 64)


def test_paths_differ_across_indices_and_modes():
    a = generate_paths(TWO_MODES, 42, 0, 64, 1.0)
    b = generate_paths(TWO_MODES, 42, 1, 64, 1.0)
    assert not np.array_equal(a.increments, b.increments)
    assert not np.array_equal(a.increments[0], a.increments[1])


def test_increment_variance():
    N = 100_000
    paths = generate_paths(IDENTITY, 1, 0, N, 2.0)
    assert paths.tau == pytest.approx(2.0 / N)
    standard_error = paths.tau * np.sqrt(2.0 / N)
    assert abs(np.mean(paths.increments ** 2) - paths.tau) <= 3.0 * standard_error


def test_coarsening_composes_bit_exactly():
    paths = generate_paths(TWO_MODES, 5, 0, 256, 1.0)
    assert_array_equal(coarsen(coarsen(paths, 2), 2).increments, coarsen(paths, 4).increments)
    assert_array_equal(coarsen(coarsen(paths, 4), 8).increments, coarsen(paths, 32).increments)


def test_coarsening_sums_blocks():
    paths = generate_paths(IDENTITY, 5, 0, 64, 1.0)
    coarse = coarsen(paths, 16)
    assert coarse.num_steps == 4
    assert coarse.finest_J == 64
    assert_allclose(coarse.increments, paths.increments.reshape(1, 4, 16).sum(axis=2), atol=1e-14)
    assert_allclose(coarse.brownian_motion()[:, -1], paths.brownian_motion()[:, -1], atol=1e-14)


@pytest.mark.parametrize("factor", [3, 0, 128])
def test_invalid_coarsening_rejected(factor):
    with pytest.raises(ValueError):
        coarsen(generate_paths(IDENTITY, 5, 0, 64, 1.0), factor)


def test_brownian_motion_starts_at_zero():
    paths = BrownianPaths(0, 0, 1.0, 3, np.array([[0.5, -0.25, 1.0]]))
    assert_array_equal(paths.brownian_motion(), [[0.0, 0.5, 0.25, 1.25]])


# ==============================================================================
# DIFFUSION TERM
# ==============================================================================

def test_identity_load_is_mass_times_state():
    mesh = build_structured_mesh(4)
    u = interpolate(mesh, sine_field)
    model = build_noise_model(['identity'], [4.0])
    load = diffusion_load(model, u, [0.3])
    assert_allclose(load, 2.0 * 0.3 * (mass_matrix(mesh) @ u.coeffs), rtol=1e-13)


def test_identity_increment_is_state_times_increment():
    mesh = build_structured_mesh(4)
    u = interpolate(mesh, sine_field)
    increment = diffusion_increment(IDENTITY, u, [-0.2])
    assert_allclose(increment.coeffs, -0.2 * u.coeffs, atol=1e-9)


BUILT_IN_KINDS = ['identity', 'damped-identity', 'sine-weighted']


@pytest.mark.parametrize("kind", BUILT_IN_KINDS)
def test_increment_is_lipschitz_in_the_state(kind):
    model = build_noise_model([kind])
    mesh = build_structured_mesh(4)
    rng = np.random.default_rng(31)
    for _ in range(3):
        u1 = FeFunction(mesh, rng.standard_normal(mesh.num_dofs))
        u2 = FeFunction(mesh, rng.standard_normal(mesh.num_dofs))
        difference = diffusion_increment(model, u1, [1.0]) - diffusion_increment(model, u2, [1.0])
        assert lq_norm(difference, 2) <= 1.1 * model.lipschitz_bound * lq_norm(u1 - u2, 2)


@pytest.mark.parametrize("kind", BUILT_IN_KINDS)
def test_increment_grows_at_most_linearly(kind):
    model = build_noise_model([kind])
    rng = np.random.default_rng(32)
    for n in (2, 4, 8):
        mesh = build_structured_mesh(n)
        for scale in (0.1, 1.0, 10.0):
            u = FeFunction(mesh, scale * rng.standard_normal(mesh.num_dofs))
            increment = diffusion_increment(model, u, [1.0])
            assert lq_norm(increment, 2) <= 1.1 * model.lipschitz_bound * (1.0 + lq_norm(u, 2))


def test_increment_is_linear_in_the_brownian_increments():
    mesh = build_structured_mesh(4)
    u = interpolate(mesh, sine_field) * 1.5
    dbeta = np.array([0.3, -0.1])
    base = diffusion_increment(TWO_MODES, u, dbeta)
    scaled = diffusion_increment(TWO_MODES, u, -4.0 * dbeta)
    assert_allclose(scaled.coeffs, -4.0 * base.coeffs, rtol=0.0, atol=1e-12 * np.abs(base.coeffs).max())
    assert np.all(diffusion_increment(TWO_MODES, u, [0.0, 0.0]).coeffs == 0.0)


def test_diffusion_load_checks_increment_count():
    u = FeFunction.zeros(build_structured_mesh(2))
    with pytest.raises(ValueError):
        diffusion_load(TWO_MODES, u, [0.1])


# ==============================================================================
# ITÔ ISOMETRY
# ==============================================================================

def test_ito_isometry():
    mesh = build_structured_mesh(2)
    base = interpolate(mesh, sine_field).coeffs
    g = step_process_from(mesh, 1.0, 4, lambda t: np.atleast_2d((1.0 + t) * base))
    result = ito_isometry_check(IDENTITY, g, 10_000, seed=2024)
    assert not result.degenerate
    assert result.ci_low <= 1.0 <= result.ci_high
    assert result.ratio == pytest.approx(1.0, abs=0.05)


def test_ito_isometry_zero_integrand_is_degenerate():
    mesh = build_structured_mesh(2)
    g = step_process_from(mesh, 1.0, 4, lambda t: np.zeros((1, mesh.num_dofs)))
    result = ito_isometry_check(IDENTITY, g, 10, seed=0)
    assert result.degenerate
    assert np.isnan(result.ratio)


def test_ito_isometry_checks_mode_count():
    mesh = build_structured_mesh(2)
    g = step_process_from(mesh, 1.0, 2, lambda t: np.ones((1, mesh.num_dofs)))
    with pytest.raises(ValueError):
        ito_isometry_check(TWO_MODES, g, 10, seed=0)


def test_ito_isometry_scales_with_the_weight():
    mesh = build_structured_mesh(2)
    base = interpolate(mesh, sine_field).coeffs
    g = step_process_from(mesh, 1.0, 4, lambda t: np.atleast_2d(base))
    single = ito_isometry_check(IDENTITY, g, 2000, seed=7)
    doubled = ito_isometry_check(build_noise_model(['identity'], [2.0]), g, 2000, seed=7)
    assert doubled.lhs == pytest.approx(2.0 * single.lhs, rel=1e-12)
    assert doubled.rhs == pytest.approx(2.0 * single.rhs, rel=1e-12)
    assert doubled.ci_low <= 1.0 <= doubled.ci_high
