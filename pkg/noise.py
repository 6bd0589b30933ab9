'''
Noise for the stochastic Allen-Cahn model.
Truncated diffusion modes F(u) = Σ √λ_n h_n ⊗ f_n(·, u), reproducible
Brownian paths coupled across dyadic time resolutions, and an Itô
isometry check.
'''

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.stats import norm

from config import CONFIDENCE_LEVEL, SINE_WEIGHTED_FREQUENCY
from fem_core import (
    DEGREE2,
    FeFunction,
    load_vector,
    mass_matrix,
    quadrature_points,
    quadrature_values,
)
from sparse_linalg import DEFAULT_SOLVER, cg_solve


# ==============================================================================
# DIFFUSION MODES
# ==============================================================================

@dataclass(frozen=True)
class NoiseMode:
    '''
    One diffusion mode f_n(x, y) with weight λ_n.

    function takes points (N, 3) and states (N,) and returns (N,).
    All built-in modes satisfy f(x, 0) = 0.
    '''
    kind: str
    weight: float
    lipschitz: float
    function: Callable = field(repr=False)

    def __post_init__(self):
        if self.weight < 0 or not np.isfinite(self.weight):
            raise ValueError(f"Mode weight must be finite and nonnegative, got {self.weight}")

    def __call__(self, points, y):
        return self.function(points, y)


def identity_mode(weight=1.0):
    '''f(x, y) = y, the reference experiment's multiplicative noise.'''
    return NoiseMode('identity', weight, 1.0, lambda points, y: y)


def damped_identity_mode(weight=1.0):
    '''f(x, y) = y / (1 + y²); bounded, Lipschitz constant 1 (slope at 0).'''
    return NoiseMode('damped-identity', weight, 1.0, lambda points, y: y / (1.0 + y ** 2))


def sine_weighted_mode(weight=1.0, frequency=SINE_WEIGHTED_FREQUENCY):
    '''f(x, y) = sin(kπx₁) sin(kπx₂) sin(kπx₃) · y; x-dependent, Lipschitz 1 in y.'''
    k = int(frequency)

    def _f(points, y):
        return np.prod(np.sin(k * np.pi * points), axis=1) * y

    return NoiseMode('sine-weighted', weight, 1.0, _f)


def tabulated_mode(table, weight=1.0):
    '''
    Piecewise-linear f(y) through user (y, f) pairs, constant beyond the table.

    The table must contain the point (0, 0).
    '''
    table = sorted((float(y), float(f)) for y, f in table)
    ys = np.array([y for y, _ in table])
    fs = np.array([f for _, f in table])
    if len(ys) < 2 or np.any(np.diff(ys) <= 0):
        raise ValueError("Tabulated mode needs at least two distinct y values")
    if 0.0 not in ys or fs[ys == 0.0][0] != 0.0:
        raise ValueError("Tabulated mode must pass through (0, 0)")
    lipschitz = float(np.max(np.abs(np.diff(fs) / np.diff(ys))))
    return NoiseMode('tabulated', weight, lipschitz, lambda points, y: np.interp(y, ys, fs))


@dataclass(frozen=True)
class NoiseModel:
    '''Finite list of diffusion modes; mode n is driven by Brownian motion β_n.'''
    modes: tuple

    def __post_init__(self):
        if len(self.modes) == 0:
            raise ValueError("A noise model needs at least one mode")

    @property
    def num_modes(self):
        return len(self.modes)

    @property
    def weights(self):
        return np.array([mode.weight for mode in self.modes])

    @property
    def lipschitz_bound(self):
        '''C_F for the built-in modes: the largest per-mode Lipschitz constant in y.'''
        return max(mode.lipschitz for mode in self.modes)


MODE_BUILDERS = {
    'identity': identity_mode,
    'damped-identity': damped_identity_mode,
    'sine-weighted': sine_weighted_mode,
    'tabulated': tabulated_mode,
}


def build_noise_model(kinds, weights=None, table=None, frequency=SINE_WEIGHTED_FREQUENCY):
    '''
    Build a NoiseModel from mode selectors.

    Args:
        kinds (list): Mode kinds, keys of MODE_BUILDERS
        weights (list): λ_n per mode (1.0 each if None)
        table (list): (y, f) pairs for 'tabulated' modes
        frequency (int): k for 'sine-weighted' modes

    Returns:
        NoiseModel: The configured model
    '''
    weights = [1.0] * len(kinds) if weights is None else list(weights)
    if len(weights) != len(kinds):
        raise ValueError(f"{len(kinds)} modes but {len(weights)} weights")

    modes = []
    for kind, weight in zip(kinds, weights):
        if kind not in MODE_BUILDERS:
            raise ValueError(f"Unknown noise mode: {kind}")
        if kind == 'tabulated':
            if table is None:
                raise ValueError("Tabulated noise mode needs a table")
            modes.append(tabulated_mode(table, weight))
        elif kind == 'sine-weighted':
            modes.append(sine_weighted_mode(weight, frequency))
        else:
            modes.append(MODE_BUILDERS[kind](weight))
    return NoiseModel(tuple(modes))


# ==============================================================================
# BROWNIAN PATHS
# ==============================================================================

@dataclass(frozen=True, eq=False)
class BrownianPaths:
    '''
    Brownian increments of every mode on a uniform grid of [0, T].

    increments[n, j] = β_n(t_{j+1}) − β_n(t_j). finest_J records the
    resolution the path was generated at; coarsened copies keep it.
    '''
    master_seed: int
    path_index: int
    T: float
    finest_J: int
    increments: np.ndarray

    @property
    def num_steps(self):
        return self.increments.shape[1]

    @property
    def tau(self):
        return self.T / self.num_steps

    def brownian_motion(self):
        '''β_n(t_j) for j = 0..J, shape (modes, J + 1).'''
        zeros = np.zeros((self.increments.shape[0], 1))
        return np.concatenate([zeros, np.cumsum(self.increments, axis=1)], axis=1)


def stream_generator(master_seed, path_index, mode):
    '''
    Counter-based generator for one (seed, path, mode) stream.

    Philox4x64-10 keyed through SeedSequence; draws are taken in step
    order, so regeneration does not depend on scheduling.
    '''
    sequence = np.random.SeedSequence([int(master_seed), int(path_index), int(mode)])
    return np.random.Generator(np.random.Philox(sequence))


def generate_paths(model, master_seed, path_index, finest_J, T):
    '''
    Draw i.i.d. N(0, T/finest_J) increments for every mode of the model.

    Args:
        model (NoiseModel): Determines the mode count
        master_seed (int): Study-wide seed
        path_index (int): Monte-Carlo path number
        finest_J (int): Steps on [0, T]
        T (float): Horizon

    Returns:
        BrownianPaths: Deterministic per (master_seed, path_index)
    '''
    if finest_J < 1:
        raise ValueError(f"finest_J must be at least 1, got {finest_J}")
    if not T > 0:
        raise ValueError(f"Horizon T must be positive, got {T}")

    scale = np.sqrt(T / finest_J)
    increments = np.stack([
        stream_generator(master_seed, path_index, mode).standard_normal(finest_J) * scale
        for mode in range(model.num_modes)
    ])
    increments.setflags(write=False)
    return BrownianPaths(int(master_seed), int(path_index), float(T), int(finest_J), increments)


def coarsen(paths, factor):
    '''
    Sum increments over consecutive blocks of `factor` steps.

    Implemented as repeated pairwise halving, so coarsen(coarsen(p, 2), 2)
    and coarsen(p, 4) agree bit for bit.
    '''
    factor = int(factor)
    if factor < 1 or factor & (factor - 1):
        raise ValueError(f"Coarsening factor must be a power of 2, got {factor}")
    if paths.num_steps % factor:
        raise ValueError(f"Factor {factor} does not divide {paths.num_steps} steps")

    increments = np.array(paths.increments)
    while factor > 1:
        increments = increments[:, 0::2] + increments[:, 1::2]
        factor //= 2
    increments.setflags(write=False)
    return BrownianPaths(paths.master_seed, paths.path_index, paths.T, paths.finest_J, increments)


# ==============================================================================
# DIFFUSION TERM
# ==============================================================================

def diffusion_load(model, u, dbeta, quad=DEGREE2):
    '''b_i = Σ_n √λ_n Δβ_n ⟨f_n(·, u), φ_i⟩, the mass-weighted noise increment.'''
    dbeta = np.asarray(dbeta, dtype=float).reshape(-1)
    if dbeta.size != model.num_modes:
        raise ValueError(f"Expected {model.num_modes} increments, got {dbeta.size}")

    mesh = u.mesh
    points = quadrature_points(mesh, quad).reshape(-1, 3)
    states = quadrature_values(u, quad).reshape(-1)
    values = np.zeros_like(states)
    for mode, increment in zip(model.modes, dbeta):
        if increment != 0.0 and mode.weight != 0.0:
            values += np.sqrt(mode.weight) * increment * mode(points, states)
    return load_vector(mesh, values.reshape(len(mesh.tets), -1), quad)


def diffusion_increment(model, u, dbeta, quad=DEGREE2, cfg=DEFAULT_SOLVER):
    '''
    P_h(Σ_n √λ_n f_n(·, u) Δβ_n), realized as one mass solve.

    Args:
        model (NoiseModel): Diffusion modes
        u (FeFunction): State the coefficient is evaluated at
        dbeta (array): One Brownian increment per mode
        quad (Quadrature): Rule for the load integrals
        cfg (SolverConfig): Mass solve tolerances

    Returns:
        FeFunction: The projected noise increment
    '''
    b = diffusion_load(model, u, dbeta, quad)
    return FeFunction(u.mesh, cg_solve(mass_matrix(u.mesh), b, cfg))


# ==============================================================================
# STEP PROCESSES AND ITÔ ISOMETRY
# ==============================================================================

@dataclass(frozen=True, eq=False)
class StepProcess:
    '''
    Deterministic FeFunction-valued step process g_n(t_j), per mode.

    values has shape (J, modes, dofs); g is constant on [t_j, t_{j+1}).
    '''
    mesh: object
    T: float
    values: np.ndarray

    @property
    def num_steps(self):
        return self.values.shape[0]

    @property
    def num_modes(self):
        return self.values.shape[1]

    @property
    def tau(self):
        return self.T / self.num_steps

    def field(self, j, mode=0):
        return FeFunction(self.mesh, self.values[j, mode])


def step_process_from(mesh, T, J, g):
    '''Tabulate g(t) -> (modes, dofs) array at t_j = jT/J, j < J.'''
    times = np.arange(J) * (T / J)
    values = np.stack([np.atleast_2d(np.asarray(g(t), dtype=float)) for t in times])
    return StepProcess(mesh, float(T), values)


@dataclass(frozen=True)
class IsometryResult:
    lhs: float
    rhs: float
    ratio: float
    ci_low: float
    ci_high: float
    paths: int
    degenerate: bool


def ito_isometry_check(model, g, M_paths, seed, confidence=CONFIDENCE_LEVEL):
    '''
    Monte-Carlo check of E‖Σ_j Σ_n √λ_n g_n(t_j) Δβ_{n,j}‖²_{L²} = Σ_n λ_n Σ_j ‖g_n(t_j)‖²_{L²} τ.

    Args:
        model (NoiseModel): Supplies the weights λ_n
        g (StepProcess): Deterministic integrand
        M_paths (int): Number of sampled paths
        seed (int): Master seed
        confidence (float): Level of the normal-theory interval

    Returns:
        IsometryResult: Both sides, their ratio and a confidence interval for it
    '''
    if g.num_modes != model.num_modes:
        raise ValueError(f"Step process has {g.num_modes} modes, model has {model.num_modes}")

    M = mass_matrix(g.mesh)
    scaled = g.values * np.sqrt(model.weights)[None, :, None]
    rhs = float(sum(g.tau * model.weights[n] * g.values[j, n] @ (M @ g.values[j, n])
                    for j in range(g.num_steps) for n in range(g.num_modes)))

    samples = np.empty(M_paths)
    for m in range(M_paths):
        paths = generate_paths(model, seed, m, g.num_steps, g.T)
        integral = np.einsum('jnd,nj->d', scaled, paths.increments)
        samples[m] = integral @ (M @ integral)

    lhs = float(samples.mean())
    if rhs == 0.0:
        return IsometryResult(lhs, rhs, float('nan'), float('nan'), float('nan'), M_paths, True)

    z = norm.ppf(0.5 + confidence / 2)
    half_width = z * samples.std(ddof=1) / np.sqrt(M_paths)
    return IsometryResult(
        lhs=lhs,
        rhs=rhs,
        ratio=lhs / rhs,
        ci_low=(lhs - half_width) / rhs,
        ci_high=(lhs + half_width) / rhs,
        paths=M_paths,
        degenerate=False,
    )
