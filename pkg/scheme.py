'''
Full discretization of the stochastic Allen-Cahn equation.
Linearly implicit Euler in time with an implicit cubic, P1 finite
elements in space and left-point evaluation of the multiplicative noise:

    Y_{j+1} − Y_j = τ(Δ_h Y_{j+1} + r·Y_j − P_h Y_{j+1}³) + P_h F(Y_j) ΔW_j,
    Y_0 = P_h v.
'''

from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
import pandas as pd

from config import CUBIC_ENABLED, P_LIST, Q_LIST, REACTION_COEFF
from fem_core import (
    DEGREE2,
    FeFunction,
    cubic_jacobian,
    cubic_load,
    l2_project,
    mass_matrix,
    stiffness_matrix,
)
from mesh import build_structured_mesh
from noise import diffusion_load
from sparse_linalg import ConvergenceError, NewtonError, SolverConfig, cg_solve, newton_solve


class StepError(RuntimeError):
    '''A time step failed; names the step and the last residual.'''

    def __init__(self, step, residual, cause):
        super().__init__(f"Step {step} failed (residual {residual:.3e}): {cause}")
        self.step = step
        self.residual = residual


def sine_field(points):
    '''v(x) = sin(πx₁) sin(πx₂) sin(πx₃).'''
    return np.prod(np.sin(np.pi * np.asarray(points)), axis=1)


def zero_field(points):
    return np.zeros(len(points))


INITIAL_FIELDS = {'sine': sine_field, 'zero': zero_field}


@dataclass(frozen=True)
class SchemeConfig:
    '''
    Discretization parameters: τ = T/J on a Kuhn mesh with n subdivisions.

    The convergence theory assumes τ <= h²; larger steps are rejected unless
    allow_large_tau is set, in which case the override is recorded.
    '''
    T: float
    J: int
    n: int
    cubic_enabled: bool = CUBIC_ENABLED
    reaction_coeff: float = REACTION_COEFF
    q_list: tuple = tuple(Q_LIST)
    p_list: tuple = tuple(P_LIST)
    solver: SolverConfig = field(default_factory=SolverConfig)
    allow_large_tau: bool = False

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError(f"Horizon T must be positive, got {self.T}")
        if self.J < 1 or self.n < 1:
            raise ValueError(f"J and n must be positive, got J={self.J}, n={self.n}")
        if not self.tau_condition_met and not self.allow_large_tau:
            raise ValueError(
                f"τ = {self.tau:.3e} exceeds h² = {self.h ** 2:.3e}; set allow_large_tau to override"
            )

    @property
    def tau(self):
        return self.T / self.J

    @property
    def h(self):
        return np.sqrt(3.0) / self.n

    @property
    def tau_condition_met(self):
        return self.tau <= self.h ** 2


@dataclass
class Trajectory:
    '''Snapshots (t_j, Y_j) at checkpoint steps plus per-step Newton counts.'''
    checkpoints: list = field(default_factory=list)
    newton_iters: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    @property
    def times(self):
        return [t for t, _ in self.checkpoints]

    @property
    def final(self):
        return self.checkpoints[-1][1]


def initial_state(mesh, v, cfg=None, quad=DEGREE2):
    '''Y_0 = P_h v.'''
    if cfg is None:
        return l2_project(mesh, v, quad=quad)
    return l2_project(mesh, v, quad=quad, cfg=cfg)


@lru_cache(maxsize=32)
def system_matrix(mesh, tau):
    '''M + τA, the linear part of every step.'''
    return (mass_matrix(mesh) + tau * stiffness_matrix(mesh)).tocsr()


def _right_hand_side(y, dbeta, cfg, model, quad):
    rhs = (1.0 + cfg.tau * cfg.reaction_coeff) * (mass_matrix(y.mesh) @ y.coeffs)
    if model is not None and np.any(np.asarray(dbeta) != 0.0):
        rhs = rhs + diffusion_load(model, y, dbeta, quad)
    return rhs


def scheme_residual(y_next, y, dbeta, cfg, model=None, quad=DEGREE2):
    '''Residual of the step equation in matrix form, for diagnostics and tests.'''
    lhs = system_matrix(y.mesh, cfg.tau) @ y_next.coeffs
    if cfg.cubic_enabled:
        lhs = lhs + cfg.tau * cubic_load(y_next, quad)
    return lhs - _right_hand_side(y, dbeta, cfg, model, quad)


def advance(y, dbeta, cfg, model=None, quad=DEGREE2, index=0):
    '''
    One step of the scheme, returning the new state and the Newton count.

    Solves (M + τA)Y + τ·cubic_load(Y) = (1 + τr)·M·Y_j + M·P_h F(Y_j)ΔW_j
    by damped Newton from Y_j (Jacobian M + τA + τ·cubic_jacobian(Y)),
    or by a single linear solve when the cubic is disabled.
    '''
    mesh = y.mesh
    system = system_matrix(mesh, cfg.tau)
    rhs = _right_hand_side(y, dbeta, cfg, model, quad)

    try:
        if not cfg.cubic_enabled:
            return FeFunction(mesh, cg_solve(system, rhs, cfg.solver)), 0

        def residual(x):
            return system @ x + cfg.tau * cubic_load(FeFunction(mesh, x), quad) - rhs

        def jacobian(x):
            return system + cfg.tau * cubic_jacobian(FeFunction(mesh, x), quad)

        coeffs, iterations = newton_solve(
            residual, jacobian, y.coeffs, cfg.solver, scale=np.linalg.norm(rhs),
        )
        return FeFunction(mesh, coeffs), iterations
    except (NewtonError, ConvergenceError) as e:
        raise StepError(index, e.residual, e) from e


def step(y, dbeta, cfg, model=None, quad=DEGREE2):
    '''Y_{j+1} from Y_j and the per-mode increments Δβ_j (noise off if model is None).'''
    return advance(y, dbeta, cfg, model, quad)[0]


def simulate_path(cfg, model, paths, checkpoint_stride=1, v=sine_field, initial=None,
                  observer=None, store=True, verbose=False):
    '''
    Run J steps of the scheme along one Brownian path.

    Args:
        cfg (SchemeConfig): Discretization
        model (NoiseModel): Diffusion modes, None for the noise-free problem
        paths (BrownianPaths): Increments, exactly J steps
        checkpoint_stride (int): Keep snapshots at multiples of this step (and t_J)
        v (callable): Initial field, projected by P_h
        initial (FeFunction): Initial state used as is instead of P_h v
        observer (callable): Called as observer(j, t_j, Y_j) at every checkpoint
        store (bool): Keep snapshots in the trajectory
        verbose (bool): Print status lines

    Returns:
        Trajectory: Checkpoints and Newton statistics
    '''
    if checkpoint_stride < 1:
        raise ValueError(f"checkpoint_stride must be positive, got {checkpoint_stride}")
    if paths is not None and paths.num_steps != cfg.J:
        raise ValueError(f"Path has {paths.num_steps} increments, scheme needs J = {cfg.J}")
    if model is not None and paths is None:
        raise ValueError("A noise model needs Brownian paths")

    mesh = build_structured_mesh(cfg.n)
    if initial is not None and initial.mesh is not mesh:
        raise ValueError(f"Initial state lives on n={initial.mesh.n}, scheme uses n={cfg.n}")
    y = initial if initial is not None else initial_state(mesh, v, cfg.solver)

    if not cfg.tau_condition_met:
        print(f"⚠️  τ = {cfg.tau:.3e} > h² = {cfg.h ** 2:.3e} (override recorded)")

    trajectory = Trajectory(metadata={
        'n': cfg.n,
        'J': cfg.J,
        'T': cfg.T,
        'tau': cfg.tau,
        'master_seed': None if paths is None else paths.master_seed,
        'path_index': None if paths is None else paths.path_index,
        'tau_condition_met': cfg.tau_condition_met,
    })

    def _checkpoint(j, state):
        t = j * cfg.tau
        if store:
            trajectory.checkpoints.append((t, state))
        if observer is not None:
            observer(j, t, state)

    _checkpoint(0, y)
    zero_increment = np.zeros(1 if model is None else model.num_modes)
    for j in range(cfg.J):
        dbeta = zero_increment if paths is None else paths.increments[:, j]
        y, iterations = advance(y, dbeta, cfg, model, index=j)
        trajectory.newton_iters.append(iterations)
        if (j + 1) % checkpoint_stride == 0 or j + 1 == cfg.J:
            _checkpoint(j + 1, y)

    if verbose:
        print(f"✓ Simulated {cfg.J} steps on n={cfg.n} "
              f"(mean Newton iterations {np.mean(trajectory.newton_iters):.2f})")
    return trajectory


def dump_snapshot(u, path, header, fmt='csv'):
    '''
    Write one snapshot with a header naming (n, J, T, seed, path_index, j).

    CSV: "# key=value ..." comment line, then columns dof,value.
    npz: arrays coeffs plus one entry per header key.
    '''
    path = Path(path)
    if fmt == 'csv':
        line = ' '.join(f"{key}={value}" for key, value in header.items())
        with path.open('w') as handle:
            handle.write(f"# {line}\n")
            pd.DataFrame({'dof': np.arange(u.coeffs.size), 'value': u.coeffs}).to_csv(
                handle, index=False, float_format='%.17g'
            )
    elif fmt == 'npz':
        np.savez(path, coeffs=u.coeffs, **{key: np.asarray(value) for key, value in header.items()})
    else:
        raise ValueError(f"Unknown snapshot format: {fmt}")
    return path
