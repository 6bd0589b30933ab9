'''
Sparse linear algebra for the finite element scheme.
Jacobi-preconditioned conjugate gradients on CSR matrices and a damped
Newton driver for the per-step nonlinear system.
'''

from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse.linalg as spla

from config import (
    CG_REL_TOL,
    CG_MAX_ITER,
    NEWTON_TOL,
    NEWTON_MAX_ITER,
    NEWTON_DAMPING,
    NEWTON_MIN_DAMPING,
)


class ConvergenceError(RuntimeError):
    '''CG did not reach its tolerance; carries the final relative residual.'''

    def __init__(self, message, residual, iterations):
        super().__init__(f"{message} (relative residual {residual:.3e} after {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations


class NewtonError(RuntimeError):
    '''Newton diverged or stalled; carries the last residual norm.'''

    def __init__(self, message, residual, iterations):
        super().__init__(f"{message} (residual {residual:.3e} after {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True)
class SolverConfig:
    '''Tolerances and caps for CG and Newton.'''
    cg_rel_tol: float = CG_REL_TOL
    cg_max_iter: int = CG_MAX_ITER
    newton_tol: float = NEWTON_TOL
    newton_max_iter: int = NEWTON_MAX_ITER
    newton_damping: float = NEWTON_DAMPING
    newton_min_damping: float = NEWTON_MIN_DAMPING

    def __post_init__(self):
        if self.cg_rel_tol <= 0 or self.newton_tol <= 0:
            raise ValueError("Solver tolerances must be positive")
        if self.cg_max_iter is not None and self.cg_max_iter < 1:
            raise ValueError("cg_max_iter must be at least 1")
        if self.newton_max_iter < 1:
            raise ValueError("newton_max_iter must be at least 1")
        if not 0 < self.newton_damping < 1:
            raise ValueError("newton_damping must lie in (0, 1)")
        if not 0 < self.newton_min_damping <= 1:
            raise ValueError("newton_min_damping must lie in (0, 1]")

    def cg_iteration_cap(self, dofs):
        if self.cg_max_iter is not None:
            return self.cg_max_iter
        return int(10 * np.sqrt(dofs)) + 100


DEFAULT_SOLVER = SolverConfig()


def cg_solve(A, b, cfg=DEFAULT_SOLVER, x0=None, callback=None):
    '''
    Solve A x = b for symmetric positive definite A.

    Jacobi (diagonal) preconditioning. The returned x satisfies
    ||A x - b|| <= cg_rel_tol * ||b||, checked on the true residual.

    Args:
        A: SPD matrix (scipy sparse or dense)
        b (np.ndarray): Right-hand side
        cfg (SolverConfig): Tolerances
        x0 (np.ndarray): Initial guess (zeros if None)
        callback (callable): Called with each iterate

    Returns:
        np.ndarray: Solution vector
    '''
    b = np.asarray(b, dtype=float)
    if A.shape != (b.size, b.size):
        raise ValueError(f"Matrix shape {A.shape} does not match right-hand side of length {b.size}")

    b_norm = np.linalg.norm(b)
    if b_norm == 0.0:
        return np.zeros_like(b)

    diag = np.asarray(A.diagonal(), dtype=float)
    if np.any(diag <= 0):
        raise ValueError("Jacobi preconditioning needs a positive diagonal")
    preconditioner = spla.LinearOperator(A.shape, matvec=lambda r: r / diag, dtype=float)

    iterations = 0

    def _count(xk):
        nonlocal iterations
        iterations += 1
        if callback is not None:
            callback(xk)

    # Half the tolerance for the recursive residual so the true one still meets it.
    x, info = spla.cg(
        A, b,
        x0=x0,
        rtol=0.5 * cfg.cg_rel_tol,
        atol=0.0,
        maxiter=cfg.cg_iteration_cap(b.size),
        M=preconditioner,
        callback=_count,
    )
    if info < 0:
        raise ValueError(f"CG rejected its input (info={info})")

    residual = np.linalg.norm(A @ x - b) / b_norm
    if residual > cfg.cg_rel_tol:
        raise ConvergenceError("CG did not converge", residual, iterations)
    return x


def newton_solve(residual, jacobian, x0, cfg=DEFAULT_SOLVER, scale=None):
    '''
    Damped Newton iteration for residual(x) = 0.

    Converged when ||residual|| <= newton_tol * scale or the accepted step
    has norm <= newton_tol. Steps are halved while they increase the residual.

    Args:
        residual (callable): x -> residual vector
        jacobian (callable): x -> SPD Jacobian matrix
        x0 (np.ndarray): Initial iterate
        cfg (SolverConfig): Tolerances
        scale (float): Residual scale, ||residual(x0)|| if None

    Returns:
        tuple: (solution, iteration count)
    '''
    x = np.array(x0, dtype=float, copy=True)
    r = residual(x)
    r_norm = np.linalg.norm(r)
    tol = cfg.newton_tol * (r_norm if scale is None else scale)
    if r_norm <= tol:
        return x, 0

    linear_cfg = replace(cfg, cg_rel_tol=min(cfg.cg_rel_tol, cfg.newton_tol))

    for iteration in range(1, cfg.newton_max_iter + 1):
        step = cg_solve(jacobian(x), -r, linear_cfg)
        damping = 1.0
        while True:
            trial = x + damping * step
            r_trial = residual(trial)
            trial_norm = np.linalg.norm(r_trial)
            if trial_norm <= r_norm or trial_norm <= tol or damping * np.linalg.norm(step) <= cfg.newton_tol:
                break
            damping *= cfg.newton_damping
            if damping < cfg.newton_min_damping:
                raise NewtonError("Residual increased after full damping", r_norm, iteration)

        x, r, r_norm = trial, r_trial, trial_norm
        if r_norm <= tol or damping * np.linalg.norm(step) <= cfg.newton_tol:
            return x, iteration

    raise NewtonError("Newton did not converge", r_norm, cfg.newton_max_iter)
