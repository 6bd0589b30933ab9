'''
Monte-Carlo convergence studies for the stochastic Allen-Cahn scheme.
Spatial study (fixed τ, mesh family, fine-mesh reference) and temporal
study (h ∝ τ^(1/2), fine-τ reference) with pathwise uniform errors,
bootstrap confidence intervals and log-log rate fits.
'''

import hashlib
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache
from itertools import repeat
from math import gcd

import numpy as np
import pandas as pd
from scipy.sparse.linalg import splu
from tqdm import tqdm

from config import (
    ANALYTIC_ERROR_CONICAL_POINTS,
    BOOTSTRAP_CONFIDENCE,
    BOOTSTRAP_RESAMPLES,
    CHECKPOINT_STRIDE,
    CUBIC_ENABLED,
    INITIAL_FIELD,
    MASTER_SEED,
    MONTE_CARLO_PATHS,
    NOISE_MODES,
    NORM_CONICAL_POINTS,
    OUTPUT_DIR,
    P_LIST,
    Q_LIST,
    REACTION_COEFF,
    SINE_WEIGHTED_FREQUENCY,
    SPATIAL_LEVELS,
    SPATIAL_REFERENCE_N,
    SPATIAL_T,
    SPATIAL_TAU,
    TEMPORAL_BASE_N,
    TEMPORAL_LEVELS,
    TEMPORAL_REFERENCE_LEVEL,
    TEMPORAL_T,
    WORKERS,
)
from fem_core import (
    FeFunction,
    conical_rule,
    field_values,
    lq_norm,
    mass_matrix,
    quadrature_lq_norm,
    quadrature_values,
    stiffness_matrix,
)
from mesh import build_structured_mesh, prolongate_to
from noise import build_noise_model, coarsen, generate_paths
from scheme import INITIAL_FIELDS, SchemeConfig, StepError, initial_state, sine_field, simulate_path
from sparse_linalg import SolverConfig

STUDY_KINDS = ('spatial', 'temporal')
REFERENCE_KINDS = ('mesh', 'heat-exact', 'linear-exact')
ERROR_COLUMNS = ['level', 'h', 'tau', 'p', 'q', 'error', 'ci_low', 'ci_high']
RUN_ONLY_SETTINGS = ('workers', 'verbose', 'output_dir')


class StudyError(RuntimeError):
    '''A Monte-Carlo path failed; names the level, path and step.'''

    def __init__(self, level, path, step, detail):
        super().__init__(f"Level {level}, path {path}, step {step}: {detail}")
        self.level = level
        self.path = path
        self.step = step
        self.detail = str(detail)

    def __reduce__(self):
        return self.__class__, (self.level, self.path, self.step, self.detail)


# ==============================================================================
# CONFIGURATION
# ==============================================================================

def _is_power_of_two(k):
    return k >= 1 and not k & (k - 1)


@dataclass(frozen=True)
class StudyConfig:
    '''
    One convergence study.

    Spatial: levels are mesh sizes n at the fixed step tau, reference_level is
    the reference n. Temporal: levels are ℓ with τ_ℓ = T·4^(−ℓ) and
    n_ℓ = base_n·2^ℓ, reference_level is the reference ℓ; the reference mesh
    is reference_n, by default the finest study mesh.
    '''
    study_kind: str = 'spatial'
    levels: tuple = tuple(SPATIAL_LEVELS)
    reference_level: int = SPATIAL_REFERENCE_N
    T: float = SPATIAL_T
    tau: float = SPATIAL_TAU
    base_n: int = TEMPORAL_BASE_N
    reference_n: int = None
    p_list: tuple = tuple(P_LIST)
    q_list: tuple = tuple(Q_LIST)
    M_paths: int = MONTE_CARLO_PATHS
    master_seed: int = MASTER_SEED
    output_dir: str = OUTPUT_DIR
    cubic_enabled: bool = CUBIC_ENABLED
    reaction_coeff: float = REACTION_COEFF
    initial: str = INITIAL_FIELD
    noise_modes: tuple = tuple(NOISE_MODES)
    noise_table: tuple = None
    noise_frequency: int = SINE_WEIGHTED_FREQUENCY
    reference: str = 'mesh'
    workers: int = WORKERS
    checkpoint_stride: int = CHECKPOINT_STRIDE
    allow_large_tau: bool = False
    solver: SolverConfig = field(default_factory=SolverConfig)
    min_slope: float = None
    max_slope: float = None
    verbose: bool = True

    @classmethod
    def spatial(cls, **overrides):
        return cls(**overrides)

    @classmethod
    def temporal(cls, **overrides):
        defaults = dict(
            study_kind='temporal',
            levels=tuple(TEMPORAL_LEVELS),
            reference_level=TEMPORAL_REFERENCE_LEVEL,
            T=TEMPORAL_T,
        )
        defaults.update(overrides)
        return cls(**defaults)

    def __post_init__(self):
        if self.study_kind not in STUDY_KINDS:
            raise ValueError(f"Unknown study kind: {self.study_kind}")
        if self.reference not in REFERENCE_KINDS:
            raise ValueError(f"Unknown reference kind: {self.reference}")
        if self.initial not in INITIAL_FIELDS:
            raise ValueError(f"Unknown initial field: {self.initial}")
        levels = list(self.levels)
        if len(levels) < 3:
            raise ValueError("A rate fit needs at least 3 levels")
        if any(b <= a for a, b in zip(levels, levels[1:])):
            raise ValueError(f"Levels must be strictly increasing, got {levels}")
        if self.reference_level <= levels[-1]:
            raise ValueError(
                f"Reference level {self.reference_level} must be finer than every study level"
            )
        if not self.T > 0:
            raise ValueError(f"Horizon T must be positive, got {self.T}")
        if not self.p_list or min(self.p_list) < 1:
            raise ValueError(f"Moment exponents must be >= 1, got {self.p_list}")
        if not self.q_list or min(self.q_list) < 2:
            raise ValueError(f"Norm exponents must be >= 2, got {self.q_list}")
        if self.M_paths < 1 or self.workers < 1 or self.checkpoint_stride < 1:
            raise ValueError("paths, workers and checkpoint_stride must be positive")

        ref_n, _ = self.reference_resolution()
        for _, n, _ in self.resolutions():
            if ref_n % n or not _is_power_of_two(ref_n // n):
                raise ValueError(f"Mesh n={n} does not nest dyadically into the reference n={ref_n}")

        self.noise_model()  # validates mode kinds, weights and table
        if self.reference == 'heat-exact':
            if self.cubic_enabled or self.noise_modes or self.initial != 'sine':
                raise ValueError("heat-exact reference needs cubic off, noise off and the sine initial field")
        if self.reference == 'linear-exact':
            kinds = [kind for kind, _ in self.noise_modes]
            if self.cubic_enabled or kinds != ['identity']:
                raise ValueError("linear-exact reference needs cubic off and a single identity mode")

    def resolutions(self):
        '''(level, n, J) for every study level.'''
        if self.study_kind == 'spatial':
            J = int(round(self.T / self.tau))
            if J < 1 or abs(J * self.tau - self.T) > 1e-9 * self.T:
                raise ValueError(f"T = {self.T} is not a multiple of tau = {self.tau}")
            return [(n, n, J) for n in self.levels]
        return [(level, self.base_n * 2 ** level, 4 ** level) for level in self.levels]

    def reference_resolution(self):
        '''(n, J) of the reference run; also the resolution paths are drawn at.'''
        if self.study_kind == 'spatial':
            return self.reference_level, self.resolutions()[0][2]
        n = self.reference_n or self.base_n * 2 ** max(self.levels)
        return n, 4 ** self.reference_level

    def noise_model(self):
        if not self.noise_modes:
            return None
        kinds = [kind for kind, _ in self.noise_modes]
        weights = [weight for _, weight in self.noise_modes]
        return build_noise_model(kinds, weights, self.noise_table, self.noise_frequency)

    def scheme_config(self, n, J):
        return SchemeConfig(
            T=self.T,
            J=J,
            n=n,
            cubic_enabled=self.cubic_enabled,
            reaction_coeff=self.reaction_coeff,
            q_list=tuple(self.q_list),
            p_list=tuple(self.p_list),
            solver=self.solver,
            allow_large_tau=self.allow_large_tau,
        )

    def config_hash(self):
        '''Hash of the settings that determine the results.'''
        settings = {k: v for k, v in asdict(self).items() if k not in RUN_ONLY_SETTINGS}
        text = json.dumps(settings, sort_keys=True, default=str)
        return hashlib.sha256(text.encode()).hexdigest()[:12]


@dataclass
class StudyReport:
    '''Error table (ERROR_COLUMNS), fitted slopes per (p, q) and run metadata.'''
    kind: str
    table: pd.DataFrame
    slopes: list
    metadata: dict = field(default_factory=dict)

    @property
    def empty(self):
        return self.table is None or self.table.empty

    def slope_for(self, p, q):
        for entry in self.slopes:
            if entry['p'] == p and entry['q'] == q:
                return entry['slope']
        raise KeyError(f"No slope for p={p}, q={q}")

    def thresholds_met(self, min_slope=None, max_slope=None):
        '''True when every fitted slope lies in [min_slope, max_slope] (bounds optional).'''
        for entry in self.slopes:
            if min_slope is not None and entry['slope'] < min_slope:
                return False
            if max_slope is not None and entry['slope'] > max_slope:
                return False
        return True


# ==============================================================================
# ERROR STATISTICS
# ==============================================================================

def snapshot_error(coarse, ref, q):
    '''‖prolongate(coarse) − ref‖_{L^q} on the reference mesh.'''
    return lq_norm(prolongate_to(coarse, ref.mesh) - ref, q)


def pathwise_max_error(traj_coarse, traj_ref, q):
    '''
    max over shared checkpoints t_j > 0 of ‖prolongate(Y_j) − Y_ref(t_j)‖_{L^q}.

    Every coarse checkpoint time must exist in the reference trajectory.
    '''
    ref_times = np.array(traj_ref.times)
    worst = 0.0
    for t, coarse in traj_coarse.checkpoints:
        if t <= 0.0:
            continue
        matches = np.flatnonzero(np.isclose(ref_times, t, rtol=0.0, atol=1e-12 * max(1.0, t)))
        if matches.size == 0:
            raise ValueError(f"Checkpoint t={t} has no counterpart in the reference grid")
        worst = max(worst, snapshot_error(coarse, traj_ref.checkpoints[matches[0]][1], q))
    return worst


def moment_norm(samples, p):
    '''((1/M) Σ_m x_m^p)^(1/p), the Monte-Carlo L^p(Ω) norm.'''
    samples = np.asarray(samples, dtype=float)
    return float(np.mean(samples ** p) ** (1.0 / p))


def pathwise_uniform_error(traj_coarse, traj_ref, p, q):
    '''
    Monte-Carlo L^p(Ω) norm of the per-path maximum L^q error.

    Args:
        traj_coarse: Trajectory or list of trajectories (one per path)
        traj_ref: Matching reference trajectory or list
        p (float): Moment exponent
        q (float): Spatial exponent

    Returns:
        float: ((1/M) Σ_m max_j ‖e_j^m‖_{L^q}^p)^(1/p)
    '''
    if not isinstance(traj_coarse, (list, tuple)):
        traj_coarse, traj_ref = [traj_coarse], [traj_ref]
    if len(traj_coarse) != len(traj_ref) or not traj_coarse:
        raise ValueError("Coarse and reference trajectories must pair up path by path")
    maxima = [pathwise_max_error(c, r, q) for c, r in zip(traj_coarse, traj_ref)]
    return moment_norm(maxima, p)


def bootstrap_ci(samples, p, rng, resamples=BOOTSTRAP_RESAMPLES, confidence=BOOTSTRAP_CONFIDENCE):
    '''Percentile bootstrap interval for moment_norm(samples, p).'''
    samples = np.asarray(samples, dtype=float)
    index = rng.integers(0, samples.size, size=(resamples, samples.size))
    estimates = np.mean(samples[index] ** p, axis=1) ** (1.0 / p)
    alpha = 0.5 * (1.0 - confidence)
    low, high = np.quantile(estimates, [alpha, 1.0 - alpha])
    return float(low), float(high)


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    adjacent_slopes: tuple


def fit_rate(pairs):
    '''
    Least-squares slope of log(error) against log(resolution).

    Args:
        pairs (list): (resolution, error) pairs, at least 3, errors > 0

    Returns:
        RateFit: Slope, intercept and the slope between each adjacent pair
    '''
    pairs = list(pairs)
    if len(pairs) < 3:
        raise ValueError(f"A rate fit needs at least 3 pairs, got {len(pairs)}")
    resolution = np.array([r for r, _ in pairs], dtype=float)
    error = np.array([e for _, e in pairs], dtype=float)
    if np.any(~np.isfinite(error)) or np.any(error <= 0):
        raise ValueError("Errors must be positive; a zero error means a level was compared to itself")
    if np.any(resolution <= 0):
        raise ValueError("Resolutions must be positive")

    x, y = np.log(resolution), np.log(error)
    slope, intercept = np.polyfit(x, y, 1)
    adjacent = tuple(float(s) for s in np.diff(y) / np.diff(x))
    return RateFit(float(slope), float(intercept), adjacent)


# ==============================================================================
# ORACLES
# ==============================================================================

@lru_cache(maxsize=None)
def _principal_mode(mesh, iterations=60):
    '''
    Smallest generalized eigenpair A e = μ M e by inverse power iteration.

    Started from the sine interpolant; A is factorized once, e is M-normalized.
    '''
    M = mass_matrix(mesh)
    A = stiffness_matrix(mesh)
    solve = splu(A.tocsc()).solve
    x = initial_state(mesh, sine_field).coeffs
    x = x / np.sqrt(x @ (M @ x))
    for _ in range(iterations):
        x = solve(M @ x)
        x = x / np.sqrt(x @ (M @ x))
    return FeFunction(mesh, x), float(x @ (A @ x))


def heat_decay(t, reaction_coeff=REACTION_COEFF):
    '''e^{(r − 3π²)t}, the amplitude of the sine mode under the heat flow.'''
    return float(np.exp((reaction_coeff - 3.0 * np.pi ** 2) * t))


def _linear_exact_oracle(cfg, scheme_cfg, model, paths):
    '''
    Pathwise solution of the spatially discrete linear model started on e_h:

        Y(t) = exp(√λ β(t) − λt/2 + (r − μ_h)t)·c₀·e_h.
    '''
    mesh = build_structured_mesh(scheme_cfg.n)
    mode, mu = _principal_mode(mesh)
    v = initial_state(mesh, INITIAL_FIELDS[cfg.initial], cfg.solver)
    c0 = float(mode.coeffs @ (mass_matrix(mesh) @ v.coeffs))
    lam = model.weights[0]
    beta = paths.brownian_motion()[0]
    times = np.arange(scheme_cfg.J + 1) * scheme_cfg.tau
    growth = np.exp(np.sqrt(lam) * beta - 0.5 * lam * times + (cfg.reaction_coeff - mu) * times)
    return mode * c0, lambda j: mode * (c0 * growth[j])


# ==============================================================================
# STUDIES
# ==============================================================================

def _check_coupling(fine, coarse, level, path_index):
    '''Coarse increments must be block sums of the reference increments.'''
    factor = fine.num_steps // coarse.num_steps
    blocks = fine.increments.reshape(fine.increments.shape[0], coarse.num_steps, factor).sum(axis=2)
    tol = 1e-12 * np.sqrt(fine.T)
    if not np.allclose(blocks, coarse.increments, rtol=0.0, atol=tol):
        raise StudyError(level, path_index, None, "coarse increments are not block sums of the reference path")


def _path_errors(cfg, path_index):
    '''Per-level maximum error over shared checkpoints for one path: (levels, q) array.'''
    model = cfg.noise_model()
    field_fn = INITIAL_FIELDS[cfg.initial]
    ref_n, ref_J = cfg.reference_resolution()
    fine = None if model is None else generate_paths(model, cfg.master_seed, path_index, ref_J, cfg.T)
    levels = cfg.resolutions()
    maxima = np.zeros((len(levels), len(cfg.q_list)))
    stored = [{} for _ in levels]

    for i, (level, n, J) in enumerate(levels):
        scheme_cfg = cfg.scheme_config(n, J)
        ratio = ref_J // J
        paths = None
        if fine is not None:
            paths = coarsen(fine, ratio)
            _check_coupling(fine, paths, level, path_index)

        try:
            initial = None
            if cfg.reference == 'mesh':
                def observer(j, t, y, keep=stored[i], ratio=ratio):
                    if j > 0:
                        keep[j * ratio] = y
            elif cfg.reference == 'heat-exact':
                mesh = build_structured_mesh(n)
                quad = conical_rule(ANALYTIC_ERROR_CONICAL_POINTS)
                sine_values = field_values(mesh, sine_field, quad)

                def observer(j, t, y, row=maxima[i], mesh=mesh, quad=quad, sine_values=sine_values):
                    if j > 0:
                        diff = quadrature_values(y, quad) - heat_decay(t, cfg.reaction_coeff) * sine_values
                        np.maximum(row, [quadrature_lq_norm(mesh, diff, q, quad) for q in cfg.q_list], out=row)
            else:
                initial, exact_at = _linear_exact_oracle(cfg, scheme_cfg, model, paths)

                def observer(j, t, y, row=maxima[i], exact_at=exact_at):
                    if j > 0:
                        diff = y - exact_at(j)
                        np.maximum(row, [lq_norm(diff, q) for q in cfg.q_list], out=row)

            simulate_path(scheme_cfg, model, paths, cfg.checkpoint_stride, v=field_fn,
                          initial=initial, observer=observer, store=False)
        except StepError as e:
            raise StudyError(level, path_index, e.step, e) from e
        except (RuntimeError, ValueError) as e:
            raise StudyError(level, path_index, None, e) from e

    if cfg.reference != 'mesh':
        return maxima

    stride = 0
    for _, _, J in levels:
        stride = gcd(stride, (ref_J // J) * cfg.checkpoint_stride)

    def reference_observer(j, t, y):
        for i, keep in enumerate(stored):
            coarse = keep.pop(j, None)
            if coarse is not None:
                errors = [snapshot_error(coarse, y, q) for q in cfg.q_list]
                np.maximum(maxima[i], errors, out=maxima[i])

    try:
        simulate_path(cfg.scheme_config(ref_n, ref_J), model, fine, stride, v=field_fn,
                      observer=reference_observer, store=False)
    except StepError as e:
        raise StudyError('reference', path_index, e.step, e) from e
    except (RuntimeError, ValueError) as e:
        raise StudyError('reference', path_index, None, e) from e

    if any(stored):
        raise StudyError('reference', path_index, None, "coarse checkpoints missing from the reference grid")
    return maxima


def _run_paths(cfg, num_paths):
    desc = f"{cfg.study_kind} study"
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as executor:
            results = executor.map(_path_errors, repeat(cfg), range(num_paths))
            return list(tqdm(results, total=num_paths, desc=desc, disable=not cfg.verbose))
    return [_path_errors(cfg, m) for m in tqdm(range(num_paths), desc=desc, disable=not cfg.verbose)]


def run_study(cfg):
    '''
    Run a spatial or temporal study and fit its rates.

    Args:
        cfg (StudyConfig): Study definition

    Returns:
        StudyReport: Errors per (level, p, q), slopes and metadata
    '''
    started = time.perf_counter()
    levels = cfg.resolutions()
    ref_n, ref_J = cfg.reference_resolution()

    warnings = []
    for _, n, J in levels + [(None, ref_n, ref_J)]:
        scheme_cfg = cfg.scheme_config(n, J)
        if not scheme_cfg.tau_condition_met:
            warnings.append(f"tau {scheme_cfg.tau:.3e} > h^2 {scheme_cfg.h ** 2:.3e} at n={n}")
    for message in warnings:
        print(f"⚠️  {message}")

    num_paths = cfg.M_paths
    if not cfg.noise_modes and num_paths > 1:
        print(f"⚠️  Noise is off; running 1 path instead of {num_paths}")
        num_paths = 1

    try:
        samples = np.stack(_run_paths(cfg, num_paths))
    except StudyError as e:
        print(f"✗ {cfg.study_kind.capitalize()} study failed: {e}")
        raise

    rng = np.random.default_rng(cfg.master_seed)
    rows = []
    for i, (level, n, J) in enumerate(levels):
        for p in cfg.p_list:
            for k, q in enumerate(cfg.q_list):
                error = moment_norm(samples[:, i, k], p)
                ci_low, ci_high = bootstrap_ci(samples[:, i, k], p, rng)
                rows.append({
                    'level': level,
                    'h': float(np.sqrt(3.0) / n),
                    'tau': cfg.T / J,
                    'p': p,
                    'q': q,
                    'error': error,
                    'ci_low': ci_low,
                    'ci_high': ci_high,
                })
    table = pd.DataFrame(rows, columns=ERROR_COLUMNS)

    resolution = 'h' if cfg.study_kind == 'spatial' else 'tau'
    slopes = []
    for p in cfg.p_list:
        for q in cfg.q_list:
            group = table[(table['p'] == p) & (table['q'] == q)]
            fit = fit_rate(zip(group[resolution], group['error']))
            slopes.append({
                'p': p,
                'q': q,
                'slope': fit.slope,
                'intercept': fit.intercept,
                'adjacent_slopes': list(fit.adjacent_slopes),
            })

    elapsed = time.perf_counter() - started
    metadata = {
        'config': asdict(cfg),
        'config_hash': cfg.config_hash(),
        'master_seed': cfg.master_seed,
        'paths': num_paths,
        'reference': {'kind': cfg.reference, 'n': ref_n, 'J': ref_J},
        'tau_warnings': warnings,
        'norm_quadrature': {
            'even_q': 'exact',
            'other_q_conical_points': NORM_CONICAL_POINTS,
            'analytic_reference_conical_points': ANALYTIC_ERROR_CONICAL_POINTS,
        },
        'runtimes': {'total_seconds': elapsed, 'per_path_seconds': elapsed / num_paths},
    }
    report = StudyReport(cfg.study_kind, table, slopes, metadata)

    if cfg.verbose:
        print(f"✓ {cfg.study_kind.capitalize()} study finished in {elapsed:.1f}s ({num_paths} paths)")
        for entry in slopes:
            print(f"   p={entry['p']:g} q={entry['q']:g}: slope {entry['slope']:.3f}")
    return report


def run_spatial_study(cfg):
    '''Spatial convergence: fixed τ, meshes cfg.levels against the reference mesh.'''
    if cfg.study_kind != 'spatial':
        cfg = replace(cfg, study_kind='spatial')
    return run_study(cfg)


def run_temporal_study(cfg):
    '''Temporal convergence: τ_ℓ = T·4^(−ℓ), n_ℓ = n₀·2^ℓ against a fine-τ reference.'''
    if cfg.study_kind != 'temporal':
        cfg = replace(cfg, study_kind='temporal')
    return run_study(cfg)
