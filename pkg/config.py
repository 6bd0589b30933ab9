'''
Configuration and constants for the stochastic Allen-Cahn convergence toolkit.
Defaults for solvers, studies and the regularity probe, plus the
key-value config file reader used by the command-line interface.
'''

import configparser
from pathlib import Path

# ==============================================================================
# SOLVER CONFIGURATION
# ==============================================================================
CG_REL_TOL = 1e-10
CG_MAX_ITER = None  # None -> 10 * sqrt(dofs) + 100
NEWTON_TOL = 1e-11
NEWTON_MAX_ITER = 25
NEWTON_DAMPING = 0.5
NEWTON_MIN_DAMPING = 2.0 ** -10

# ==============================================================================
# MODEL CONFIGURATION
# ==============================================================================
# dy = (Δy + r·y − y³) dt + F(y) dW_H, y(0) = v
REACTION_COEFF = 1.0
CUBIC_ENABLED = True
INITIAL_FIELD = 'sine'  # v(x) = sin(πx₁) sin(πx₂) sin(πx₃)

# Diffusion modes: (kind, weight λ). The reference experiment is F(y) = y.
NOISE_MODES = [('identity', 1.0)]
SINE_WEIGHTED_FREQUENCY = 1

# ==============================================================================
# QUADRATURE
# ==============================================================================
# Assembly uses the 4-point degree-2 rule. Conical product rules with m points
# per axis are exact to degree 2m - 1.
NORM_CONICAL_POINTS = 4             # L^q norms for q not an even integer
ANALYTIC_ERROR_CONICAL_POINTS = 3   # distance to closed-form fields, square-function norm

# ==============================================================================
# STUDY DEFAULTS (desk scale)
# ==============================================================================
# Spatial: fixed τ, mesh family, fine-mesh reference
SPATIAL_LEVELS = [4, 8, 16]
SPATIAL_REFERENCE_N = 32
SPATIAL_TAU = 1e-4
SPATIAL_T = 0.01

# Temporal: τ_ℓ = T·4^(−ℓ), n_ℓ = n₀·2^ℓ so that h ∝ τ^(1/2)
TEMPORAL_LEVELS = [1, 2, 3, 4]
TEMPORAL_REFERENCE_LEVEL = 6
TEMPORAL_BASE_N = 2
TEMPORAL_T = 0.1

P_LIST = [2, 4, 16]
Q_LIST = [2, 4, 16]
MONTE_CARLO_PATHS = 64
MASTER_SEED = 20240917
WORKERS = 1
CHECKPOINT_STRIDE = 1

BOOTSTRAP_RESAMPLES = 1000
CONFIDENCE_LEVEL = 0.99
BOOTSTRAP_CONFIDENCE = 0.95

# ==============================================================================
# SINGLE PATH DEFAULTS
# ==============================================================================
SIMULATE_N = 8
SIMULATE_J = 64
SIMULATE_T = 0.1
SNAPSHOT_FORMAT = 'none'  # csv | npz | none

# ==============================================================================
# REGULARITY PROBE DEFAULTS
# ==============================================================================
PROBE_P = 4.0
PROBE_Q = 4.0
PROBE_J_LIST = [8, 16, 32, 64]
PROBE_N = 8
PROBE_PATHS = 256
PROBE_T = 0.1
PROBE_G = 'constant'
PROBE_MAX_RATIO_SPREAD = 1.5

# ==============================================================================
# OUTPUT CONFIGURATION
# ==============================================================================
OUTPUT_DIR = 'results'
CSV_FLOAT_FORMAT = '%.17g'
FIGURE_DPI = 150

# ==============================================================================
# CONFIG FILE SCHEMA
# ==============================================================================
# section -> key -> parser. Unknown keys are rejected so typos do not pass silently.


def _parse_bool(text):
    value = text.strip().lower()
    if value in ('1', 'true', 'yes', 'on'):
        return True
    if value in ('0', 'false', 'no', 'off'):
        return False
    raise ValueError(f"Not a boolean: {text!r}")


def _parse_int_list(text):
    return [int(item) for item in text.split(',') if item.strip()]


def _parse_float_list(text):
    return [float(item) for item in text.split(',') if item.strip()]


def _parse_str_list(text):
    return [item.strip() for item in text.split(',') if item.strip()]


def _parse_table(text):
    '''Parse "y0:f0, y1:f1, ..." into a list of (y, f) pairs.'''
    pairs = []
    for item in _parse_str_list(text):
        y_text, f_text = item.split(':')
        pairs.append((float(y_text), float(f_text)))
    return pairs


CONFIG_SCHEMA = {
    'study': {
        'kind': str,
        'levels': _parse_int_list,
        'reference_level': int,
        'reference_n': int,
        'base_n': int,
        'T': float,
        'tau': float,
        'p_list': _parse_float_list,
        'q_list': _parse_float_list,
        'paths': int,
        'seed': int,
        'workers': int,
        'checkpoint_stride': int,
        'reference': str,
        'allow_large_tau': _parse_bool,
        'min_slope': float,
        'max_slope': float,
    },
    'model': {
        'cubic': _parse_bool,
        'reaction': float,
        'initial': str,
    },
    'noise': {
        'modes': _parse_str_list,
        'weights': _parse_float_list,
        'table': _parse_table,
        'frequency': int,
    },
    'solver': {
        'cg_rel_tol': float,
        'cg_max_iter': int,
        'newton_tol': float,
        'newton_max_iter': int,
    },
    'probe': {
        'p': float,
        'q': float,
        'J_list': _parse_int_list,
        'n': int,
        'paths': int,
        'T': float,
        'seed': int,
        'g': str,
        'max_ratio_spread': float,
    },
    'simulate': {
        'n': int,
        'J': int,
        'T': float,
        'seed': int,
        'path_index': int,
        'checkpoint_stride': int,
        'dump': str,
        'allow_large_tau': _parse_bool,
    },
}


def parse_config_text(text):
    '''
    Parse key-value config text (INI sections) against CONFIG_SCHEMA.

    Args:
        text (str): Config file contents

    Returns:
        dict: {section: {key: typed value}} holding only the keys present
    '''
    parser = configparser.ConfigParser(inline_comment_prefixes=('#', ';'))
    parser.optionxform = str  # keys are case-sensitive (T, J_list)
    parser.read_string(text)

    parsed = {}
    for section in parser.sections():
        if section not in CONFIG_SCHEMA:
            raise ValueError(f"Unknown config section: [{section}]")
        schema = CONFIG_SCHEMA[section]
        values = {}
        for key, raw in parser.items(section):
            if key not in schema:
                raise ValueError(f"Unknown key '{key}' in section [{section}]")
            try:
                values[key] = schema[key](raw)
            except ValueError as e:
                raise ValueError(f"Bad value for [{section}] {key} = {raw!r}: {e}") from e
        parsed[section] = values
    return parsed


def read_config_file(path):
    '''Read and parse a config file; a missing path yields an empty config.'''
    if path is None:
        return {}
    return parse_config_text(Path(path).read_text())
