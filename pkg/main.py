'''
Command-line interface for the stochastic Allen-Cahn convergence toolkit.

Subcommands: simulate, spatial-study, temporal-study, probe-regularity.
Each takes --config <file> plus --seed, --paths and --out overrides;
simulate runs the single path [simulate] path_index and accepts only --paths 1.
Exit codes: 0 success, 1 an acceptance threshold from the config was
missed, 2 the run failed.
'''

import argparse
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from config import (
    CSV_FLOAT_FORMAT,
    CUBIC_ENABLED,
    INITIAL_FIELD,
    MASTER_SEED,
    NOISE_MODES,
    OUTPUT_DIR,
    REACTION_COEFF,
    SINE_WEIGHTED_FREQUENCY,
    SIMULATE_J,
    SIMULATE_N,
    SIMULATE_T,
    SNAPSHOT_FORMAT,
    read_config_file,
)
from export_utils import emit_probe_report, emit_report
from fem_core import lq_norm
from noise import build_noise_model, generate_paths
from regularity_probe import ProbeConfig, probe_passes, ratio_spread, stability_ratio
from scheme import INITIAL_FIELDS, SchemeConfig, dump_snapshot, simulate_path
from sparse_linalg import SolverConfig
from study_harness import StudyConfig, run_spatial_study, run_temporal_study


# ==============================================================================
# CONFIG MAPPING
# ==============================================================================

def build_solver_config(sections):
    return SolverConfig(**sections.get('solver', {}))


def noise_settings(sections):
    '''(modes, table, frequency) from the [noise] section; modes = none turns noise off.'''
    noise = sections.get('noise', {})
    if 'modes' in noise:
        kinds = [] if noise['modes'] == ['none'] else noise['modes']
        weights = noise.get('weights', [1.0] * len(kinds))
    else:
        kinds = [kind for kind, _ in NOISE_MODES]
        weights = noise.get('weights', [weight for _, weight in NOISE_MODES])
    if len(weights) != len(kinds):
        raise ValueError(f"[noise] has {len(kinds)} modes but {len(weights)} weights")
    table = noise.get('table')
    return (
        tuple(zip(kinds, weights)),
        None if table is None else tuple(table),
        noise.get('frequency', SINE_WEIGHTED_FREQUENCY),
    )


def build_study_config(sections, kind, args):
    '''StudyConfig for one study kind from parsed sections and CLI overrides.'''
    study = dict(sections.get('study', {}))
    model = sections.get('model', {})
    if study.pop('kind', kind) != kind:
        print(f"⚠️  Config declares a different study kind; running the {kind} study")

    renamed = {'paths': 'M_paths', 'seed': 'master_seed'}
    values = {renamed.get(key, key): value for key, value in study.items()}
    for key in ('levels', 'p_list', 'q_list'):
        if key in values:
            values[key] = tuple(values[key])

    modes, table, frequency = noise_settings(sections)
    values.update(noise_modes=modes, noise_table=table, noise_frequency=frequency)
    if 'cubic' in model:
        values['cubic_enabled'] = model['cubic']
    if 'reaction' in model:
        values['reaction_coeff'] = model['reaction']
    if 'initial' in model:
        values['initial'] = model['initial']
    values['solver'] = build_solver_config(sections)

    if args.seed is not None:
        values['master_seed'] = args.seed
    if args.paths is not None:
        values['M_paths'] = args.paths
    values['output_dir'] = str(args.out or Path(OUTPUT_DIR) / kind)

    if kind == 'spatial':
        return StudyConfig.spatial(**values)
    return StudyConfig.temporal(**values)


def build_probe_config(sections, args):
    probe = dict(sections.get('probe', {}))
    renamed = {'paths': 'M_paths', 'g': 'g_spec'}
    values = {renamed.get(key, key): value for key, value in probe.items()}
    if 'J_list' in values:
        values['J_list'] = tuple(values['J_list'])
    modes, _, _ = noise_settings(sections)
    if modes:
        values['weights'] = tuple(weight for _, weight in modes)
    if args.seed is not None:
        values['seed'] = args.seed
    if args.paths is not None:
        values['M_paths'] = args.paths
    return ProbeConfig(**values)


# ==============================================================================
# SUBCOMMANDS
# ==============================================================================

def cmd_simulate(args, sections):
    '''One path of the scheme; writes trajectory.csv and optional snapshots.'''
    if args.paths not in (None, 1):
        raise ValueError(f"simulate runs a single path (set [simulate] path_index), got --paths {args.paths}")
    settings = sections.get('simulate', {})
    model_section = sections.get('model', {})
    cfg = SchemeConfig(
        T=settings.get('T', SIMULATE_T),
        J=settings.get('J', SIMULATE_J),
        n=settings.get('n', SIMULATE_N),
        cubic_enabled=model_section.get('cubic', CUBIC_ENABLED),
        reaction_coeff=model_section.get('reaction', REACTION_COEFF),
        solver=build_solver_config(sections),
        allow_large_tau=settings.get('allow_large_tau', False),
    )
    seed = args.seed if args.seed is not None else settings.get('seed', MASTER_SEED)
    path_index = settings.get('path_index', 0)
    stride = settings.get('checkpoint_stride', 1)
    fmt = settings.get('dump', SNAPSHOT_FORMAT)
    if fmt not in ('csv', 'npz', 'none'):
        raise ValueError(f"Unknown snapshot format: {fmt}")

    modes, table, frequency = noise_settings(sections)
    model = None
    paths = None
    if modes:
        model = build_noise_model([k for k, _ in modes], [w for _, w in modes], table, frequency)
        paths = generate_paths(model, seed, path_index, cfg.J, cfg.T)

    out = Path(args.out or Path(OUTPUT_DIR) / 'simulate')
    out.mkdir(parents=True, exist_ok=True)
    field_fn = INITIAL_FIELDS[model_section.get('initial', INITIAL_FIELD)]
    trajectory = simulate_path(cfg, model, paths, stride, v=field_fn, verbose=True)

    rows = []
    for t, state in trajectory.checkpoints:
        j = int(round(t / cfg.tau))
        rows.append({'j': j, 't': t, 'l2_norm': lq_norm(state, 2)})
        if fmt != 'none':
            header = {'n': cfg.n, 'J': cfg.J, 'T': cfg.T, 'seed': seed, 'path_index': path_index, 'j': j}
            dump_snapshot(state, out / f"snapshot_{j:06d}.{fmt}", header, fmt)
    pd.DataFrame(rows).to_csv(out / 'trajectory.csv', index=False, float_format=CSV_FLOAT_FORMAT)
    pd.DataFrame({'step': np.arange(cfg.J), 'newton_iterations': trajectory.newton_iters}).to_csv(
        out / 'newton.csv', index=False
    )
    print(f"✓ Trajectory written to {out}")
    return 0


def _cmd_study(kind, runner):
    def handler(args, sections):
        cfg = build_study_config(sections, kind, args)
        report = runner(cfg)
        emit_report(report, cfg.output_dir)
        if report.thresholds_met(cfg.min_slope, cfg.max_slope):
            return 0
        print(f"✗ Fitted slopes outside [{cfg.min_slope}, {cfg.max_slope}]")
        return 1
    return handler


def cmd_probe(args, sections):
    cfg = build_probe_config(sections, args)
    report = stability_ratio(cfg)
    out = Path(args.out or Path(OUTPUT_DIR) / 'probe')
    emit_probe_report(report, out, settings=vars(cfg))
    if 'max_ratio_spread' not in sections.get('probe', {}):
        return 0
    if probe_passes(report, cfg.max_ratio_spread):
        return 0
    print(f"✗ Ratio spread {ratio_spread(report):.3f} exceeds {cfg.max_ratio_spread}")
    return 1


COMMANDS = {
    'simulate': cmd_simulate,
    'spatial-study': _cmd_study('spatial', run_spatial_study),
    'temporal-study': _cmd_study('temporal', run_temporal_study),
    'probe-regularity': cmd_probe,
}


def build_parser():
    parser = argparse.ArgumentParser(
        description="Finite element convergence studies for the stochastic Allen-Cahn equation"
    )
    subparsers = parser.add_subparsers(dest='command', required=True)
    for name in COMMANDS:
        sub = subparsers.add_parser(name)
        sub.add_argument('--config', type=Path, help="Key-value config file (INI sections)")
        sub.add_argument('--seed', type=int, help="Override the master seed")
        sub.add_argument('--paths', type=int, help="Override the Monte-Carlo path count")
        sub.add_argument('--out', type=Path, help="Output directory")
    return parser


def main(argv=None):
    '''Parse arguments, run one subcommand and return its exit code.'''
    args = build_parser().parse_args(argv)
    try:
        sections = read_config_file(args.config)
        return COMMANDS[args.command](args, sections)
    except Exception as e:
        print(f"✗ {args.command} failed: {e}", file=sys.stderr)
        return 2


if __name__ == '__main__':
    sys.exit(main())
