"""
Export utilities for convergence studies.
Writes report directories (error table, JSON summary, static and
interactive rate figures) and reads them back for the viewer.
"""

import json
from datetime import datetime
from pathlib import Path

import matplotlib.pyplot as plt
import pandas as pd

from config import CSV_FLOAT_FORMAT, FIGURE_DPI
from plotting_utils import create_rates_figure, plot_probe_ratios, plot_rates
from study_harness import ERROR_COLUMNS, StudyReport

REPORT_FILES = {
    'errors': 'errors.csv',
    'summary': 'report.json',
    'figure': 'rates.svg',
    'interactive': 'rates.html',
}


def emit_report(report, output_dir):
    """
    Write a study report directory.

    Files: errors.csv (ERROR_COLUMNS, 17 significant digits), report.json
    (config, slopes, runtimes), rates.svg and rates.html.

    Args:
        report (StudyReport): Completed study
        output_dir (str or Path): Target directory, created if missing

    Returns:
        dict: {file key: written Path}
    """
    if report is None or report.empty:
        raise ValueError("Cannot emit an empty report")

    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    paths = {key: output_dir / name for key, name in REPORT_FILES.items()}

    report.table[ERROR_COLUMNS].to_csv(paths['errors'], index=False, float_format=CSV_FLOAT_FORMAT)

    summary = {
        'kind': report.kind,
        'exported': datetime.now().isoformat(),
        'slopes': report.slopes,
        **report.metadata,
    }
    paths['summary'].write_text(json.dumps(summary, indent=2, default=str))

    fig = plot_rates(report.table, report.kind, report.slopes)
    fig.savefig(paths['figure'], format='svg', dpi=FIGURE_DPI, bbox_inches='tight')
    plt.close(fig)

    interactive = create_rates_figure(report.table, report.kind, report.slopes)
    paths['interactive'].write_text(interactive.to_html(include_plotlyjs='cdn'))

    print(f"✓ Report written to {output_dir}")
    return paths


def read_error_table(path):
    '''Read errors.csv with exact float round-tripping.'''
    return pd.read_csv(path, float_precision='round_trip')


def load_report(output_dir):
    """
    Load a report directory written by emit_report.

    Args:
        output_dir (str or Path): Directory holding errors.csv and report.json

    Returns:
        StudyReport: Table, slopes and metadata
    """
    output_dir = Path(output_dir)
    table = read_error_table(output_dir / REPORT_FILES['errors'])
    summary = json.loads((output_dir / REPORT_FILES['summary']).read_text())
    kind = summary.pop('kind')
    slopes = summary.pop('slopes')
    return StudyReport(kind, table, slopes, summary)


def emit_probe_report(report, output_dir, settings=None):
    """
    Write the regularity probe outputs: probe.csv, probe.json and probe.svg.

    Args:
        report (pd.DataFrame): Output of stability_ratio
        output_dir (str or Path): Target directory
        settings (dict): Probe configuration recorded in probe.json

    Returns:
        dict: {file key: written Path}
    """
    if report is None or report.empty:
        raise ValueError("Cannot emit an empty probe report")

    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        'table': output_dir / 'probe.csv',
        'summary': output_dir / 'probe.json',
        'figure': output_dir / 'probe.svg',
    }

    report.to_csv(paths['table'], index=False, float_format=CSV_FLOAT_FORMAT)
    summary = {
        'exported': datetime.now().isoformat(),
        'settings': settings or {},
        'ratios': report['ratio'].tolist(),
    }
    paths['summary'].write_text(json.dumps(summary, indent=2, default=str))

    if not report['degenerate'].any():
        fig = plot_probe_ratios(report)
        fig.savefig(paths['figure'], format='svg', dpi=FIGURE_DPI, bbox_inches='tight')
        plt.close(fig)
    else:
        del paths['figure']

    print(f"✓ Probe report written to {output_dir}")
    return paths
