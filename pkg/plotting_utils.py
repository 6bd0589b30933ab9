"""
Plotting Utilities for convergence reports.
Log-log error figures with reference-slope guide lines (matplotlib for the
static SVG, plotly for the interactive HTML) and the probe ratio chart.
"""

import matplotlib.pyplot as plt
import numpy as np
import plotly.graph_objects as go

GUIDE_SLOPES = (2.0, 0.5)


def _resolution_column(kind):
    return 'h' if kind == 'spatial' else 'tau'


def _curve_gid(p, q):
    return f"rate-p{p:g}-q{q:g}"


def _guide_line(x, y_anchor, slope):
    '''Line of the given slope through (x[-1], y_anchor) in log-log coordinates.'''
    x = np.asarray(x, dtype=float)
    return y_anchor * (x / x[-1]) ** slope


def plot_rates(table, kind, slopes=None, figsize=(8, 6)):
    """
    Log-log plot of error against resolution, one line per (p, q).

    Each curve carries gid "rate-p{p}-q{q}" so it is a named group in SVG output.

    Args:
        table (pd.DataFrame): Error table with level, h, tau, p, q, error, ci_low, ci_high
        kind (str): 'spatial' (x = h) or 'temporal' (x = τ)
        slopes (list): Fitted slope entries used in the legend
        figsize (tuple): Figure size (width, height)

    Returns:
        matplotlib.figure.Figure: Plotted figure
    """
    column = _resolution_column(kind)
    fitted = {(s['p'], s['q']): s['slope'] for s in slopes or []}

    fig, ax = plt.subplots(figsize=figsize)
    for (p, q), group in table.groupby(['p', 'q'], sort=False):
        group = group.sort_values(column)
        label = f"p={p:g}, q={q:g}"
        if (p, q) in fitted:
            label += f" (slope {fitted[(p, q)]:.2f})"
        ax.loglog(group[column], group['error'], marker='o', linewidth=2, label=label,
                  gid=_curve_gid(p, q))
        ax.fill_between(group[column], group['ci_low'], group['ci_high'], alpha=0.15)

    x = np.sort(table[column].unique())
    anchor = table.loc[table[column] == x[-1], 'error'].max()
    for slope in GUIDE_SLOPES:
        ax.loglog(x, _guide_line(x, anchor, slope), linestyle='--', color='gray',
                  label=f"slope {slope:g}", gid=f"guide-slope-{slope:g}")

    ax.set_xlabel('h' if column == 'h' else 'τ', fontsize=12)
    ax.set_ylabel('pathwise uniform error', fontsize=12)
    ax.set_title(f'{kind.capitalize()} convergence', fontsize=14, fontweight='bold')
    ax.legend(loc='best', fontsize=9)
    ax.grid(True, which='both', alpha=0.3)
    plt.tight_layout()
    return fig


def create_rates_figure(table, kind, slopes=None):
    '''
    Interactive version of plot_rates.

    Returns:
        plotly.graph_objects.Figure: Log-log figure with CI error bars
    '''
    column = _resolution_column(kind)
    fitted = {(s['p'], s['q']): s['slope'] for s in slopes or []}

    fig = go.Figure()
    for (p, q), group in table.groupby(['p', 'q'], sort=False):
        group = group.sort_values(column)
        name = f"p={p:g}, q={q:g}"
        if (p, q) in fitted:
            name += f" (slope {fitted[(p, q)]:.2f})"
        fig.add_trace(go.Scatter(
            x=group[column],
            y=group['error'],
            mode='lines+markers',
            name=name,
            error_y=dict(
                type='data',
                symmetric=False,
                array=group['ci_high'] - group['error'],
                arrayminus=group['error'] - group['ci_low'],
            ),
        ))

    x = np.sort(table[column].unique())
    anchor = table.loc[table[column] == x[-1], 'error'].max()
    for slope in GUIDE_SLOPES:
        fig.add_trace(go.Scatter(
            x=x,
            y=_guide_line(x, anchor, slope),
            mode='lines',
            name=f"slope {slope:g}",
            line=dict(dash='dash', color='gray'),
        ))

    fig.update_layout(
        title=f'{kind.capitalize()} convergence',
        xaxis=dict(type='log', title='h' if column == 'h' else 'τ'),
        yaxis=dict(type='log', title='pathwise uniform error'),
        template='plotly_white',
    )
    return fig


def plot_probe_ratios(report, figsize=(8, 5)):
    '''Stability ratio with its bootstrap interval against J.'''
    fig, ax = plt.subplots(figsize=figsize)
    lower = report['ratio'] - report['ci_low']
    upper = report['ci_high'] - report['ratio']
    ax.errorbar(report['J'], report['ratio'], yerr=[lower, upper], marker='o', capsize=4, linewidth=2)
    ax.set_xscale('log', base=2)
    ax.set_xlabel('J', fontsize=12)
    ax.set_ylabel('lhs / rhs', fontsize=12)
    ax.set_title('Discrete stochastic convolution stability ratio', fontsize=14, fontweight='bold')
    ax.grid(True, alpha=0.3)
    plt.tight_layout()
    return fig
