'''
Convergence report viewer
Interactive browser for report directories written by the study CLI.

Run with: streamlit run streamlit_app.py -- <report_dir>
'''

import sys
from pathlib import Path

import streamlit as st

from config import OUTPUT_DIR
from export_utils import REPORT_FILES, load_report
from plotting_utils import create_rates_figure

# Page configuration
st.set_page_config(
    page_title="Convergence report",
    page_icon="📉",
    layout="wide",
    initial_sidebar_state="expanded"
)


def _report_dirs(root):
    '''Directories under root that hold an errors table.'''
    root = Path(root)
    if (root / REPORT_FILES['errors']).exists():
        return [root]
    return sorted(p.parent for p in root.glob(f"*/{REPORT_FILES['errors']}"))


default_root = sys.argv[1] if len(sys.argv) > 1 else OUTPUT_DIR

with st.sidebar:
    st.header("Reports")
    root = st.text_input("Report directory", value=str(default_root))
    candidates = _report_dirs(root)
    if not candidates:
        st.warning(f"No report found under {root}")
        st.stop()
    selected = st.selectbox("Study", candidates, format_func=lambda p: p.name)

try:
    report = load_report(selected)
except Exception as e:
    st.error(f"Could not load report from {selected}: {e}")
    st.stop()

st.title(f"{report.kind.capitalize()} convergence study")
st.caption(f"config {report.metadata.get('config_hash', '?')} · seed {report.metadata.get('master_seed', '?')}")

runtimes = report.metadata.get('runtimes', {})
col1, col2, col3 = st.columns(3)
with col1:
    st.metric("Paths", report.metadata.get('paths', '?'))
with col2:
    st.metric("Levels", report.table['level'].nunique())
with col3:
    st.metric("Runtime", f"{runtimes.get('total_seconds', 0.0):,.1f} s")

for warning in report.metadata.get('tau_warnings', []):
    st.warning(warning)

tab_rates, tab_table, tab_config = st.tabs(["Rates", "Errors", "Configuration"])

with tab_rates:
    st.plotly_chart(create_rates_figure(report.table, report.kind, report.slopes), width="stretch")
    st.dataframe(
        [{'p': s['p'], 'q': s['q'], 'slope': s['slope'], 'adjacent': s['adjacent_slopes']}
         for s in report.slopes],
        width="stretch",
    )

with tab_table:
    p_values = sorted(report.table['p'].unique())
    chosen = st.multiselect("p", p_values, default=p_values)
    st.dataframe(report.table[report.table['p'].isin(chosen)], width="stretch")
    st.download_button(
        "Download errors.csv",
        data=(selected / REPORT_FILES['errors']).read_bytes(),
        file_name=f"{selected.name}_errors.csv",
        mime="text/csv",
    )

with tab_config:
    st.json(report.metadata.get('config', {}))
