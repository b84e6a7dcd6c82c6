import streamlit as st
from pages.utils.result_utils import get_results_dir, load_document, load_table, experiment_picker
from pages.utils.ui_components import fmt_sci, render_status_pills
from src.reports import decay_figure


def decay():
    st.title("Off-diagonal Decay", help="|K_φ(H_p)(x, x')| for points a fixed distance apart, with the log-log slope in p.")
    results_dir = get_results_dir()
    experiment = experiment_picker(results_dir, "decay.csv")
    if experiment is None:
        return
    table = load_table(str(results_dir), experiment, "decay.csv")
    if table.empty:
        st.warning("decay.csv is empty or unreadable.")
        return
    summary = load_document(str(results_dir / experiment / "decay.json"))

    cols = st.columns(2)
    cols[0].metric("slope", fmt_sci(table["slope"].iloc[0]))
    cols[1].metric("d(x, x')", fmt_sci(summary.get("distance")))
    if summary:
        render_status_pills([(f"slope ≤ {summary.get('threshold', -3)}", summary.get("passes"))])
    st.plotly_chart(decay_figure(table), use_container_width=True)
    st.dataframe(table, use_container_width=True)
