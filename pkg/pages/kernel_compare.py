import streamlit as st
from pages.utils.result_utils import get_results_dir, load_table, experiment_picker
from pages.utils.ui_components import fmt_sci
from src.reports import kernel_figure


def kernel_compare():
    st.title("Rescaled Kernels", help="p^(-d/2) K(x0+Z, x0+Z') against the model kernel F0(√p Z, √p Z') per pair.")
    results_dir = get_results_dir()
    experiment = experiment_picker(results_dir, "kernel_compare.csv")
    if experiment is None:
        return
    table = load_table(str(results_dir), experiment, "kernel_compare.csv")
    if table.empty:
        st.warning("kernel_compare.csv is empty or unreadable.")
        return

    cols = st.columns(2)
    cols[0].metric("max error", fmt_sci(table["err"].max()))
    cols[1].metric("max s-statistic", fmt_sci(table["s_stat"].max()))
    st.plotly_chart(kernel_figure(table), use_container_width=True)
    st.dataframe(table, use_container_width=True)
