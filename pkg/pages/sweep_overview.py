import streamlit as st
import plotly.express as px
from pages.mappings.experiments import get_experiment_title
from pages.utils.result_utils import get_results_dir, load_document, load_table, experiment_picker
from pages.utils.ui_components import fmt_sci, render_status_pills
from src.reports import sweep_figure


def sweep_overview():
    st.title("Trace Sweeps", help="p-sweeps of the rescaled trace p^(-d/2) tr φ(H_p) and the half-power fit.")
    results_dir = get_results_dir()
    experiment = experiment_picker(results_dir, "sweep.csv")
    if experiment is None:
        return
    st.caption(get_experiment_title(experiment))

    sweep = load_table(str(results_dir), experiment, "sweep.csv")
    if sweep.empty:
        st.warning("sweep.csv is empty or unreadable.")
        return
    fit = load_document(str(results_dir / experiment / "fit.json"))

    cols = st.columns(4)
    cols[0].metric("p values", len(sweep))
    cols[1].metric("T(p_max)", fmt_sci(sweep["T"].iloc[-1]))
    if fit:
        cols[2].metric("c₀", fmt_sci(fit["coefficients"][0]), help=f"± {fmt_sci(fit['stderrs'][0])}")
        cols[3].metric("condition", fmt_sci(fit["condition_number"]))
        render_status_pills([("residual within cap", fit.get("within_residual_cap"))])

    st.divider()
    coefficients = fit.get("coefficients") if fit else None
    st.plotly_chart(sweep_figure(sweep, coefficients), use_container_width=True)

    if "grid_agreement" in sweep:
        st.subheader("Grid agreement", help="Relative gap between the coarse and fine grid traces at each p.")
        fig = px.bar(sweep, x=sweep["p"].astype(str), y="grid_agreement", log_y=True, labels={"x": "p"})
        st.plotly_chart(fig, use_container_width=True)

    st.dataframe(sweep, use_container_width=True)
