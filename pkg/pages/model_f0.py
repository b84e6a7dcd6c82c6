import streamlit as st
import plotly.express as px
from pages.utils.result_utils import get_results_dir, load_document, load_table, experiment_picker
from pages.utils.ui_components import fmt_sci


def model_f0():
    st.title("Leading Coefficient", help="tr f0(x0) over the torus from the model operator at each point.")
    results_dir = get_results_dir()
    experiment = experiment_picker(results_dir, "f0.csv")
    if experiment is None:
        return
    table = load_table(str(results_dir), experiment, "f0.csv")
    if table.empty:
        st.warning("f0.csv is empty or unreadable.")
        return
    document = load_document(str(results_dir / experiment / "model_f0.json"))

    cols = st.columns(3)
    cols[0].metric("∫ tr f0", fmt_sci(document.get("leading_integral")))
    cols[1].metric("min tr f0", fmt_sci(table["trace_f0"].min()))
    cols[2].metric("max tr f0", fmt_sci(table["trace_f0"].max()))

    if {"x1", "x2"} <= set(table.columns):
        # slice through the first two coordinates
        plane = table
        for extra in [c for c in table.columns if c.startswith("x") and c not in ("x1", "x2")]:
            plane = plane[plane[extra] == plane[extra].min()]
        grid = plane.pivot_table(index="x2", columns="x1", values="trace_f0")
        fig = px.imshow(grid, origin="lower", aspect="equal", labels=dict(color="tr f0"))
        st.plotly_chart(fig, use_container_width=True)

    if document:
        st.subheader("Model point", help="Cyclotron frequencies and ladder at the configured x0.")
        st.json(document)
    st.dataframe(table, use_container_width=True)
