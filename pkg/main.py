import streamlit as st

st.set_page_config(layout="wide")
from pages.sweep_overview import sweep_overview
from pages.kernel_compare import kernel_compare
from pages.decay import decay
from pages.model_f0 import model_f0
from pages.verification import verification
from pages.cache_records import cache_records

verification_page = st.Page(
    verification,
    title="Acceptance",
    icon=":material/fact_check:",
    default=True,
)

sweep_overview_page = st.Page(
    sweep_overview,
    title="Trace Sweeps",
    icon=":material/show_chart:",
)

model_f0_page = st.Page(
    model_f0,
    title="Leading Coefficient",
    icon=":material/grid_on:",
)

kernel_compare_page = st.Page(
    kernel_compare,
    title="Rescaled Kernels",
    icon=":material/compare_arrows:",
)

decay_page = st.Page(
    decay,
    title="Off-diagonal Decay",
    icon=":material/trending_down:",
)

cache_records_page = st.Page(
    cache_records,
    title="Cache",
    icon=":material/storage:",
)

pg = st.navigation(
    {
        "Report": [verification_page],
        "Traces": [sweep_overview_page, model_f0_page],
        "Kernels": [kernel_compare_page, decay_page],
        "Cache": [cache_records_page],
    }
)

pg.run()
