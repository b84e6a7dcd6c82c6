import pandas as pd
import streamlit as st
from pages.utils.result_utils import get_results_dir, load_document
from pages.utils.ui_components import render_status_pills


def verification():
    st.title("Acceptance Report", help="Outcome of scbl verify-all over the reference configs.")
    path = get_results_dir() / "report.json"
    report = load_document(str(path))
    if not report:
        st.info(f"No report at {path}. Run `scbl verify-all --config configs/` first.")
        return

    criteria = report.get("criteria", [])
    render_status_pills([(f"{c['criterion']}. {c['name']}", c["status"] == "pass") for c in criteria])
    st.caption(f"code version {report.get('code_version', '-')}")
    st.divider()

    rows = pd.DataFrame(
        [{"criterion": c["criterion"], "name": c["name"], "status": c["status"], "detail": c.get("detail", "")} for c in criteria]
    )
    st.dataframe(rows, use_container_width=True, hide_index=True)
    for c in criteria:
        with st.expander(f"{c['criterion']}. {c['name']} ({c['status']})"):
            st.write("**Measured**")
            st.json(c.get("measured", {}))
            st.write("**Tolerance**")
            st.json(c.get("tolerance", {}))
