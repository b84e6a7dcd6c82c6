import streamlit as st
from src.database import get_cache_dir, list_records


def cache_records():
    st.title("Result Cache", help="Append-only records of cached sweep entries, keyed by config content hash and code version.")

    @st.cache_data(ttl=60)
    def load_data(cache_dir: str):
        return list_records(cache_dir=cache_dir)

    cache_dir = str(get_cache_dir())
    with st.spinner("Loading cache records..."):
        df = load_data(cache_dir)

    st.write(f"**Cache directory:** {cache_dir}")
    if not df.empty:
        st.metric("records", len(df))
        st.dataframe(df, use_container_width=True)
    else:
        st.info("No cache records found.")
