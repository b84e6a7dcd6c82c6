import pandas as pd
import streamlit as st

def fmt_sci(n, digits: int = 4) -> str:
    """
    Format a number in compact scientific notation.
    Returns "-" if n is None or NaN.
    """
    if n is None or pd.isna(n):
        return "-"
    try:
        n_float = float(n)
    except (ValueError, TypeError):
        return "-"
    if n_float != 0 and (abs(n_float) < 1e-3 or abs(n_float) >= 1e4):
        return f"{n_float:.{digits}e}"
    return f"{n_float:.{digits + 2}g}"

def render_status_pills(items: list):
    """
    Render a row of pass/fail pills.

    Args:
        items: List of tuples (label, passed) where passed is True, False or None.
    """
    def style(passed):
        if passed is None:
            return ("#f1f3f5", "#555", "·")
        return ("#e6f4ea", "#0a0", "✓") if passed else ("#fde8e8", "#d00", "✗")

    pills = []
    for lbl, passed in items:
        bg, fg, mark = style(passed)
        pills.append(
            f"<span style='display:inline-block;margin-right:6px;margin-top:2px;padding:4px 8px;"
            f"border-radius:999px;background:{bg};color:{fg};font-weight:500;font-size:12px;line-height:1;'>"
            f"<strong>{lbl}</strong> {mark}"
            f"</span>"
        )

    st.markdown("".join(pills), unsafe_allow_html=True)
