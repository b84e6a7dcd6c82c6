"""Result files: CSV tables, JSON documents and plotly figures (SVG via kaleido)."""

import json
import logging
import math
from pathlib import Path
from typing import Any, Mapping, Optional, Union

import numpy as np
import pandas as pd
import plotly.graph_objects as go

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"


def _jsonable(value: Any) -> Any:
    if isinstance(value, Mapping):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if not math.isfinite(value):
            return str(value)
        return _Float17(value)
    if isinstance(value, complex):
        return {"re": _jsonable(value.real), "im": _jsonable(value.imag)}
    return value


class _Float17(float):
    def __repr__(self) -> str:
        return format(float(self), ".17g")


def _float17_iterencode(obj, indent, sort_keys, level=0):
    """JSON text with every float written as %.17g.

    The stdlib encoder writes the shortest round-trip repr (0.1, not
    0.10000000000000001) and cannot be given a float format, so report.json
    would not carry the same 17 digits as the CSV tables.
    """
    pad = "" if indent is None else "\n" + " " * (indent * (level + 1))
    close = "" if indent is None else "\n" + " " * (indent * level)
    sep = ", " if indent is None else ","
    if isinstance(obj, _Float17):
        yield repr(obj)
    elif isinstance(obj, dict):
        if not obj:
            yield "{}"
            return
        items = sorted(obj.items()) if sort_keys else obj.items()
        yield "{"
        for i, (k, v) in enumerate(items):
            yield (sep if i else "") + pad + json.dumps(k) + ": "
            yield from _float17_iterencode(v, indent, sort_keys, level + 1)
        yield close + "}"
    elif isinstance(obj, list):
        if not obj:
            yield "[]"
            return
        yield "["
        for i, v in enumerate(obj):
            yield (sep if i else "") + pad
            yield from _float17_iterencode(v, indent, sort_keys, level + 1)
        yield close + "]"
    else:
        yield json.dumps(obj)


def dumps_json(document: Any) -> str:
    """Pretty JSON with sorted keys; floats carry 17 significant digits."""
    return "".join(_float17_iterencode(_jsonable(document), 2, True)) + "\n"


def write_json(document: Any, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_json(document), encoding="utf-8")
    logger.info("wrote %s", path)
    return path


def write_csv(df: pd.DataFrame, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    logger.info("wrote %s (%d rows)", path, len(df))
    return path


def save_figure(fig: go.Figure, path: Union[str, Path]) -> Path:
    """SVG through kaleido; standalone HTML next to it when kaleido is unavailable."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        fig.write_image(str(path), format="svg")
        logger.info("wrote %s", path)
        return path
    except Exception as e:
        fallback = path.with_suffix(".html")
        logger.warning("SVG export unavailable (%s); writing %s", e, fallback)
        fig.write_html(str(fallback), include_plotlyjs="cdn")
        return fallback


def sweep_figure(sweep: pd.DataFrame, coefficients: Optional[np.ndarray] = None) -> go.Figure:
    """T(p) against p^{-1/2}, with the fitted half-power polynomial when given."""
    x = sweep["p"].to_numpy(dtype=float) ** -0.5
    fig = go.Figure()
    fig.add_trace(
        go.Scatter(
            x=x,
            y=sweep["T"],
            mode="markers",
            name="T(p)",
            error_y=dict(type="data", array=sweep["stderr"].fillna(0.0)) if "stderr" in sweep else None,
        )
    )
    if coefficients is not None:
        grid = np.linspace(0.0, float(x.max()) * 1.05, 200)
        fit = sum(c * grid**r for r, c in enumerate(coefficients))
        fig.add_trace(go.Scatter(x=grid, y=fit, mode="lines", name="fit"))
    fig.update_layout(
        xaxis_title="p^(-1/2)",
        yaxis_title="p^(-d/2) tr phi(H_p)",
        template="plotly_white",
        margin=dict(l=10, r=10, t=30, b=10),
    )
    return fig


def decay_figure(decay: pd.DataFrame) -> go.Figure:
    fig = go.Figure()
    fig.add_trace(go.Scatter(x=decay["p"], y=decay["abs_kernel"], mode="lines+markers", name="|K(x, x')|"))
    slope = float(decay["slope"].iloc[0]) if len(decay) else float("nan")
    fig.update_layout(
        title=f"log-log slope {slope:.3f}",
        xaxis=dict(title="p", type="log"),
        yaxis=dict(title="|K_phi(H_p)(x, x')|", type="log", exponentformat="e"),
        template="plotly_white",
        margin=dict(l=10, r=10, t=40, b=10),
    )
    return fig


def kernel_figure(table: pd.DataFrame) -> go.Figure:
    """Error and s-statistic per comparison pair."""
    labels = [f"pair {i}" for i in range(len(table))]
    fig = go.Figure()
    fig.add_trace(go.Bar(x=labels, y=table["err"], name="err"))
    fig.add_trace(go.Bar(x=labels, y=table["s_stat"], name="s-statistic"))
    fig.update_layout(barmode="group", yaxis=dict(type="log"), template="plotly_white", margin=dict(l=10, r=10, t=30, b=10))
    return fig
