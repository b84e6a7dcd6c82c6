import json
import logging
import os
from pathlib import Path

import pandas as pd
import streamlit as st
from dotenv import load_dotenv

load_dotenv()


def get_results_dir() -> Path:
    return Path(os.getenv("SCBL_RESULTS", os.getenv("SCBL_OUT", "results")))


@st.cache_data(ttl=60, show_spinner=False)
def list_experiments(results_dir: str) -> list:
    """Experiment subdirectories that hold at least one result file."""
    root = Path(results_dir)
    if not root.is_dir():
        return []
    return sorted(p.name for p in root.iterdir() if p.is_dir() and (any(p.glob("*.csv")) or any(p.glob("*.json"))))


@st.cache_data(ttl=60, show_spinner=False)
def load_table(results_dir: str, experiment: str, filename: str) -> pd.DataFrame:
    path = Path(results_dir) / experiment / filename
    if not path.is_file():
        return pd.DataFrame()
    try:
        return pd.read_csv(path)
    except Exception as e:
        logging.error(f"Error reading {path}: {e}")
        return pd.DataFrame()


@st.cache_data(ttl=60, show_spinner=False)
def load_document(path: str) -> dict:
    path = Path(path)
    if not path.is_file():
        return {}
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except Exception as e:
        logging.error(f"Error reading {path}: {e}")
        return {}


def experiment_picker(results_dir: Path, required: str):
    """Selectbox over experiments that produced ``required``; None when there are none."""
    names = [n for n in list_experiments(str(results_dir)) if (results_dir / n / required).is_file()]
    if not names:
        st.info(f"No experiment in {results_dir} has {required} yet. Run the matching scbl command first.")
        return None
    return st.selectbox("Experiment", names)
