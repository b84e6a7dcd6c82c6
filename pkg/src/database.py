import os
import pandas as pd
import logging
from datetime import datetime, timezone
from pathlib import Path
from sqlalchemy import create_engine, text
from typing import Optional
from dotenv import load_dotenv

# Load environment variables
load_dotenv()

CACHE_FILE = "cache.sqlite3"

_SCHEMA = """
CREATE TABLE IF NOT EXISTS cache_records (
    key TEXT PRIMARY KEY,
    operation TEXT NOT NULL,
    payload TEXT NOT NULL,
    created_at TEXT NOT NULL
)
"""


def get_cache_dir(cache_dir: Optional[str] = None) -> Path:
    """Cache directory from the argument, else SCBL_CACHE, else .scbl_cache."""
    return Path(cache_dir or os.getenv("SCBL_CACHE", ".scbl_cache"))


def get_db_url(cache_dir: Optional[str] = None) -> str:
    return f"sqlite:///{(get_cache_dir(cache_dir) / CACHE_FILE).resolve()}"


_engines: dict = {}


def get_engine(cache_dir: Optional[str] = None):
    """Returns a singleton SQLAlchemy engine per cache directory."""
    directory = get_cache_dir(cache_dir)
    key = str(directory.resolve())
    if key not in _engines:
        directory.mkdir(parents=True, exist_ok=True)
        engine = create_engine(get_db_url(cache_dir), pool_pre_ping=True)
        with engine.begin() as conn:
            conn.execute(text(_SCHEMA))
        _engines[key] = engine
    return _engines[key]


def dispose_engines() -> None:
    for engine in _engines.values():
        engine.dispose()
    _engines.clear()


def run_query(query: str, params: Optional[dict] = None, cache_dir: Optional[str] = None) -> pd.DataFrame:
    """
    Executes a SQL query against the cache and returns the result as a pandas DataFrame.
    """
    engine = get_engine(cache_dir)
    try:
        with engine.connect() as conn:
            if params:
                result = pd.read_sql(text(query), conn, params=params)
            else:
                result = pd.read_sql(text(query), conn)
            return result
    except Exception as e:
        logging.error(f"Error executing query: {e}")
        return pd.DataFrame()


def store_record(key: str, operation: str, payload: str, cache_dir: Optional[str] = None) -> bool:
    """Append-only insert in one transaction; an existing key is left untouched.

    Returns True when a new record was written.
    """
    engine = get_engine(cache_dir)
    query = """
    INSERT OR IGNORE INTO cache_records (key, operation, payload, created_at)
    VALUES (:key, :operation, :payload, :created_at)
    """
    with engine.begin() as conn:
        result = conn.execute(
            text(query),
            {
                "key": key,
                "operation": operation,
                "payload": payload,
                "created_at": datetime.now(timezone.utc).isoformat(),
            },
        )
    written = result.rowcount == 1
    logging.getLogger(__name__).debug("cache %s for %s (%s)", "store" if written else "keep", operation, key[:12])
    return written


def fetch_record(key: str, cache_dir: Optional[str] = None) -> Optional[str]:
    """Payload text for ``key``, or None on a miss."""
    engine = get_engine(cache_dir)
    try:
        with engine.connect() as conn:
            row = conn.execute(text("SELECT payload FROM cache_records WHERE key = :key"), {"key": key}).fetchone()
            return row[0] if row else None
    except Exception as e:
        logging.error("Error reading cache record: %s", str(e))
        return None


def list_records(operation: Optional[str] = None, cache_dir: Optional[str] = None) -> pd.DataFrame:
    """
    All cache records (without payloads) ordered by creation time.
    """
    query = """
    SELECT key, operation, length(payload) AS payload_bytes, created_at
    FROM cache_records
    """
    if operation:
        query += " WHERE operation = :operation"
    query += " ORDER BY created_at ASC, key ASC"
    return run_query(query, params={"operation": operation} if operation else None, cache_dir=cache_dir)
