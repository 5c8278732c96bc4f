"""Binary parameter tables and flat ``key = value`` config files."""

import struct
from pathlib import Path

import numpy as np

MAGIC = b"DENCTBL\0"
VERSION = 1
HEADER = struct.Struct("<8sIQQ")


def write_table(path, table) -> None:
    """Header (magic, version, rows, cols) then row-major little-endian float64."""
    arr = np.ascontiguousarray(table, dtype="<f8")
    if arr.ndim != 2:
        raise ValueError("table must be 2-d")
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, VERSION, arr.shape[0], arr.shape[1]))
        fh.write(arr.tobytes())


def read_table(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, version, rows, cols = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    body = data[HEADER.size:]
    if len(body) != rows * cols * 8:
        raise ValueError(f"{path}: expected {rows * cols * 8} payload bytes, found {len(body)}")
    return np.frombuffer(body, dtype="<f8").reshape(rows, cols).copy()


def write_table_csv(path, table) -> None:
    np.savetxt(path, np.asarray(table), delimiter=",", fmt="%.17g")


def parse_config(text: str) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment. Values stay strings."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ValueError(f"config line {lineno}: empty key")
        out[key] = value
    return out


def format_config(values: dict) -> str:
    return "".join(f"{k} = {v}\n" for k, v in values.items())
