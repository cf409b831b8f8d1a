"""Plain-text report and CSV emission.

Reports are flat ``name = value`` blocks, floats at 6 significant
digits. CSVs are row-major with one header row.
"""

from __future__ import annotations

import numpy as np


def format_value(value) -> str:
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.6g}"
    return str(value)


def write_kv_report(path, values: dict) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        for name, value in values.items():
            fh.write(f"{name} = {format_value(value)}\n")


def read_kv_report(path) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path, "r", encoding="ascii") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            name, _, value = line.partition("=")
            out[name.strip()] = value.strip()
    return out


def write_csv(path, header: list[str], rows: np.ndarray) -> None:
    rows = np.atleast_2d(np.asarray(rows))
    if rows.shape[1] != len(header):
        raise ValueError("header length must match column count")
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(format_value(v) for v in row) + "\n")


def read_config_file(path) -> dict[str, str]:
    """Flat key=value text; '#' starts a comment line."""
    return read_kv_report(path)
