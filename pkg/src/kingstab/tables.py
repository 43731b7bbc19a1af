"""CSV output shared by every exporter: one timestamp comment line, then data."""

import time

import numpy as np


def write_table(path, columns, data, stamp=True):
    """Write ``data`` (2D array-like) under a header row of ``columns``.

    Floats are written with 17 significant digits so output round-trips and
    identical runs produce identical bytes apart from the timestamp line.
    """
    data = np.asarray(data, dtype=float)
    with open(path, "w") as fh:
        if stamp:
            fh.write(f"# generated {time.strftime('%Y-%m-%dT%H:%M:%S')}\n")
        fh.write(",".join(columns) + "\n")
        for row in data:
            fh.write(",".join(f"{x:.17g}" for x in row) + "\n")


def read_table(path):
    """Inverse of ``write_table``: returns (columns, array)."""
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    columns = lines[0].strip().split(",")
    data = np.array([[float(x) for x in ln.strip().split(",")] for ln in lines[1:]])
    return columns, data.reshape(-1, len(columns))
