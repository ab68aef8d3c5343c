"""Plain-text readers and writers for matrices, edge lists, and run outputs.

All formats are headerless CSV unless noted.  Writers format floats with
repr, which round-trips exactly, so writing and re-reading a matrix is
lossless and repeated runs produce byte-identical files.
"""

import csv
import json

import numpy as np

from .simmat import DenseSimilarity


class ParseError(ValueError):
    """Raised for malformed input files; the message names the line."""


def _fail(path, line_num, why):
    raise ParseError(f"{path}, line {line_num}: {why}")


def _rows(path):
    with open(path, newline="") as fh:
        for line_num, row in enumerate(csv.reader(fh), start=1):
            if row and any(cell.strip() for cell in row):
                yield line_num, [cell.strip() for cell in row]


def _parse_float(path, line_num, cell):
    try:
        return float(cell)
    except ValueError:
        _fail(path, line_num, f"expected a number, got {cell!r}")


def _parse_int(path, line_num, cell):
    try:
        return int(cell)
    except ValueError:
        _fail(path, line_num, f"expected an integer, got {cell!r}")


def read_dense_matrix(path):
    """Read a headerless CSV of floats into an array, one row per line."""
    data = []
    width = None
    for line_num, row in _rows(path):
        if width is None:
            width = len(row)
        elif len(row) != width:
            _fail(path, line_num, f"expected {width} columns, got {len(row)}")
        data.append([_parse_float(path, line_num, cell) for cell in row])
    if not data:
        raise ParseError(f"{path}: file is empty")
    return np.array(data)


def write_dense_matrix(path, values):
    arr = np.asarray(values, dtype=float)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in arr:
            writer.writerow([repr(float(x)) for x in row])


def write_int_matrix(path, values):
    arr = np.asarray(values)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in arr:
            writer.writerow([str(int(x)) for x in row])


def read_sparse_similarity(path, n=None):
    """Read an edge list ``i,j,value`` into a DenseSimilarity.

    Listed pairs are observed (mirrored to both triangles); everything else
    off the diagonal is missing.  The diagonal defaults to observed 1.0
    unless stated in the file.  ``n`` defaults to one past the largest index.
    """
    entries = []
    max_idx = -1
    for line_num, row in _rows(path):
        if len(row) != 3:
            _fail(path, line_num, f"expected 'i,j,value', got {len(row)} fields")
        i = _parse_int(path, line_num, row[0])
        j = _parse_int(path, line_num, row[1])
        value = _parse_float(path, line_num, row[2])
        if i < 0 or j < 0:
            _fail(path, line_num, f"negative index in pair ({i}, {j})")
        entries.append((line_num, i, j, value))
        max_idx = max(max_idx, i, j)
    if not entries:
        raise ParseError(f"{path}: file is empty")
    if n is None:
        n = max_idx + 1
    elif max_idx >= n:
        line_num = next(ln for ln, i, j, _ in entries if max(i, j) >= n)
        _fail(path, line_num, f"index exceeds declared size {n}")
    values = np.zeros((n, n))
    mask = np.zeros((n, n))
    for line_num, i, j, value in entries:
        if mask[i, j] and values[i, j] != value:
            _fail(path, line_num, f"conflicting duplicate for pair ({i}, {j})")
        values[i, j] = values[j, i] = value
        mask[i, j] = mask[j, i] = 1.0
    unset_diag = np.diag(mask) == 0
    values[np.diag_indices(n)] = np.where(unset_diag, 1.0, np.diag(values))
    mask[np.diag_indices(n)] = 1.0
    return DenseSimilarity(values=values, mask=mask)


def read_triplets(path):
    """Read odd-one-out judgments ``a,b,odd`` as integer triples."""
    judgments = []
    for line_num, row in _rows(path):
        if len(row) != 3:
            _fail(path, line_num, f"expected 'a,b,odd_one_out', got {len(row)} fields")
        judgments.append(tuple(_parse_int(path, line_num, cell) for cell in row))
    if not judgments:
        raise ParseError(f"{path}: file is empty")
    return judgments


def read_associations(path):
    """Read directed ``cue,response,count`` rows as (str, str, int) triples."""
    edges = []
    for line_num, row in _rows(path):
        if len(row) != 3:
            _fail(path, line_num, f"expected 'cue,response,count', got {len(row)} fields")
        count = _parse_int(path, line_num, row[2])
        edges.append((row[0], row[1], count))
    if not edges:
        raise ParseError(f"{path}: file is empty")
    return edges


def read_pairs(path):
    """Read an ``i,j`` pair list (one pair per line)."""
    pairs = []
    for line_num, row in _rows(path):
        if len(row) != 2:
            _fail(path, line_num, f"expected 'i,j', got {len(row)} fields")
        pairs.append((_parse_int(path, line_num, row[0]), _parse_int(path, line_num, row[1])))
    if not pairs:
        raise ParseError(f"{path}: file is empty")
    return pairs


def read_targets(path, n):
    """Read ``item_id,value`` rows covering each of 0..n-1 exactly once."""
    values = np.full(n, np.nan)
    for line_num, row in _rows(path):
        if len(row) != 2:
            _fail(path, line_num, f"expected 'item_id,value', got {len(row)} fields")
        item = _parse_int(path, line_num, row[0])
        if not 0 <= item < n:
            _fail(path, line_num, f"item {item} outside 0..{n - 1}")
        if not np.isnan(values[item]):
            _fail(path, line_num, f"duplicate target for item {item}")
        values[item] = _parse_float(path, line_num, row[1])
    if np.isnan(values).any():
        missing = int(np.flatnonzero(np.isnan(values))[0])
        raise ParseError(f"{path}: no target for item {missing}")
    return values


def write_labels(path, labels):
    with open(path, "w") as fh:
        for label in labels:
            fh.write(f"{label}\n")


def read_labels(path):
    with open(path) as fh:
        return [line.rstrip("\n") for line in fh if line.strip()]


def write_table(path, header, rows):
    """Write a CSV with a header row; floats via repr, everything else via str."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(
                [repr(float(x)) if isinstance(x, float) else str(x) for x in row]
            )


def write_json(path, payload):
    """Stable JSON: sorted keys, no timestamps, trailing newline."""
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)
