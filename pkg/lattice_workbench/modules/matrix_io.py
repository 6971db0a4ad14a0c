"""
File formats: matrix JSON objects and JSON-lines datasets.

Matrices are serialized row-major as {"n": int, "rows": [[...], ...]}. Integer matrices carry
base-10 strings so arbitrary precision survives the round trip. A dataset file starts with a
header record followed by one matrix object per line.
"""

import json
import logging
import os

import numpy as np

from ..exceptions import DataFormatError
from .integer_matrix import UnimodularMatrix, as_int_rows

logger = logging.getLogger(__name__)

GENERATOR_NAME = "expm-uniform01"


def float_matrix_to_json(matrix):
    matrix = np.asarray(matrix, dtype=np.float64)
    return {"n": int(matrix.shape[0]), "rows": [[float(v) for v in row] for row in matrix]}


def int_matrix_to_json(matrix):
    rows = matrix.rows if isinstance(matrix, UnimodularMatrix) else as_int_rows(matrix)
    return {"n": len(rows), "rows": [[str(v) for v in row] for row in rows]}


def _check_shape(obj, line_number):
    if not isinstance(obj, dict) or "rows" not in obj:
        raise DataFormatError("expected an object with a 'rows' field", line_number)
    rows = obj["rows"]
    n = obj.get("n", len(rows))
    if not isinstance(rows, list) or len(rows) != n or any(not isinstance(r, list) or len(r) != n for r in rows):
        raise DataFormatError(f"'rows' must be a {n}x{n} array", line_number)
    return rows


def float_matrix_from_json(obj, line_number=None):
    rows = _check_shape(obj, line_number)
    try:
        matrix = np.array([[float(v) for v in row] for row in rows], dtype=np.float64)
    except (TypeError, ValueError) as e:
        raise DataFormatError(f"non-numeric matrix entry ({e})", line_number) from e
    if not np.all(np.isfinite(matrix)):
        raise DataFormatError("matrix entries must be finite", line_number)
    return matrix


def int_matrix_from_json(obj, line_number=None):
    rows = _check_shape(obj, line_number)
    try:
        return as_int_rows(rows)
    except (TypeError, ValueError) as e:
        raise DataFormatError(f"non-integer matrix entry ({e})", line_number) from e


def dataset_header(n, count, seed):
    return {"type": "header", "n": n, "count": count, "seed": seed, "generator": GENERATOR_NAME}


def _is_header(obj):
    return isinstance(obj, dict) and (obj.get("type") == "header" or "generator" in obj)


def write_json_lines(path, records):
    """Write records one JSON object per line, creating the parent directory if needed"""
    directory = os.path.dirname(os.path.abspath(path))
    if not os.path.exists(directory):
        os.makedirs(directory)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for record in records:
            f.write(json.dumps(record) + "\n")


def read_json_lines(path):
    """
    Parse a JSON-lines file.

    Returns:
        list: (line_number, object) pairs, blank lines skipped

    Raises:
        DataFormatError: on the first malformed line, naming its line number
    """
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                records.append((line_number, json.loads(line)))
            except json.JSONDecodeError as e:
                raise DataFormatError(f"invalid JSON ({e.msg})", line_number) from e
    return records


def write_dataset(path, bases, seed):
    """
    Save real bases as a dataset file.

    Args:
        path (str): output file
        bases (list): n x n float arrays, all of one dimension
        seed (int): seed recorded in the header
    """
    n = int(bases[0].shape[0]) if bases else 0
    records = [dataset_header(n, len(bases), seed)]
    records.extend(float_matrix_to_json(b) for b in bases)
    write_json_lines(path, records)
    logger.info(f"Wrote {len(bases)} matrices of dimension {n} to {path}")


def read_dataset(path):
    """
    Load a dataset file of real matrices.

    Returns:
        tuple: (header dict or None, list of float arrays)
    """
    header = None
    bases = []
    for line_number, obj in read_json_lines(path):
        if _is_header(obj):
            header = obj
            continue
        bases.append(float_matrix_from_json(obj, line_number))
    if header is not None and header.get("count") not in (None, len(bases)):
        logger.warning(f"Header of {path} announces {header['count']} matrices, found {len(bases)}")
    dims = {b.shape[0] for b in bases}
    if len(dims) > 1:
        raise DataFormatError(f"mixed dimensions {sorted(dims)} in {path}")
    return header, bases


def read_integer_matrices(path):
    """Load integer matrices (one JSON object per line), returning (line_number, rows) pairs"""
    return [
        (line_number, int_matrix_from_json(obj, line_number))
        for line_number, obj in read_json_lines(path)
        if not _is_header(obj)
    ]


