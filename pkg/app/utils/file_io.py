"""
@fileoverview
This module reads and writes the result files of the command-line harness:
binary PGM images, CSV tables and JSON summaries. All writers are
deterministic so re-runs with the same configuration produce identical bytes.

PGM scaling: a float image is mapped linearly from value_range = (lo, hi) to
[0, maxval] and rounded, with maxval 255 for 8-bit and 65535 for 16-bit
files. Readers apply the inverse map.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray
from pydantic import BaseModel

from app.models.schemas import DataFileError, ShapeMismatchError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
FLOAT_FORMAT = "%.17g"


def _max_value(bits: int) -> int:
    if bits == 8:
        return 255
    if bits == 16:
        return 65535
    raise DataFileError(f"unsupported PGM bit depth {bits}")


def write_pgm(path: PathLike, image: ArrayLike, value_range: Optional[Tuple[float, float]] = None,
              bits: int = 8) -> Tuple[float, float]:
    """
    Write a 2-D float image as binary PGM (P5). Returns the value range used,
    which defaults to the image's own (min, max).
    """
    image = np.asarray(image, dtype=float)
    if image.ndim != 2:
        raise ShapeMismatchError("PGM images must be two-dimensional", 2, image.ndim)
    max_value = _max_value(bits)
    lo, hi = value_range if value_range is not None else (float(image.min()), float(image.max()))
    if hi > lo:
        scaled = np.rint(np.clip((image - lo) / (hi - lo), 0.0, 1.0) * max_value)
    else:
        scaled = np.zeros_like(image)
    dtype = np.dtype("u1") if bits == 8 else np.dtype(">u2")
    header = f"P5\n{image.shape[1]} {image.shape[0]}\n{max_value}\n".encode("ascii")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(header + scaled.astype(dtype).tobytes())
    logger.debug(f"Writing PGM {path} ({bits}-bit, range [{lo:.6g}, {hi:.6g}])")
    return lo, hi


def read_pgm(path: PathLike, value_range: Optional[Tuple[float, float]] = None) -> NDArray:
    """
    Read a binary PGM (P5). Without value_range the raw grey levels are
    returned as floats; with it, grey levels are mapped back to [lo, hi].
    """
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise DataFileError(f"cannot read PGM: {e}", str(path)) from e

    tokens: List[bytes] = []
    position = 0
    while len(tokens) < 4:
        while position < len(data) and data[position:position + 1].isspace():
            position += 1
        if position >= len(data):
            raise DataFileError("truncated PGM header", str(path))
        if data[position:position + 1] == b"#":
            while position < len(data) and data[position:position + 1] not in (b"\n", b"\r"):
                position += 1
            continue
        start = position
        while position < len(data) and not data[position:position + 1].isspace():
            position += 1
        tokens.append(data[start:position])
    position += 1  # single whitespace after maxval

    if tokens[0] != b"P5":
        raise DataFileError(f"not a binary PGM (magic {tokens[0]!r})", str(path))
    try:
        width, height, max_value = (int(token) for token in tokens[1:])
    except ValueError as e:
        raise DataFileError("malformed PGM header", str(path)) from e
    if not 0 < max_value < 65536 or width <= 0 or height <= 0:
        raise DataFileError("invalid PGM dimensions or maxval", str(path))

    dtype = np.dtype("u1") if max_value < 256 else np.dtype(">u2")
    expected = width * height * dtype.itemsize
    payload = data[position:position + expected]
    if len(payload) != expected:
        raise DataFileError(f"PGM payload has {len(payload)} bytes, expected {expected}", str(path))
    image = np.frombuffer(payload, dtype=dtype).reshape(height, width).astype(float)
    if value_range is None:
        return image
    lo, hi = value_range
    return lo + image / max_value * (hi - lo)


def write_csv(path: PathLike, columns: Dict[str, ArrayLike]) -> None:
    """Write equal-length columns with a header row and 17 significant digits."""
    names = list(columns)
    arrays = [np.asarray(columns[name], dtype=float).ravel() for name in names]
    lengths = {array.size for array in arrays}
    if len(lengths) > 1:
        raise ShapeMismatchError("CSV columns differ in length", "equal lengths", sorted(lengths))
    table = np.column_stack(arrays) if arrays else np.empty((0, 0))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, table, fmt=FLOAT_FORMAT, delimiter=",", header=",".join(names), comments="")
    logger.debug(f"Writing CSV {path} ({table.shape[0]} rows)")


def write_table(path: PathLike, names: Sequence[str], rows: Sequence[Sequence[Any]]) -> None:
    """Write a headed CSV whose rows mix labels and numbers; None becomes an empty field."""
    def field(value: Any) -> str:
        if value is None:
            return ""
        if isinstance(value, (float, np.floating)):
            return FLOAT_FORMAT % value
        return str(value)

    for row in rows:
        if len(row) != len(names):
            raise ShapeMismatchError("table row against header", len(names), len(row))
    lines = [",".join(names)] + [",".join(field(value) for value in row) for row in rows]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")


def write_matrix_csv(path: PathLike, matrix: ArrayLike) -> None:
    """Write a matrix with a c0,c1,... header row."""
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2:
        raise ShapeMismatchError("matrix CSV expects a 2-D array", 2, matrix.ndim)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = ",".join(f"c{j}" for j in range(matrix.shape[1]))
    np.savetxt(path, matrix, fmt=FLOAT_FORMAT, delimiter=",", header=header, comments="")


def read_csv(path: PathLike) -> Tuple[List[str], NDArray]:
    """Read a headed numeric CSV into (column names, rows x columns array)."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise DataFileError(f"cannot read CSV: {e}", str(path)) from e
    lines = [line for line in text.splitlines() if line.strip()]
    if len(lines) < 2:
        raise DataFileError("CSV has no data rows", str(path))
    header = [name.strip() for name in lines[0].split(",")]
    try:
        data = np.loadtxt(lines[1:], delimiter=",", ndmin=2)
    except ValueError as e:
        raise DataFileError(f"malformed CSV: {e}", str(path)) from e
    if data.shape[1] != len(header):
        raise DataFileError(f"CSV rows have {data.shape[1]} fields, header has {len(header)}", str(path))
    return header, data


def read_matrix_csv(path: PathLike) -> NDArray:
    return read_csv(path)[1]


def write_json(path: PathLike, payload: Union[BaseModel, Dict[str, Any], Sequence[Any]]) -> None:
    """Write a pydantic model or plain structure as indented JSON with sorted keys."""
    if isinstance(payload, BaseModel):
        payload = payload.model_dump(mode="json")
    elif isinstance(payload, (list, tuple)):
        payload = [item.model_dump(mode="json") if isinstance(item, BaseModel) else item for item in payload]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_finite_json(payload), indent=2, sort_keys=True) + "\n")
    logger.debug(f"Writing JSON {path}")


def _finite_json(value: Any) -> Any:
    """Replace non-finite floats with None so the output stays valid JSON."""
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, tuple):
        value = list(value)
    if isinstance(value, dict):
        return {key: _finite_json(item) for key, item in value.items()}
    if isinstance(value, list):
        return [_finite_json(item) for item in value]
    if isinstance(value, float) and not np.isfinite(value):
        return None
    return value
