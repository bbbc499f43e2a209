"""
App name: Takens Reservoir Toolkit (takres)
Description: Atomic (write-then-rename) writers for CSV and JSON result files.
"""

import csv
import io
import json
import math
import os
import tempfile
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from utils.exceptions import ResultIOError


def format_cell(value: Any) -> str:
    """Render one CSV cell; floats use the shortest round-trip repr."""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return "nan"
        return repr(value)
    if value is None:
        return ""
    return str(value)


def write_text_atomic(path: Path | str, text: str) -> Path:
    """
    Func: Write text to `path` via a temp file in the same directory, then rename.
    Return: the final path
    """
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
        try:
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
                f.write(text)
            os.replace(tmp_name, path)
        except BaseException:
            if os.path.exists(tmp_name):
                os.unlink(tmp_name)
            raise
    except OSError as e:
        raise ResultIOError(f"cannot write {path}: {e}") from e
    return path


def write_csv_atomic(path: Path | str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    """Write a CSV table with a header row atomically."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_cell(cell) for cell in row])
    return write_text_atomic(path, buffer.getvalue())


def json_safe(obj: Any) -> Any:
    """
    Func: Plain-Python copy of `obj` that strict JSON accepts.
    Numpy scalars and arrays become Python values; NaN and infinities become None.
    """
    if isinstance(obj, dict):
        return {str(k): json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [json_safe(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [json_safe(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        return value if math.isfinite(value) else None
    return obj


def write_json_atomic(path: Path | str, obj: Any) -> Path:
    """Write strict JSON (sorted keys, 2-space indent, NaN as null) atomically."""
    text = json.dumps(json_safe(obj), indent=2, sort_keys=True, allow_nan=False, default=_json_default) + "\n"
    return write_text_atomic(path, text)


def _json_default(obj: Any):
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"Object of type {type(obj).__name__} is not JSON serializable")
