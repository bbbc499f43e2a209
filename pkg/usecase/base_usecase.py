"""
App name: Takens Reservoir Toolkit (takres)
Description: Base usecase class providing shared result-file operations and the
             response builder inherited by the orchestration usecases.
"""

from pathlib import Path
from typing import Any, Iterable, Optional, Sequence

from utils.constants import Constants
from utils.files import write_csv_atomic, write_json_atomic
from utils.logger import logger

col = Constants.Columns


class UsecaseBase:
    """
    Base class for all usecase classes.

    Provides common functionality for:
    - Atomic CSV / JSON result writing with logging
    - JSON response formatting
    """

    def __init__(self, out_dir: Path | str | None = None):
        self._out_dir = Path(out_dir) if out_dir is not None else None

    def _write_csv(self, directory: Path, name: str, header: Sequence[str],
                   rows: Iterable[Sequence[Any]]) -> Path:
        """
        Func: Write a result table atomically
        Args:
            * directory: run output directory
            * name: file name (e.g. "results.csv")
            * header: column names
            * rows: table rows
        Return: the written path
        """
        path = write_csv_atomic(directory / name, header, rows)
        logger.debug(f"CSV WRITE: {path}")
        return path

    def _write_json(self, directory: Path, name: str, obj: Any) -> Path:
        """
        Func: Write a JSON document atomically (sorted keys)
        Args:
            * directory: run output directory
            * name: file name (e.g. "summary.json")
            * obj: JSON-serializable object (numpy scalars allowed)
        Return: the written path
        """
        path = write_json_atomic(directory / name, obj)
        logger.debug(f"JSON WRITE: {path}")
        return path

    def _build_json_response(self, status_code: int, message: str, data: Optional[Any] = None) -> dict:
        """
        Func: Create a response dict
        Args:
            * status_code: HTTP status code
            * message: response message
            * data: result payload
        Example:
        {
            "status_code": 200,
            "context": {
                "message": "Success",
                "data": {...}
            }
        }
        """
        result: dict = {
            "status_code": status_code,
            "context": {
                "message": message
            }
        }

        if data is not None:
            result["context"]["data"] = data

        return result
