"""
Report serialization for the CEEI mechanisms toolkit.

JSON reports write every float with 17 significant digits and sorted keys so identical runs
produce byte-identical files; curves go to CSV through pandas.
"""

import dataclasses
import enum
import json
import logging
import math
from pathlib import Path
from typing import Any, Union

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)


class ReportError(Exception):
    """Custom exception for values that cannot be written to a report."""
    pass


def to_jsonable(obj: Any) -> Any:
    """Convert dataclasses, enums and numpy values into plain JSON types."""
    if isinstance(obj, enum.Enum):
        return obj.value
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        if hasattr(obj, "to_dict"):
            return to_jsonable(obj.to_dict())
        return {f.name: to_jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [to_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, pd.DataFrame):
        return to_jsonable(obj.to_dict(orient="records"))
    if obj is None or isinstance(obj, str):
        return obj
    if isinstance(obj, Path):
        return str(obj)
    raise ReportError(f"cannot serialize value of type {type(obj).__name__}")


def _format_float(value: float) -> str:
    if not math.isfinite(value):
        return "null"
    if value == int(value) and abs(value) < 1e16:
        return f"{value:.1f}"
    return format(value, ".17g")


def _render(obj: Any, indent: int, level: int) -> str:
    pad = " " * (indent * (level + 1))
    close = " " * (indent * level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(k)}: {_render(obj[k], indent, level + 1)}" for k in sorted(obj)]
        return "{\n" + ",\n".join(items) + "\n" + close + "}"
    if isinstance(obj, list):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list)) for v in obj):
            return "[" + ", ".join(_render(v, indent, level + 1) for v in obj) + "]"
        items = [pad + _render(v, indent, level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + close + "]"
    if isinstance(obj, bool) or obj is None or isinstance(obj, (int, str)):
        return json.dumps(obj)
    if isinstance(obj, float):
        return _format_float(obj)
    raise ReportError(f"unexpected value in report: {obj!r}")


def render_json(obj: Any, indent: int = 2) -> str:
    """Render a report as deterministic JSON text (floats at 17 significant digits, NaN/inf as null)."""
    return _render(to_jsonable(obj), indent, 0) + "\n"


def write_json_report(obj: Any, path: Union[str, Path]) -> Path:
    """Write a JSON report, creating the parent directory."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(render_json(obj), encoding="utf-8", newline="\n")
    logger.info(f"Wrote report {path}")
    return path


def write_curve_csv(frame: pd.DataFrame, path: Union[str, Path]) -> Path:
    """Write a curve table as UTF-8 CSV with a header row and LF line endings."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n", encoding="utf-8")
    logger.info(f"Wrote {len(frame)} rows to {path}")
    return path
