import hashlib
import json
import math
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np

from libs.maic.errors import MaicError
from libs.maic.hull_check import HullStatus
from libs.metrics.shared_metrics import metrics
from libs.metrics.run_metrics import LogLevel

metrics.init()

EXIT_INTERIOR = 0
EXIT_ERROR = 1
EXIT_INFEASIBLE = 2
EXIT_BOUNDARY = 3

RUN_INFO_KEY = "run_info"
HASH_KEY = "determinism_hash"

_STATUS_EXIT_CODES = {
    HullStatus.INTERIOR: EXIT_INTERIOR,
    HullStatus.BOUNDARY: EXIT_BOUNDARY,
    HullStatus.INFEASIBLE: EXIT_INFEASIBLE,
}


def exit_code_for(status: Optional[HullStatus], failed: bool = False) -> int:
    """
    Process exit code for a run.

    Args:
        status: hull status, None if the check never ran
        failed: whether loading or the hull check raised

    Returns:
        int: 1 on failure, else 0 Interior / 3 Boundary / 2 Infeasible
    """
    if failed or status is None:
        return EXIT_ERROR
    return _STATUS_EXIT_CODES[status]


def to_jsonable(value: Any) -> Any:
    """Convert numpy values, enums and tuples into plain JSON types; non-finite floats become None."""
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_jsonable(value.tolist())
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if math.isfinite(value) else None
    if isinstance(value, Path):
        return str(value)
    return value


def canonical_json(body: Dict[str, Any], indent: Optional[int] = 2) -> str:
    """Stable JSON: sorted keys, no NaN, shortest round-trip float repr."""
    return json.dumps(to_jsonable(body), sort_keys=True, indent=indent,
                      allow_nan=False, ensure_ascii=False)


def determinism_hash(report: Dict[str, Any]) -> str:
    """SHA-256 of the compact canonical report with run_info and the hash itself removed."""
    body = {k: v for k, v in report.items() if k not in (RUN_INFO_KEY, HASH_KEY)}
    return hashlib.sha256(canonical_json(body, indent=None).encode("utf-8")).hexdigest()


def file_digest(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def create_error_section(stage: str, error: Exception) -> Dict[str, Any]:
    """
    Describe a failed stage for embedding in the report.

    Args:
        stage: pipeline stage name
        error: the exception raised by the stage

    Returns:
        dict: stage, error type, message and (for library errors) context
    """
    section = {
        "stage": stage,
        "error_type": type(error).__name__,
        "message": str(error),
    }
    if isinstance(error, MaicError):
        section["context"] = to_jsonable(error.context())
    metrics.log_event("stage_failed", section, LogLevel.ERROR)
    return section
