"""
GM Solver - Export Service
JSON reports and CSV fields. Reports carry no timestamps so repeated runs
are byte-identical.
"""

import json
import logging
import os
from typing import Any, Dict

import numpy as np

from gmsolver.services.grid import Field

logger = logging.getLogger(__name__)

REPORT_FILE = 'report.json'


def _to_builtin(value: Any) -> Any:
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Field):
        return value.values.tolist()
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def dumps_report(report: Dict[str, Any]) -> str:
    return json.dumps(report, indent=2, sort_keys=True, default=_to_builtin) + '\n'


def write_report(out_dir: str, report: Dict[str, Any], filename: str = REPORT_FILE) -> str:
    """Write report as sorted, indented JSON; returns the path"""
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, filename)
    with open(path, 'w', encoding='utf-8') as f:
        f.write(dumps_report(report))
    logger.info(f"Report written: {path}")
    return path


def write_fields(out_dir: str, **fields: Field) -> Dict[str, str]:
    """One CSV per field, named <key>.csv"""
    os.makedirs(out_dir, exist_ok=True)
    paths = {}
    for name, fld in fields.items():
        path = os.path.join(out_dir, f"{name}.csv")
        fld.to_csv(path, name)
        paths[name] = path
    logger.debug(f"Fields written: {', '.join(sorted(paths))}")
    return paths
