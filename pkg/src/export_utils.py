"""
SCKD-Discovery Export Utilities
JSON, JSONL and CSV writers for result bundles, sweep tables and embeddings.
Desk-scale Novel Class Discovery
"""

import json
import math
import os
from typing import Any, Dict, Iterable, List, Optional

import pandas as pd

# Enough digits for float64 values to survive a CSV round trip unchanged.
FLOAT_FORMAT = "%.17g"


def _clean(value: Any) -> Any:
    """NaN/inf become null so every JSON file stays standard."""
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if hasattr(value, "item") and not isinstance(value, (str, bytes)):
        return _clean(value.item())
    return value


def dumps(data: Any) -> str:
    """Canonical JSON text: sorted keys, fixed indentation, trailing newline."""
    return json.dumps(_clean(data), sort_keys=True, indent=2) + "\n"


class ExportService:
    """
    Writes result artefacts under one output directory.
    All paths passed to the methods are relative to ``output_dir``.
    """

    def __init__(self, output_dir: str = "results"):
        """
        Initialize export service.

        Args:
            output_dir: Root directory for every written file.
        """
        self.output_dir = output_dir
        os.makedirs(output_dir, exist_ok=True)

    def path(self, relative: str) -> str:
        full = os.path.join(self.output_dir, relative)
        os.makedirs(os.path.dirname(full) or ".", exist_ok=True)
        return full

    def write_json(self, relative: str, data: Any) -> str:
        """Write ``data`` as canonical JSON; identical data gives identical bytes."""
        filepath = self.path(relative)
        with open(filepath, "w", encoding="utf-8") as f:
            f.write(dumps(data))
        return filepath

    def read_json(self, relative: str) -> Any:
        with open(os.path.join(self.output_dir, relative), "r", encoding="utf-8") as f:
            return json.load(f)

    def write_jsonl(self, relative: str, records: Iterable[Dict[str, Any]]) -> str:
        """One JSON object per line (training logs)."""
        filepath = self.path(relative)
        with open(filepath, "w", encoding="utf-8") as f:
            for record in records:
                f.write(json.dumps(_clean(record), sort_keys=True) + "\n")
        return filepath

    def append_csv_rows(self, relative: str, rows: List[Dict[str, Any]]) -> str:
        """Append rows to a CSV, writing the header only when the file is new."""
        filepath = self.path(relative)
        frame = pd.DataFrame(rows)
        exists = os.path.exists(filepath) and os.path.getsize(filepath) > 0
        frame.to_csv(filepath, mode="a", header=not exists, index=False, float_format=FLOAT_FORMAT)
        return filepath

    def write_table(self, stem: str, frame: pd.DataFrame) -> Dict[str, str]:
        """
        Write a table as ``<stem>.csv`` and ``<stem>.json`` (list of row objects).

        Returns:
            Paths keyed by format.
        """
        csv_path = self.path(f"{stem}.csv")
        frame.to_csv(csv_path, index=False, float_format=FLOAT_FORMAT)
        json_path = self.write_json(f"{stem}.json", frame.to_dict(orient="records"))
        return {"csv": csv_path, "json": json_path}

    def write_frame_csv(self, relative: str, frame: pd.DataFrame) -> str:
        filepath = self.path(relative)
        frame.to_csv(filepath, index=False, float_format=FLOAT_FORMAT)
        return filepath


# Singleton instance
_service_instance: Optional[ExportService] = None


def get_export_service(output_dir: str = "results") -> ExportService:
    """Get or create the export service for ``output_dir``."""
    global _service_instance

    if _service_instance is None or _service_instance.output_dir != output_dir:
        _service_instance = ExportService(output_dir)

    return _service_instance
