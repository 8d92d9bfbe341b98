"""Byte-stable serialization for reports and tables.

Reruns with the same seed must produce identical files, so floats are
formatted through a single code path (shortest round-trip %.6g for
reports, %.10g where training curves need headroom) and JSON keys are
emitted sorted with a fixed separator style.
"""

from __future__ import annotations

import json
from typing import Any

FLOAT_FMT = "%.6g"


def _convert(value: Any) -> Any:
    if isinstance(value, bool):
        return value
    if isinstance(value, float):
        # Round through text so the stored digits are the canonical ones;
        # the C json encoder ignores float-subclass __repr__ tricks.
        return float(FLOAT_FMT % value)
    if isinstance(value, dict):
        return {k: _convert(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_convert(v) for v in value]
    return value


def dumps_json(payload: Any) -> str:
    return json.dumps(_convert(payload), sort_keys=True, indent=1) + "\n"


def write_json(path: str, payload: Any) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_json(payload))


def write_csv(path: str, header: list[str], rows: list[dict[str, str]]) -> None:
    """Plain comma-joined cells; callers pre-format numbers as strings."""
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(row.get(col, "") for col in header))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
