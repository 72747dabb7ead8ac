"""Canonical text helpers: key=value blocks and shortest round-trip floats."""

import math
from typing import Any, Dict, Iterable, List


def format_float(value: float) -> str:
    """Shortest text that parses back to the identical float."""
    v = float(value)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return repr(v)


def format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return format_float(value)
    if isinstance(value, (list, tuple)):
        return ",".join(format_value(v) for v in value)
    return str(value)


def render_key_values(pairs: Dict[str, Any]) -> str:
    """Sorted ``key=value`` lines with a trailing newline."""
    return "".join(f"{k}={format_value(pairs[k])}\n" for k in sorted(pairs))


def parse_key_values(text: str) -> Dict[str, str]:
    """Inverse of :func:`render_key_values` for trusted, canonical text."""
    out: Dict[str, str] = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def tsv_line(fields: Iterable[Any]) -> str:
    return "\t".join(format_value(f) for f in fields) + "\n"


def split_csv(raw: str) -> List[str]:
    return [part.strip() for part in raw.split(",") if part.strip()]
