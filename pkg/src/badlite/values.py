"""Document value model and its JSON text encoding.

A value is one of: None, bool, int, float, str, Point, DateTime, Duration,
list of values, or dict of field name to value. Documents are open-schema:
any fields beyond the declared ones are kept verbatim.

On the wire, typed scalars use a single-key wrapper object so decoding is
lossless: a point is {"$point": [x, y]}, a datetime {"$datetime": "<ISO>"},
a duration {"$duration": "<ISO>"}. Field names starting with "$" are
reserved for these wrappers.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from typing import Any, Optional, Union

from .errors import EngineError

MICROS_PER_SECOND = 1_000_000


@dataclass(frozen=True)
class Point:
    x: float
    y: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"point coordinates must be finite, got ({self.x}, {self.y})")


@dataclass(frozen=True, order=True)
class DateTime:
    """An absolute instant, microseconds since the UTC epoch."""

    micros: int

    def iso(self) -> str:
        secs, us = divmod(self.micros, MICROS_PER_SECOND)
        days, rem = divmod(secs, 86400)
        hh, rem = divmod(rem, 3600)
        mm, ss = divmod(rem, 60)
        y, mo, d = _civil_from_days(days)
        return f"{y:04d}-{mo:02d}-{d:02d}T{hh:02d}:{mm:02d}:{ss:02d}.{us:06d}Z"

    @classmethod
    def parse(cls, text: str) -> "DateTime":
        m = _DATETIME_RE.match(text)
        if not m:
            raise ValueError(f"invalid datetime literal {text!r}")
        y, mo, d, hh, mm, ss = (int(m.group(i)) for i in range(1, 7))
        frac = m.group(7) or ""
        us = int(frac.ljust(6, "0")[:6]) if frac else 0
        days = _days_from_civil(y, mo, d)
        return cls(((days * 86400) + hh * 3600 + mm * 60 + ss) * MICROS_PER_SECOND + us)

    def __add__(self, other: "Duration") -> "DateTime":
        if not isinstance(other, Duration):
            return NotImplemented
        return DateTime(self.micros + other.micros)

    def __sub__(self, other: Union["Duration", "DateTime"]):
        if isinstance(other, Duration):
            return DateTime(self.micros - other.micros)
        if isinstance(other, DateTime):
            return Duration(self.micros - other.micros)
        return NotImplemented


@dataclass(frozen=True, order=True)
class Duration:
    """A length of time in microseconds; may be negative."""

    micros: int

    def iso(self) -> str:
        total = abs(self.micros)
        sign = "-" if self.micros < 0 else ""
        secs, us = divmod(total, MICROS_PER_SECOND)
        if us:
            frac = f"{us:06d}".rstrip("0")
            return f"{sign}PT{secs}.{frac}S"
        return f"{sign}PT{secs}S"

    @classmethod
    def parse(cls, text: str) -> "Duration":
        m = _DURATION_RE.match(text)
        if not m or text.rstrip("-") in ("P", "PT"):
            raise ValueError(f"invalid duration literal {text!r}")
        sign = -1 if m.group(1) else 1
        days = int(m.group(2) or 0)
        hours = int(m.group(3) or 0)
        minutes = int(m.group(4) or 0)
        sec_text = m.group(5) or "0"
        sec_whole, _, sec_frac = sec_text.partition(".")
        us = int((sec_frac or "").ljust(6, "0")[:6])
        total = ((days * 86400 + hours * 3600 + minutes * 60 + int(sec_whole or 0))
                 * MICROS_PER_SECOND + us)
        return cls(sign * total)

    def __neg__(self) -> "Duration":
        return Duration(-self.micros)


Value = Union[None, bool, int, float, str, Point, DateTime, Duration, list, dict]

_DATETIME_RE = re.compile(
    r"^(\d{4})-(\d{2})-(\d{2})T(\d{2}):(\d{2}):(\d{2})(?:\.(\d{1,9}))?(?:Z|\+00:00)?$")
_DURATION_RE = re.compile(
    r"^(-)?P(?:(\d+)D)?(?:T(?:(\d+)H)?(?:(\d+)M)?(?:(\d+(?:\.\d{1,9})?)S)?)?$")


def _civil_from_days(z: int) -> tuple:
    # days-since-epoch to (y, m, d), proleptic Gregorian
    z += 719468
    era = (z if z >= 0 else z - 146096) // 146097
    doe = z - era * 146097
    yoe = (doe - doe // 1460 + doe // 36524 - doe // 146096) // 365
    y = yoe + era * 400
    doy = doe - (365 * yoe + yoe // 4 - yoe // 100)
    mp = (5 * doy + 2) // 153
    d = doy - (153 * mp + 2) // 5 + 1
    m = mp + 3 if mp < 10 else mp - 9
    return (y + (1 if m <= 2 else 0), m, d)


def _days_from_civil(y: int, m: int, d: int) -> int:
    y -= 1 if m <= 2 else 0
    era = (y if y >= 0 else y - 399) // 400
    yoe = y - era * 400
    doy = (153 * (m + (-3 if m > 2 else 9)) + 2) // 5 + d - 1
    doe = yoe * 365 + yoe // 4 - yoe // 100 + doy
    return era * 146097 + doe - 719468


def is_scalar(v: Value) -> bool:
    return isinstance(v, (bool, int, float, str, DateTime, Duration)) and v is not None


def compare_values(a: Value, b: Value) -> Optional[int]:
    """Compare two values; returns -1/0/1, or None when incomparable.

    Scalars order within their own type; ints and floats compare numerically.
    Composite values (points, arrays, objects) only support equality. Any
    cross-type pair is incomparable.
    """
    if a is None and b is None:
        return 0
    if isinstance(a, bool) and isinstance(b, bool):
        return (a > b) - (a < b)
    if isinstance(a, bool) or isinstance(b, bool):
        return None
    if isinstance(a, (int, float)) and isinstance(b, (int, float)):
        return (a > b) - (a < b)
    for ty in (str, DateTime, Duration):
        if isinstance(a, ty) and isinstance(b, ty):
            return (a > b) - (a < b)
    if isinstance(a, Point) and isinstance(b, Point):
        return 0 if a == b else None
    if isinstance(a, list) and isinstance(b, list):
        return 0 if a == b else None
    if isinstance(a, dict) and isinstance(b, dict):
        return 0 if a == b else None
    return None


def spatial_distance(a: Point, b: Point) -> float:
    return math.hypot(a.x - b.x, a.y - b.y)


def encode_value(v: Value) -> Any:
    """Convert a value to a plain JSON-serializable structure."""
    if v is None or isinstance(v, (bool, int, float, str)):
        return v
    if isinstance(v, Point):
        return {"$point": [v.x, v.y]}
    if isinstance(v, DateTime):
        return {"$datetime": v.iso()}
    if isinstance(v, Duration):
        return {"$duration": v.iso()}
    if isinstance(v, list):
        return [encode_value(item) for item in v]
    if isinstance(v, dict):
        return {k: encode_value(item) for k, item in v.items()}
    raise TypeError(f"not a value: {type(v).__name__}")


def decode_value(j: Any) -> Value:
    if j is None or isinstance(j, (bool, int, float, str)):
        return j
    if isinstance(j, list):
        return [decode_value(item) for item in j]
    if isinstance(j, dict):
        if len(j) == 1:
            ((key, payload),) = j.items()
            if key == "$point":
                return Point(float(payload[0]), float(payload[1]))
            if key == "$datetime":
                return DateTime.parse(payload)
            if key == "$duration":
                return Duration.parse(payload)
        return {k: decode_value(item) for k, item in j.items()}
    raise TypeError(f"not decodable: {type(j).__name__}")


def encode_json(v: Value) -> str:
    """Compact single-line JSON text for a value."""
    return json.dumps(encode_value(v), separators=(",", ":"), ensure_ascii=False)


def decode_json(text: str) -> Value:
    return decode_value(json.loads(text))


@dataclass(frozen=True)
class Document:
    """A root object plus the primary-key value extracted at insert time."""

    root: dict
    pk_value: Value

    @classmethod
    def from_root(cls, root: dict, pk_field: str) -> "Document":
        if not isinstance(root, dict):
            raise EngineError.malformed_record("record root must be an object")
        if pk_field not in root:
            raise EngineError.malformed_record(f"missing primary key field {pk_field!r}")
        pk = root[pk_field]
        if pk is None or not is_scalar(pk):
            raise EngineError.malformed_record(
                f"primary key field {pk_field!r} must be a non-null scalar")
        return cls(root=root, pk_value=pk)


def canonical_key_bytes(v: Value) -> bytes:
    """Stable byte encoding of a scalar, used for hash partitioning."""
    return encode_json(v).encode("utf-8")
