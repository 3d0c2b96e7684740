"""Resource-usage skylines and the area-preserving allocation simulator.

A skyline is the per-second token usage of one job execution. Simulating a
smaller allocation keeps every section that fits under the new cap as-is and
stretches each section that pokes above it into a flat run at the cap, with
the section's token-seconds preserved exactly.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Literal, Sequence

import numpy as np

from .errors import DomainError, InvalidThresholdError, ParseError

__all__ = [
    "Skyline",
    "Section",
    "area",
    "runtime",
    "split_sections",
    "simulate",
    "area_match",
    "read_csv",
    "write_csv",
]


class Skyline:
    """Immutable per-second token usage (non-negative integers, length >= 1)."""

    __slots__ = ("_usage",)

    def __init__(self, usage: Iterable[int] | np.ndarray):
        arr = np.asarray(list(usage) if not isinstance(usage, np.ndarray) else usage)
        if arr.ndim != 1 or arr.size == 0:
            raise DomainError("skyline must be a non-empty 1-d sequence")
        if arr.dtype.kind == "f":
            if not np.all(np.isfinite(arr)) or np.any(arr != np.round(arr)):
                raise DomainError("skyline entries must be integers")
        elif arr.dtype.kind not in "iub":
            raise DomainError(f"unsupported skyline dtype {arr.dtype}")
        arr = arr.astype(np.int64)
        if np.any(arr < 0):
            raise DomainError("skyline entries must be >= 0")
        arr.setflags(write=False)
        self._usage = arr

    @property
    def usage(self) -> np.ndarray:
        return self._usage

    @property
    def area(self) -> int:
        return int(self._usage.sum())

    @property
    def runtime(self) -> int:
        return int(self._usage.size)

    @property
    def peak(self) -> int:
        return int(self._usage.max())

    def tolist(self) -> list[int]:
        return self._usage.tolist()

    def __len__(self) -> int:
        return self._usage.size

    def __iter__(self):
        return iter(self.tolist())

    def __eq__(self, other: object) -> bool:
        if isinstance(other, Skyline):
            return np.array_equal(self._usage, other._usage)
        if isinstance(other, (list, tuple)):
            return self.tolist() == list(other)
        return NotImplemented

    def __hash__(self) -> int:
        return hash(self._usage.tobytes())

    def __repr__(self) -> str:
        if self.runtime <= 12:
            return f"Skyline({self.tolist()})"
        return f"Skyline(runtime={self.runtime}, area={self.area}, peak={self.peak})"


def as_skyline(s: Skyline | Sequence[int] | np.ndarray) -> Skyline:
    return s if isinstance(s, Skyline) else Skyline(s)


@dataclass(frozen=True)
class Section:
    start: int
    values: tuple[int, ...]
    kind: Literal["over", "under"]

    @property
    def area(self) -> int:
        return sum(self.values)


def area(s: Skyline | Sequence[int]) -> int:
    return as_skyline(s).area


def runtime(s: Skyline | Sequence[int]) -> int:
    return as_skyline(s).runtime


def _check_threshold(threshold: int) -> int:
    if isinstance(threshold, (bool, np.bool_)) or int(threshold) != threshold:
        raise InvalidThresholdError(f"threshold must be an integer, got {threshold!r}")
    if threshold < 1:
        raise InvalidThresholdError(f"threshold must be >= 1, got {threshold}")
    return int(threshold)


def _boundaries(usage: np.ndarray, threshold: int) -> np.ndarray:
    sign = np.sign(usage - threshold)
    starts = np.flatnonzero(sign[1:] != sign[:-1]) + 1
    return np.concatenate(([0], starts, [usage.size]))


def split_sections(s: Skyline | Sequence[int], threshold: int) -> list[Section]:
    """Cut the skyline wherever sign(usage - threshold) changes.

    A second sitting exactly at the threshold has sign 0 and so forms its own
    section, classified ``under`` together with everything below.
    """
    t = _check_threshold(threshold)
    usage = as_skyline(s).usage
    bounds = _boundaries(usage, t)
    out = []
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        values = tuple(int(v) for v in usage[lo:hi])
        out.append(Section(int(lo), values, "over" if values[0] > t else "under"))
    return out


def simulate(s: Skyline | Sequence[int], new_allocation: int) -> Skyline:
    """Skyline the same job would produce under a cap of ``new_allocation`` tokens.

    Over-cap sections become ``ceil(area / cap)`` seconds at the cap, the last
    second carrying the remainder, so each section's area is unchanged.
    """
    t = _check_threshold(new_allocation)
    sky = as_skyline(s)
    usage = sky.usage
    if t >= sky.peak:
        return sky
    bounds = _boundaries(usage, t)
    pieces: list[np.ndarray] = []
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        if usage[lo] > t:
            sec_area = int(usage[lo:hi].sum())
            n = -(-sec_area // t)
            flat = np.full(n, t, dtype=np.int64)
            flat[-1] = sec_area - (n - 1) * t
            pieces.append(flat)
        else:
            pieces.append(usage[lo:hi])
    return Skyline(np.concatenate(pieces))


def area_match(s1: Skyline | Sequence[int], s2: Skyline | Sequence[int], tolerance: float) -> bool:
    """True when the relative area difference (base: the larger area) is within tolerance."""
    if tolerance < 0 or math.isnan(tolerance):
        raise DomainError("tolerance must be >= 0")
    return relative_area_difference(area(s1), area(s2)) <= tolerance


def relative_area_difference(a1: int | float, a2: int | float) -> float:
    denom = max(a1, a2)
    if denom == 0:
        return 0.0
    return abs(a1 - a2) / denom


def write_csv(s: Skyline | Sequence[int], path: str | Path | None = None) -> str:
    """Write ``second,tokens`` rows; returns the CSV text as well."""
    sky = as_skyline(s)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["second", "tokens"])
    for i, v in enumerate(sky.tolist()):
        w.writerow([i, v])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def read_csv(path_or_text: str | Path, *, text: bool = False) -> Skyline:
    raw = path_or_text if text else Path(path_or_text).read_text()
    rows = list(csv.reader(io.StringIO(raw)))
    if not rows or [c.strip() for c in rows[0]] != ["second", "tokens"]:
        raise ParseError("expected header 'second,tokens'", line=1)
    values = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 2:
            raise ParseError(f"expected 2 columns, got {len(row)}", line=lineno)
        try:
            sec, tok = int(row[0]), int(row[1])
        except ValueError as exc:
            raise ParseError(str(exc), line=lineno) from None
        if sec != len(values):
            raise ParseError(f"expected second {len(values)}, got {sec}", line=lineno)
        if tok < 0:
            raise ParseError("tokens must be >= 0", line=lineno)
        values.append(tok)
    if not values:
        raise ParseError("skyline has no rows", line=2)
    return Skyline(values)
