"""File-backed virtual disks with fault injection and a simulated clock.

A :class:`VirtualDisk` is a flat image file addressed in sectors. Every I/O
is charged against a parametric latency model: a seek when the access does
not continue where the previous one ended, plus transfer time at the
sequential bandwidth. Time is simulated, never wall-clock.

Each disk keeps a ``busy_until`` timestamp so I/Os on one disk serialize
while I/Os on different disks overlap. Callers that model concurrency use
:meth:`VirtualDisk.submit_read` / :meth:`VirtualDisk.submit_write` with an
explicit issue time; the plain :meth:`read_sectors` / :meth:`write_sectors`
are synchronous and advance the shared :class:`SimClock`.

Fault file format (one fault per line, ``#`` starts a comment)::

    <disk-index> <kind> <start-sector> <count> [k|pattern]

``kind`` is one of ``unreadable``, ``transient`` (needs ``k``), ``corrupt``
(needs a hex ``pattern``) or ``write-fail``.
"""

from __future__ import annotations

import enum
import os
import threading
from collections.abc import Iterable
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import (
    AddressError,
    ConfigError,
    DiskFailedError,
    MediaError,
    MediaWriteError,
)


@dataclass(frozen=True)
class LatencyModel:
    seq_read_bw: float = 200e6  # bytes per simulated second
    seq_write_bw: float = 150e6
    seek_time: float = 0.004  # seconds per discontiguous access

    def __post_init__(self):
        if self.seq_read_bw <= 0 or self.seq_write_bw <= 0 or self.seek_time < 0:
            raise ConfigError("latency rates must be positive")


class SimClock:
    """Shared simulated clock; only ever moves forward."""

    def __init__(self, start: float = 0.0):
        self._now = start
        self._lock = threading.Lock()

    @property
    def now(self) -> float:
        return self._now

    def advance_to(self, t: float) -> float:
        with self._lock:
            if t > self._now:
                self._now = t
            return self._now


class FaultKind(str, enum.Enum):
    UNREADABLE = "unreadable"
    TRANSIENT = "transient"
    CORRUPT = "corrupt"
    WRITE_FAIL = "write-fail"


@dataclass
class FaultSpec:
    kind: FaultKind
    start: int
    count: int = 1
    k: int | None = None  # remaining failures for transient faults
    pattern: bytes | None = None  # payload returned by corrupt sectors

    def __post_init__(self):
        self.kind = FaultKind(self.kind)
        if self.count < 1 or self.start < 0:
            raise ConfigError(f"bad fault scope {self.start}+{self.count}")
        if self.kind is FaultKind.TRANSIENT:
            if self.k is None or self.k < 1:
                raise ConfigError("transient fault needs k >= 1")
        if self.kind is FaultKind.CORRUPT:
            if not self.pattern:
                raise ConfigError("corrupt fault needs a non-empty pattern")

    @property
    def sectors(self) -> range:
        return range(self.start, self.start + self.count)


# faults a successful write heals (sector reallocation on write)
_WRITE_HEALS = (FaultKind.UNREADABLE, FaultKind.TRANSIENT, FaultKind.CORRUPT)


@dataclass
class IoStats:
    read_ops: int = 0
    write_ops: int = 0
    read_bytes: int = 0
    write_bytes: int = 0
    read_errors: int = 0
    write_errors: int = 0

    def __add__(self, other: IoStats) -> IoStats:
        return IoStats(*(getattr(self, f.name) + getattr(other, f.name) for f in fields(self)))

    def __sub__(self, other: IoStats) -> IoStats:
        return IoStats(*(getattr(self, f.name) - getattr(other, f.name) for f in fields(self)))


class DiskState(str, enum.Enum):
    HEALTHY = "healthy"
    FAILED = "failed"


class VirtualDisk:
    def __init__(
        self,
        path,
        capacity: int,
        sector_size: int = 512,
        latency: LatencyModel | None = None,
        clock: SimClock | None = None,
        name: str | None = None,
    ):
        self.path = Path(path)
        self.capacity = capacity
        self.sector_size = sector_size
        self.latency = latency or LatencyModel()
        self.clock = clock or SimClock()
        self.name = name or self.path.name
        self.state = DiskState.HEALTHY
        self.busy_until = 0.0
        self._head: int | None = None
        self._faults: dict[int, FaultSpec] = {}
        self._stats: dict[str, IoStats] = {}
        self._lock = threading.RLock()

        size = capacity * sector_size
        if self.path.exists():
            actual = self.path.stat().st_size
            if actual != size:
                raise ConfigError(f"{self.path}: image is {actual} bytes, expected {size}")
        else:
            with open(self.path, "wb") as f:
                f.truncate(size)
        self._fd = os.open(self.path, os.O_RDWR)

    @classmethod
    def open(cls, path, sector_size=512, **kw) -> VirtualDisk:
        size = Path(path).stat().st_size
        if size % sector_size:
            raise ConfigError(f"{path}: size {size} is not a whole number of sectors")
        return cls(path, size // sector_size, sector_size, **kw)

    def close(self):
        if self._fd >= 0:
            os.close(self._fd)
            self._fd = -1

    def __repr__(self):
        return f"VirtualDisk({self.name!r}, {self.capacity} sectors, {self.state.value})"

    @property
    def failed(self) -> bool:
        return self.state is DiskState.FAILED

    # -- state ------------------------------------------------------------

    def fail_disk(self):
        self.state = DiskState.FAILED

    def restore_disk(self):
        # contents are whatever the image still holds; rebuild must rewrite them
        self.state = DiskState.HEALTHY

    def invalidate_head(self):
        """Forget the head position so the next access pays a seek."""
        self._head = None

    # -- faults -----------------------------------------------------------

    def _check_range(self, start: int, count: int):
        if count < 0 or start < 0 or start + count > self.capacity:
            raise AddressError(
                f"{self.name}: sectors {start}+{count} outside capacity {self.capacity}"
            )

    def inject_fault(self, spec: FaultSpec):
        self._check_range(spec.start, spec.count)
        with self._lock:
            for s in spec.sectors:
                self._faults[s] = spec

    def remap_sector(self, sector: int):
        self._check_range(sector, 1)
        with self._lock:
            self._faults.pop(sector, None)

    def clear_faults(self):
        with self._lock:
            self._faults.clear()

    def fault_at(self, sector: int) -> FaultSpec | None:
        return self._faults.get(sector)

    def faults(self) -> list[FaultSpec]:
        """Active faults coalesced back into contiguous ranges."""
        runs: list[list] = []  # [origin spec, start, count]
        with self._lock:
            for s in sorted(self._faults):
                spec = self._faults[s]
                if spec.kind is FaultKind.TRANSIENT and not spec.k:
                    continue
                if runs and runs[-1][0] is spec and runs[-1][1] + runs[-1][2] == s:
                    runs[-1][2] += 1
                else:
                    runs.append([spec, s, 1])
        return [FaultSpec(spec.kind, start, count, spec.k, spec.pattern) for spec, start, count in runs]

    def _faults_in(self, start: int, count: int) -> list[tuple[int, FaultSpec]]:
        if not self._faults:
            return []
        if len(self._faults) < count:
            hits = [(s, f) for s, f in self._faults.items() if start <= s < start + count]
            hits.sort(key=lambda p: p[0])
            return hits
        return [(s, self._faults[s]) for s in range(start, start + count) if s in self._faults]

    # -- I/O --------------------------------------------------------------

    def stats(self, tag: str | None = None) -> IoStats:
        """Counters for one tag, or summed over all tags."""
        with self._lock:
            if tag is not None:
                return IoStats(**vars(self._stats.get(tag, IoStats())))
            total = IoStats()
            for s in self._stats.values():
                total = total + s
            return total

    def stats_by_tag(self) -> dict[str, IoStats]:
        with self._lock:
            return {t: IoStats(**vars(s)) for t, s in self._stats.items()}

    def _stat(self, tag: str) -> IoStats:
        return self._stats.setdefault(tag, IoStats())

    def _charge(self, start: int, count: int, at: float, bw: float) -> float:
        begin = max(at, self.busy_until)
        cost = count * self.sector_size / bw
        if self._head != start:
            cost += self.latency.seek_time
        end = begin + cost
        self.busy_until = end
        self._head = start + count
        return end

    def submit_read(self, start: int, count: int, at: float, tag: str = "data") -> tuple[bytes, float]:
        """Read issued at simulated time ``at``; returns (bytes, completion time)."""
        with self._lock:
            if self.failed:
                raise DiskFailedError(f"{self.name} has failed", disk=self.name, completed_at=at)
            self._check_range(start, count)
            st = self._stat(tag)
            st.read_ops += 1
            end = self._charge(start, count, at, self.latency.seq_read_bw)
            hits = self._faults_in(start, count)
            bad = None
            seen = set()
            for s, f in hits:
                if f.kind is FaultKind.UNREADABLE:
                    bad = s if bad is None else bad
                elif f.kind is FaultKind.TRANSIENT and f.k:
                    bad = s if bad is None else bad
                    if id(f) not in seen:
                        seen.add(id(f))
                        f.k -= 1
            if bad is not None:
                st.read_errors += 1
                raise MediaError(
                    f"{self.name}: unreadable sector {bad}", disk=self.name, sector=bad, completed_at=end
                )
            data = os.pread(self._fd, count * self.sector_size, start * self.sector_size)
            corrupt = [(s, f) for s, f in hits if f.kind is FaultKind.CORRUPT]
            if corrupt:
                buf = bytearray(data)
                for s, f in corrupt:
                    off = (s - start) * self.sector_size
                    reps = -(-self.sector_size // len(f.pattern))
                    buf[off : off + self.sector_size] = (f.pattern * reps)[: self.sector_size]
                data = bytes(buf)
            st.read_bytes += len(data)
            return data, end

    def submit_write(self, start: int, data: bytes, at: float, tag: str = "data") -> float:
        """Write issued at simulated time ``at``; returns completion time."""
        if len(data) % self.sector_size:
            raise AddressError(f"write of {len(data)} bytes is not sector aligned")
        count = len(data) // self.sector_size
        with self._lock:
            if self.failed:
                raise DiskFailedError(f"{self.name} has failed", disk=self.name, completed_at=at)
            self._check_range(start, count)
            st = self._stat(tag)
            st.write_ops += 1
            end = self._charge(start, count, at, self.latency.seq_write_bw)
            hits = self._faults_in(start, count)
            for s, f in hits:
                if f.kind is FaultKind.WRITE_FAIL:
                    st.write_errors += 1
                    raise MediaWriteError(
                        f"{self.name}: write failed at sector {s}", disk=self.name, sector=s, completed_at=end
                    )
            os.pwrite(self._fd, data, start * self.sector_size)
            for s, f in hits:
                if f.kind in _WRITE_HEALS:
                    del self._faults[s]
            st.write_bytes += len(data)
            return end

    def read_sectors(self, start: int, count: int, tag: str = "data") -> bytes:
        try:
            data, end = self.submit_read(start, count, self.clock.now, tag)
        except (MediaError, DiskFailedError) as e:
            self.clock.advance_to(e.completed_at)
            raise
        self.clock.advance_to(end)
        return data

    def write_sectors(self, start: int, data: bytes, tag: str = "data") -> None:
        try:
            end = self.submit_write(start, data, self.clock.now, tag)
        except (MediaWriteError, DiskFailedError) as e:
            self.clock.advance_to(e.completed_at)
            raise
        self.clock.advance_to(end)

    def peek(self, start: int, count: int) -> bytes:
        """Raw image bytes, bypassing faults, state and accounting."""
        self._check_range(start, count)
        return os.pread(self._fd, count * self.sector_size, start * self.sector_size)


# -- fault spec files ------------------------------------------------------


def _parse_pattern(token: str) -> bytes:
    token = token[2:] if token.lower().startswith("0x") else token
    try:
        pattern = bytes.fromhex(token)
    except ValueError:
        raise ConfigError(f"bad hex pattern {token!r}") from None
    if not pattern:
        raise ConfigError("empty pattern")
    return pattern


def parse_fault_line(line: str) -> tuple[int, FaultSpec] | None:
    """Parse one fault line; returns None for blank/comment lines."""
    line = line.split("#", 1)[0].strip()
    if not line:
        return None
    parts = line.split()
    if len(parts) < 4:
        raise ConfigError(f"fault line needs at least 4 fields: {line!r}")
    try:
        disk, kind, start, count = int(parts[0]), FaultKind(parts[1]), int(parts[2]), int(parts[3])
    except ValueError as e:
        raise ConfigError(f"bad fault line {line!r}: {e}") from None
    extra = parts[4:]
    k = pattern = None
    if kind is FaultKind.TRANSIENT:
        if len(extra) != 1:
            raise ConfigError("transient fault takes exactly one k argument")
        k = int(extra[0])
    elif kind is FaultKind.CORRUPT:
        if len(extra) != 1:
            raise ConfigError("corrupt fault takes exactly one pattern argument")
        pattern = _parse_pattern(extra[0])
    elif extra:
        raise ConfigError(f"{kind.value} fault takes no extra argument")
    return disk, FaultSpec(kind, start, count, k, pattern)


def parse_fault_file(text: str) -> list[tuple[int, FaultSpec]]:
    out = []
    for lineno, line in enumerate(text.splitlines(), 1):
        try:
            entry = parse_fault_line(line)
        except ConfigError as e:
            raise ConfigError(f"line {lineno}: {e}") from None
        if entry is not None:
            out.append(entry)
    return out


def format_fault_line(disk: int, spec: FaultSpec) -> str:
    line = f"{disk} {spec.kind.value} {spec.start} {spec.count}"
    if spec.kind is FaultKind.TRANSIENT:
        line += f" {spec.k}"
    elif spec.kind is FaultKind.CORRUPT:
        line += f" {spec.pattern.hex()}"
    return line


def format_fault_file(entries: Iterable[tuple[int, FaultSpec]]) -> str:
    lines = ["# disk kind start count [k|pattern]"]
    lines += [format_fault_line(d, s) for d, s in entries]
    return "\n".join(lines) + "\n"
