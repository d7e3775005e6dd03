"""Workload driver and metrics over the simulated clock.

The driver keeps ``queue_depth`` requests in flight: each request is issued
as soon as a slot frees up and the engine reports its completion time, so
requests overlap wherever they land on different disks.
"""

from __future__ import annotations

import heapq
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .engine import Raid0eArray
from .errors import ConfigError, Raid0eError
from .geometry import Domain
from .vdisk import IoStats

PATTERNS = (
    "sequential-read",
    "sequential-write-fullstripe",
    "sequential-write-unaligned",
    "random-read",
    "random-write",
)


@dataclass(frozen=True)
class WorkloadSpec:
    pattern: str
    io_size: int
    total_bytes: int
    queue_depth: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.pattern not in PATTERNS:
            raise ConfigError(f"unknown workload {self.pattern!r}; choose from {', '.join(PATTERNS)}")
        if self.io_size <= 0 or self.total_bytes <= 0 or self.queue_depth < 1:
            raise ConfigError("io_size, total_bytes and queue_depth must be positive")

    @property
    def is_write(self) -> bool:
        return "write" in self.pattern


@dataclass
class IoMetrics:
    disks: dict[int, IoStats]
    domains: dict[int, Domain]
    elapsed: float
    bytes: int  # user bytes moved
    requests: int
    latencies: list[float] = field(default_factory=list, repr=False)
    recovery_events: int = 0
    errors: Counter = field(default_factory=Counter)
    mismatches: int = 0

    @property
    def throughput(self) -> float:
        return self.bytes / self.elapsed if self.elapsed > 0 else math.inf

    def domain_stats(self, domain: Domain) -> IoStats:
        total = IoStats()
        for slot, stats in self.disks.items():
            if self.domains[slot] is domain:
                total = total + stats
        return total

    def latency_histogram(self) -> dict[str, int]:
        """Counts per power-of-two microsecond bucket, keyed ``le_<us>``."""
        hist: Counter = Counter()
        for lat in self.latencies:
            us = max(lat * 1e6, 1.0)
            hist[f"le_{2 ** math.ceil(math.log2(us))}us"] += 1
        return dict(sorted(hist.items(), key=lambda kv: int(kv[0][3:-2])))

    def to_kv(self) -> dict[str, str]:
        kv = {
            "requests": self.requests,
            "bytes": self.bytes,
            "elapsed_s": f"{self.elapsed:.9f}",
            "throughput_Bps": f"{self.throughput:.3f}",
            "recovery_events": self.recovery_events,
            "errors": sum(self.errors.values()),
            "mismatches": self.mismatches,
        }
        for dom in Domain:
            st = self.domain_stats(dom)
            for name in ("read_ops", "write_ops", "read_bytes", "write_bytes"):
                kv[f"{dom.value}.{name}"] = getattr(st, name)
        for slot, st in sorted(self.disks.items()):
            for name in ("read_ops", "write_ops", "read_bytes", "write_bytes"):
                kv[f"disk{slot}.{name}"] = getattr(st, name)
        for name, n in sorted(self.errors.items()):
            kv[f"error.{name}"] = n
        for bucket, n in self.latency_histogram().items():
            kv[f"latency.{bucket}"] = n
        return {k: str(v) for k, v in kv.items()}

    def format_kv(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in self.to_kv().items())

    def report(self) -> str:
        lines = [
            f"requests        {self.requests}",
            f"bytes           {self.bytes}",
            f"elapsed (sim)   {self.elapsed:.6f} s",
            f"throughput      {self.throughput / 1e6:.3f} MB/s (simulated)",
            f"recoveries      {self.recovery_events}",
            f"errors          {sum(self.errors.values())}",
            "",
            f"{'disk':<8}{'domain':<8}{'rd ops':>10}{'wr ops':>10}{'rd MB':>12}{'wr MB':>12}",
        ]
        for slot, st in sorted(self.disks.items()):
            lines.append(
                f"{slot:<8}{self.domains[slot].value:<8}{st.read_ops:>10}{st.write_ops:>10}"
                f"{st.read_bytes / 1e6:>12.3f}{st.write_bytes / 1e6:>12.3f}"
            )
        for dom in Domain:
            st = self.domain_stats(dom)
            lines.append(
                f"{'total':<8}{dom.value:<8}{st.read_ops:>10}{st.write_ops:>10}"
                f"{st.read_bytes / 1e6:>12.3f}{st.write_bytes / 1e6:>12.3f}"
            )
        return "\n".join(lines) + "\n"


class ShadowVolume:
    """Ground-truth copy of everything written to the volume.

    After a crashed write the affected pieces are only known to hold either
    the old or the new bytes; :meth:`verify` accepts either and then pins the
    shadow to what the array actually returned.
    """

    def __init__(self, array: Raid0eArray, data: bytes | None = None):
        g = array.geometry
        self.geometry = g
        self.data = bytearray(data if data is not None else g.volume_bytes)
        if len(self.data) != g.volume_bytes:
            raise ConfigError("shadow size does not match the volume")
        self._uncertain: list[tuple[int, bytes, bytes]] = []  # (byte offset, old, new)

    def write(self, lba: int, payload: bytes):
        off = lba * self.geometry.sector_size
        self.data[off : off + len(payload)] = payload

    def expect(self, lba: int, count: int) -> bytes:
        ss = self.geometry.sector_size
        return bytes(self.data[lba * ss : (lba + count) * ss])

    def uncertain_write(self, lba: int, payload: bytes):
        g = self.geometry
        ss = g.sector_size
        pos = 0
        # split on stripe-unit boundaries: each piece lands whole or not at all
        while pos < len(payload):
            sector = lba + pos // ss
            room = (g.unit_sectors - sector % g.unit_sectors) * ss
            n = min(room, len(payload) - pos)
            off = sector * ss
            self._uncertain.append((off, bytes(self.data[off : off + n]), payload[pos : pos + n]))
            pos += n

    def verify(self, actual: bytes) -> list[int]:
        """Byte offsets of mismatching regions; resolves uncertain pieces."""
        bad = []
        for off, old, new in self._uncertain:
            got = actual[off : off + len(old)]
            if got not in (old, new):
                bad.append(off)
            self.data[off : off + len(old)] = got
        self._uncertain.clear()
        if bytes(self.data) != actual:
            ss = self.geometry.sector_size
            view = np.frombuffer(bytes(self.data), np.uint8) != np.frombuffer(actual, np.uint8)
            bad.extend(sorted({int(i) // ss * ss for i in np.flatnonzero(view)}))
        return bad


def _requests(array: Raid0eArray, spec: WorkloadSpec, rng: np.random.Generator):
    g = array.geometry
    ss = g.sector_size
    if spec.io_size % ss:
        raise ConfigError(f"io_size {spec.io_size} is not a multiple of the sector size {ss}")
    io_sectors = spec.io_size // ss
    if io_sectors > g.volume_sectors:
        raise ConfigError("io_size exceeds the volume")
    if spec.pattern == "sequential-write-fullstripe" and spec.io_size % g.stripe_bytes:
        raise ConfigError(f"full-stripe writes need io_size to be a multiple of {g.stripe_bytes}")
    n = -(-spec.total_bytes // spec.io_size)
    start = 1 if spec.pattern == "sequential-write-unaligned" else 0
    slots = (g.volume_sectors - start) // io_sectors
    if slots < 1:
        raise ConfigError("volume too small for this io_size")
    for i in range(n):
        if spec.pattern.startswith("sequential"):
            lba = start + (i % slots) * io_sectors
        else:
            lba = int(rng.integers(0, g.volume_sectors // io_sectors)) * io_sectors
        payload = rng.bytes(spec.io_size) if spec.is_write else None
        yield lba, io_sectors, payload


def run_workload(array: Raid0eArray, spec: WorkloadSpec, shadow: ShadowVolume | None = None) -> IoMetrics:
    """Drive ``spec`` against ``array`` and measure it on the simulated clock."""
    g = array.geometry
    rng = np.random.default_rng(spec.seed)
    before = {s: d.stats() for s, d in enumerate(array.disks)}
    recoveries = len(array.recoveries)
    t0 = max([array.clock.now] + [d.busy_until for d in array.disks])
    free = [t0] * spec.queue_depth
    heapq.heapify(free)
    last_issue = t0
    end = t0
    latencies, errors, mismatches, moved, count = [], Counter(), 0, 0, 0
    for lba, sectors, payload in _requests(array, spec, rng):
        issue = max(heapq.heappop(free), last_issue)
        last_issue = issue
        try:
            if payload is None:
                data, done = array.read_at(lba, sectors, issue)
                if shadow is not None and data != shadow.expect(lba, sectors):
                    mismatches += 1
            else:
                done = array.write_at(lba, payload, issue)
                if shadow is not None:
                    shadow.write(lba, payload)
            moved += sectors * g.sector_size
        except Raid0eError as e:
            errors[type(e).__name__] += 1
            done = getattr(e, "completed_at", None) or issue
        count += 1
        latencies.append(done - issue)
        end = max(end, done)
        heapq.heappush(free, done)
    array.clock.advance_to(end)
    disks = {s: d.stats() - before[s] for s, d in enumerate(array.disks)}
    return IoMetrics(
        disks=disks,
        domains={s: g.role(s)[0] for s in range(g.n_disks)},
        elapsed=end - t0,
        bytes=moved,
        requests=count,
        latencies=latencies,
        recovery_events=len(array.recoveries) - recoveries,
        errors=errors,
        mismatches=mismatches,
    )


def _block_faulted(array: Raid0eArray, slot: int, stripe: int) -> bool:
    g = array.geometry
    first = array._data_sector(slot, stripe)
    disk = array.disks[slot]
    return disk.failed or any(disk.fault_at(s) for s in range(first, first + g.unit_sectors))


def _timed_block_read(array: Raid0eArray, slot: int, stripe: int) -> float:
    g = array.geometry
    for d in array.disks:
        d.invalidate_head()  # random access: every read pays a seek
    at = max([array.clock.now] + [d.busy_until for d in array.disks])
    lba = stripe * g.stripe_sectors + slot * g.unit_sectors
    _, done = array.read_at(lba, g.unit_sectors, at)
    array.clock.advance_to(done)
    return done - at


def degraded_latency_probe(array: Raid0eArray, stripe: int, disk_index: int | None = None) -> float:
    """Latency of reading the faulty block of ``stripe`` over a healthy one.

    The faulty block is the first data block of the stripe with an injected
    fault (or ``disk_index``). The healthy reference is the block on the
    same disk in the nearest stripe without faults. Write-back is held off
    so the fault survives the probe.
    """
    g = array.geometry
    if disk_index is None:
        faulty = [d for d in range(g.n_data) if _block_faulted(array, d, stripe)]
        disk_index = faulty[0] if faulty else 0
    candidates = sorted(range(g.stripes), key=lambda s: (abs(s - stripe), s))
    ref = next(
        (s for s in candidates if s != stripe and not any(_block_faulted(array, d, s) for d in range(g.n_data))),
        None,
    )
    if ref is None:
        raise ConfigError("no healthy stripe to compare against")
    saved = array.writeback
    array.writeback = False
    try:
        healthy = _timed_block_read(array, disk_index, ref)
        probed = _timed_block_read(array, disk_index, stripe)
    finally:
        array.writeback = saved
    return probed / healthy
