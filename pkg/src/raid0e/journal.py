"""Write-ahead journal kept at the head of every parity-domain disk.

Each stripe update is logged to the journal of the parity disk that owns
the stripe before any member block is touched. The log is a linear run of
records following a one-sector journal header; when a record does not fit
in the remaining space the log restarts at the beginning under a new base
sequence number, once every earlier record has finished its media writes.

All integers are big-endian.

Journal header (first sector of the region)::

    4s magic b"R0EJ" | u16 version | u16 reserved | u64 base_seq | u32 crc32

Record = descriptor sectors + payload sectors + one commit sector.

Descriptor::

    4s magic b"R0ED" | u16 version | u16 entry count | u64 seq | u64 stripe
    u8 state (1 = intent) | u8 bitmap length | u16 descriptor sectors
    u32 payload sectors | u32 payload crc32
    bitmap (bit i set = data block i updated, LSB first)
    entries: u8 domain (0 data, 1 parity) | u8 0 | u16 index
             u32 offset within the stripe unit | u32 length   (bytes)
    u32 crc32 of the descriptor body

Commit::

    4s magic b"R0EC" | u64 seq | u32 record crc32 (descriptor + payload)
    u32 crc32 of the preceding 16 bytes

A record whose commit sector is missing is intent-only and gets discarded by
replay; one whose record crc does not match is counted as corrupt and
skipped.
"""

from __future__ import annotations

import struct
import threading
import zlib
from dataclasses import dataclass, field

from .errors import JournalError
from .geometry import Domain

HEADER_MAGIC = b"R0EJ"
DESC_MAGIC = b"R0ED"
COMMIT_MAGIC = b"R0EC"
VERSION = 1
STATE_INTENT = 1

_HEADER = struct.Struct(">4sHHQ")
_DESC = struct.Struct(">4sHHQQBBHII")
_ENTRY = struct.Struct(">BBHII")
_COMMIT = struct.Struct(">4sQI")
_U32 = struct.Struct(">I")


@dataclass
class JournalEntry:
    domain: Domain
    index: int
    unit_offset: int  # bytes into the stripe unit
    data: bytes


@dataclass
class JournalRecord:
    seq: int
    stripe: int
    entries: list[JournalEntry]
    n_data: int

    @property
    def bitmap(self) -> bytes:
        bits = bytearray(-(-self.n_data // 8))
        for e in self.entries:
            if e.domain is Domain.DATA:
                bits[e.index // 8] |= 1 << (e.index % 8)
        return bytes(bits)

    def payload(self) -> bytes:
        return b"".join(e.data for e in self.entries)

    def descriptor(self, sector_size: int) -> bytes:
        bitmap = self.bitmap
        payload = self.payload()
        if len(payload) % sector_size:
            raise JournalError("journal payload is not sector aligned")
        entries = b"".join(
            _ENTRY.pack(0 if e.domain is Domain.DATA else 1, 0, e.index, e.unit_offset, len(e.data))
            for e in self.entries
        )
        body_len = _DESC.size + len(bitmap) + len(entries)
        sectors = -(-(body_len + _U32.size) // sector_size)
        body = _DESC.pack(
            DESC_MAGIC, VERSION, len(self.entries), self.seq, self.stripe,
            STATE_INTENT, len(bitmap), sectors, len(payload) // sector_size,
            zlib.crc32(payload),
        ) + bitmap + entries
        body += _U32.pack(zlib.crc32(body))
        return body.ljust(sectors * sector_size, b"\0")

    def commit_block(self, sector_size: int) -> bytes:
        crc = zlib.crc32(self.payload(), zlib.crc32(self.descriptor(sector_size)))
        head = _COMMIT.pack(COMMIT_MAGIC, self.seq, crc)
        return (head + _U32.pack(zlib.crc32(head))).ljust(sector_size, b"\0")

    def sectors(self, sector_size: int) -> int:
        return len(self.descriptor(sector_size)) // sector_size + len(self.payload()) // sector_size + 1


@dataclass
class ScanResult:
    committed: list[JournalRecord] = field(default_factory=list)
    intent_only: int = 0
    corrupt: int = 0
    next_seq: int = 1


def _decode_descriptor(raw: bytes, sector_size: int):
    """Returns (fields, entries-without-data, bitmap) or None when not a descriptor."""
    if raw[:4] != DESC_MAGIC:
        return None
    (_, version, n_entries, seq, stripe, state, bm_len, d_sectors,
     p_sectors, p_crc) = _DESC.unpack_from(raw)
    body_len = _DESC.size + bm_len + n_entries * _ENTRY.size
    if version != VERSION or body_len + _U32.size > d_sectors * sector_size:
        raise JournalError("descriptor layout invalid")
    if len(raw) < d_sectors * sector_size:
        return dict(d_sectors=d_sectors), None, None
    (crc,) = _U32.unpack_from(raw, body_len)
    if zlib.crc32(raw[:body_len]) != crc:
        raise JournalError("descriptor checksum mismatch")
    entries = []
    off = _DESC.size + bm_len
    for _ in range(n_entries):
        dom, _pad, index, unit_off, length = _ENTRY.unpack_from(raw, off)
        entries.append((Domain.DATA if dom == 0 else Domain.PARITY, index, unit_off, length))
        off += _ENTRY.size
    info = dict(seq=seq, stripe=stripe, d_sectors=d_sectors, p_sectors=p_sectors, p_crc=p_crc)
    return info, entries, raw[_DESC.size : _DESC.size + bm_len]


class JournalRegion:
    """The journal on one parity disk, addressed in disk sectors."""

    def __init__(self, disk, start_sector: int, n_sectors: int, n_data: int):
        if n_sectors < 2:
            raise JournalError("journal region needs at least two sectors")
        self.disk = disk
        self.start = start_sector
        self.n_sectors = n_sectors
        self.n_data = n_data
        self.sector_size = disk.sector_size
        self.base_seq = 1
        self.next_seq = 1
        self.pos = 0  # sector index after the header
        self._lock = threading.Lock()
        self._idle = threading.Condition(self._lock)
        self._inflight = 0
        self.moved = 0  # bytes transferred, for accounting

    def _read(self, start: int, count: int, at: float):
        data, end = self.disk.submit_read(start, count, at, tag="journal")
        self.moved += len(data)
        return data, end

    def _write(self, start: int, data: bytes, at: float) -> float:
        end = self.disk.submit_write(start, data, at, tag="journal")
        self.moved += len(data)
        return end

    @property
    def log_sectors(self) -> int:
        return self.n_sectors - 1

    def _header(self, base_seq: int) -> bytes:
        head = _HEADER.pack(HEADER_MAGIC, VERSION, 0, base_seq)
        return (head + _U32.pack(zlib.crc32(head))).ljust(self.sector_size, b"\0")

    def format(self, at: float, base_seq: int = 1) -> float:
        """Write an empty log header; returns completion time."""
        end = self._write(self.start, self._header(base_seq), at)
        self.base_seq = self.next_seq = base_seq
        self.pos = 0
        return end

    def load_header(self, at: float) -> float:
        raw, end = self._read(self.start, 1, at)
        magic, version, _, base_seq = _HEADER.unpack_from(raw)
        (crc,) = _U32.unpack_from(raw, _HEADER.size)
        if magic != HEADER_MAGIC or version != VERSION or zlib.crc32(raw[: _HEADER.size]) != crc:
            raise JournalError(f"{self.disk.name}: journal header invalid")
        self.base_seq = self.next_seq = base_seq
        self.pos = 0
        return end

    # -- appending --------------------------------------------------------

    def begin(self, stripe: int, entries: list[JournalEntry], at: float):
        """Reserve space and a sequence number, write the intent.

        Returns ``(record, position, completion time)``. Every ``begin``
        must be paired with :meth:`finish` once the media writes are done.
        """
        record = JournalRecord(0, stripe, entries, self.n_data)
        need = record.sectors(self.sector_size)
        if need > self.log_sectors:
            raise JournalError(f"record of {need} sectors exceeds journal of {self.log_sectors}")
        with self._idle:
            t = at
            if self.pos + need > self.log_sectors:
                while self._inflight:
                    self._idle.wait()
                t = self.format(t, self.next_seq)
            record.seq = self.next_seq
            pos = self.pos
            self.next_seq += 1
            self.pos += need
            self._inflight += 1
        end = self._write(self.start + 1 + pos, record.descriptor(self.sector_size) + record.payload(), t)
        return record, pos, end

    def commit(self, record: JournalRecord, pos: int, at: float) -> float:
        where = self.start + 1 + pos + record.sectors(self.sector_size) - 1
        return self._write(where, record.commit_block(self.sector_size), at)

    def finish(self):
        with self._idle:
            self._inflight -= 1
            if not self._inflight:
                self._idle.notify_all()

    # -- recovery ---------------------------------------------------------

    def scan(self, at: float) -> tuple[ScanResult, float]:
        """Walk the log from its start and classify every record."""
        res = ScanResult(next_seq=self.base_seq)
        t = self.load_header(at)
        res.next_seq = self.base_seq
        pos, seq = 0, self.base_seq
        ss = self.sector_size
        while pos < self.log_sectors:
            raw, t = self._read(self.start + 1 + pos, 1, t)
            try:
                decoded = _decode_descriptor(raw, ss)
                if decoded is None:
                    break
                info, entries, _ = decoded
                if entries is None:
                    n = info["d_sectors"]
                    if pos + n > self.log_sectors:
                        raise JournalError("descriptor runs past the journal")
                    raw, t = self._read(self.start + 1 + pos, n, t)
                    info, entries, _ = _decode_descriptor(raw, ss)
            except JournalError:
                res.corrupt += 1
                break
            if info["seq"] != seq:
                break  # stale record from before the last restart
            total = info["d_sectors"] + info["p_sectors"] + 1
            if pos + total > self.log_sectors:
                res.corrupt += 1
                break
            payload, t = self._read(self.start + 1 + pos + info["d_sectors"], info["p_sectors"], t)
            commit, t = self._read(self.start + 1 + pos + total - 1, 1, t)
            magic, c_seq, rec_crc = _COMMIT.unpack_from(commit)
            (c_crc,) = _U32.unpack_from(commit, _COMMIT.size)
            committed = (
                magic == COMMIT_MAGIC
                and c_seq == seq
                and zlib.crc32(commit[: _COMMIT.size]) == c_crc
            )
            if not committed:
                res.intent_only += 1
            elif zlib.crc32(payload, zlib.crc32(raw)) != rec_crc or zlib.crc32(payload) != info["p_crc"]:
                res.corrupt += 1
            else:
                out, off = [], 0
                for dom, index, unit_off, length in entries:
                    out.append(JournalEntry(dom, index, unit_off, payload[off : off + length]))
                    off += length
                res.committed.append(JournalRecord(seq, info["stripe"], out, self.n_data))
            pos += total
            seq += 1
        res.next_seq = seq
        self.next_seq = seq
        return res, t
