"""The RAID-0e array: a RAID 0 data domain guarded by a separate XOR parity domain.

Every member disk starts with a superblock, followed by a journal region
(used only on parity disks, reserved on all so member images share one
layout) and then the data area addressed by :mod:`raid0e.geometry`.

Reads go to the data domain only. When a data block cannot be read the
stripe's surviving blocks and its parity block are read concurrently and
the missing block is rebuilt by XOR; by default the rebuilt block is then
written back in the background, which heals the bad sectors.

Writes that cover a whole stripe compute parity directly from the new
data. Anything smaller takes the read-modify-write path: read old data and
old parity, fold the difference into the parity, write both. Every stripe
update is journaled on the owning parity disk before members are touched:

    intent (descriptor + payload) -> commit block -> data writes -> parity write

so a crash at any point is repaired by :meth:`Raid0eArray.journal_replay`.

Simulated time: methods ending in ``_at`` take an issue time and return
the completion time without moving the shared clock, so a driver can keep
several requests in flight. The plain methods are synchronous.
"""

from __future__ import annotations

import enum
import threading
import uuid as uuidlib
from collections import defaultdict
from collections.abc import Callable, Iterator
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

from . import geometry as geo
from .errors import (
    AddressError,
    ArrayOfflineError,
    ConfigError,
    ContractError,
    DiskFailedError,
    JournalError,
    MediaError,
    MediaWriteError,
    RedundancyLostError,
    SuperblockError,
    UnrecoverableReadError,
)
from .geometry import ArrayGeometry, Domain
from .journal import JournalEntry, JournalRecord, JournalRegion
from .parity import compute_parity, reconstruct, xor_blocks
from .superblock import Member, MemberStatus, Superblock, superblock_area
from .vdisk import LatencyModel, SimClock, VirtualDisk

DEFAULT_JOURNAL_SIZE = 16 * 1024 * 1024


class ArrayMode(str, enum.Enum):
    HEALTHY = "healthy"
    DEGRADED = "degraded"
    REDUNDANCY_LOST = "redundancy-lost"
    OFFLINE = "offline"


@dataclass(frozen=True)
class ArrayState:
    mode: ArrayMode
    failed_data: tuple[int, ...] = ()
    failed_parity: tuple[int, ...] = ()
    disks: tuple[str, ...] = ()  # per slot: healthy | failed | rebuilding


@dataclass
class RecoveryEvent:
    stripe: int
    disk_index: int
    data_reads: int
    parity_reads: int
    latency: float
    written_back: bool | None = None  # None: not attempted


@dataclass
class ScrubReport:
    stripes_checked: int = 0
    inconsistent: list[int] = field(default_factory=list)
    healed: int = 0
    unrecoverable: list[int] = field(default_factory=list)
    unhealed: list[int] = field(default_factory=list)
    skipped: int = 0

    @property
    def inconsistent_stripes(self) -> int:
        return len(self.inconsistent)

    @property
    def clean(self) -> bool:
        return not (self.inconsistent or self.unrecoverable or self.unhealed)


@dataclass
class ReplayReport:
    repaired: int = 0  # distinct stripes rewritten from the journal
    records: int = 0
    discarded: int = 0  # intent-only records
    corrupt: int = 0

    def __int__(self):
        return self.repaired


@dataclass
class RebuildReport:
    slot: int
    stripes: int = 0
    lost: list[int] = field(default_factory=list)


@dataclass(frozen=True)
class Layout:
    journal_offset: int  # bytes
    journal_size: int
    data_offset: int
    disk_sectors: int  # total image size in sectors


def layout_for(geom: ArrayGeometry, journal_size: int = DEFAULT_JOURNAL_SIZE) -> Layout:
    ss = geom.sector_size
    journal_size = -(-journal_size // ss) * ss
    j_off = superblock_area(ss)
    d_off = j_off + journal_size
    return Layout(j_off, journal_size, d_off, d_off // ss + geom.disk_capacity)


def make_disks(
    directory,
    geom: ArrayGeometry,
    journal_size: int = DEFAULT_JOURNAL_SIZE,
    latency: LatencyModel | None = None,
    clock: SimClock | None = None,
) -> list[VirtualDisk]:
    """Create (or reopen) ``disk<slot>.img`` images sized for ``geom``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    clock = clock or SimClock()
    lay = layout_for(geom, journal_size)
    return [
        VirtualDisk(directory / f"disk{slot}.img", lay.disk_sectors, geom.sector_size, latency, clock)
        for slot in range(geom.n_disks)
    ]


def _max_record_sectors(geom: ArrayGeometry) -> int:
    # a full-stripe update: every data block plus the parity block
    entries = [JournalEntry(Domain.DATA, d, 0, b"") for d in range(geom.n_data)]
    entries.append(JournalEntry(Domain.PARITY, 0, 0, b""))
    desc = JournalRecord(0, 0, entries, geom.n_data).descriptor(geom.sector_size)
    return len(desc) // geom.sector_size + (geom.n_data + 1) * geom.unit_sectors + 1


def min_journal_size(geom: ArrayGeometry) -> int:
    """Smallest journal (bytes) that holds one full-stripe record."""
    return (1 + _max_record_sectors(geom)) * geom.sector_size


class Raid0eArray:
    def __init__(
        self,
        sb: Superblock,
        disks: list[VirtualDisk],
        *,
        writeback: bool = True,
        strict: bool = False,
        clock: SimClock | None = None,
    ):
        self.sb = sb
        self.geometry = g = sb.geometry
        self.disks = list(disks)
        self.writeback = writeback
        self.strict = strict
        self.clock = clock or disks[0].clock
        self.crash_hook: Callable[[str], None] | None = None
        self.recoveries: list[RecoveryEvent] = []
        self.writeback_failures: list[tuple[int, int]] = []
        self.pending_scrub: set[int] = set()
        self.last_replay: ReplayReport | None = None
        self._ss = g.sector_size
        self._data_start = sb.data_offset // g.sector_size
        self._journals = [
            JournalRegion(
                disks[g.n_data + j],
                sb.journal_offset // g.sector_size,
                sb.journal_size // g.sector_size,
                g.n_data,
            )
            for j in range(g.m_parity)
        ]
        self._watermark: dict[int, int] = {}  # slot -> first stripe not yet rebuilt
        self._locks: dict[int, threading.RLock] = defaultdict(threading.RLock)
        self._locks_guard = threading.Lock()
        self._moved = defaultdict(int)  # tag -> bytes the engine transferred

    # -- construction -----------------------------------------------------

    @classmethod
    def create(
        cls,
        geom: ArrayGeometry,
        disks: list[VirtualDisk],
        *,
        journal_size: int | None = None,
        array_uuid: bytes | None = None,
        **policy,
    ) -> Raid0eArray:
        """Format ``disks`` as a new array.

        Without ``journal_size`` the journal takes whatever the images hold
        beyond the superblock and data area.
        """
        if len(disks) != geom.n_disks:
            raise ConfigError(
                f"{geom.n_data}+{geom.m_parity} array needs {geom.n_disks} disks, got {len(disks)}"
            )
        caps = {d.capacity for d in disks}
        if len(caps) != 1:
            raise ConfigError(f"member capacities differ: {sorted(caps)}")
        if journal_size is None:
            spare = disks[0].capacity - superblock_area(geom.sector_size) // geom.sector_size - geom.disk_capacity
            journal_size = spare * geom.sector_size
        lay = layout_for(geom, journal_size)
        if journal_size < 2 * geom.sector_size or disks[0].capacity < lay.disk_sectors:
            raise ConfigError(
                f"disks hold {disks[0].capacity} sectors, layout needs {lay.disk_sectors}"
            )
        if any(d.sector_size != geom.sector_size for d in disks):
            raise ConfigError("disk sector size differs from geometry")
        need = min_journal_size(geom)
        if lay.journal_size < need:
            raise ConfigError(
                f"journal of {lay.journal_size} bytes cannot hold a full-stripe record ({need} bytes)"
            )
        members = tuple(Member(*geom.role(s)) for s in range(geom.n_disks))
        sb = Superblock(
            geom, lay.journal_offset, lay.journal_size, lay.data_offset,
            array_uuid or uuidlib.uuid4().bytes, 0, members,
        )
        array = cls(sb, disks, **policy)
        t = array.clock.now
        t = max(t, array._zero_members(t))
        for j in array._journals:
            t = max(t, j.format(t))
        t = max(t, array._write_superblocks(t))
        array.clock.advance_to(t)
        return array

    @classmethod
    def open(cls, disks: list[VirtualDisk], *, replay: bool = True, **policy) -> Raid0eArray:
        """Assemble an array from member images in any order."""
        found: dict[int, tuple[Superblock, VirtualDisk]] = {}
        unknown = []
        for d in disks:
            try:
                sb = Superblock.unpack(d.peek(0, superblock_area(d.sector_size) // d.sector_size))
            except (SuperblockError, AddressError):
                unknown.append(d)
                continue
            if sb.slot in found:
                raise SuperblockError(f"two disks claim slot {sb.slot}")
            found[sb.slot] = (sb, d)
        if not found:
            raise SuperblockError("no member carries a valid superblock")
        auth = max((sb for sb, _ in found.values()), key=lambda s: s.generation)
        g = auth.geometry
        if len(disks) != g.n_disks:
            raise ConfigError(f"array has {g.n_disks} members, {len(disks)} disks supplied")
        for sb, _ in found.values():
            if sb.uuid != auth.uuid or sb.geometry != g:
                raise SuperblockError("members belong to different arrays")
        ordered: list[VirtualDisk | None] = [found[s][1] if s in found else None for s in range(g.n_disks)]
        missing = [s for s, d in enumerate(ordered) if d is None]
        if len(missing) != len(unknown):
            raise SuperblockError("cannot place disks without superblocks")
        for s, d in zip(missing, unknown):
            ordered[s] = d
            d.fail_disk()
        for s, m in enumerate(auth.members):
            if m.status is not MemberStatus.ACTIVE:
                ordered[s].fail_disk()
        array = cls(auth, ordered, **policy)
        t = array.clock.now
        for j in array._journals:
            if not j.disk.failed:
                try:
                    t = max(t, j.load_header(t))
                except JournalError:
                    t = max(t, j.format(t))
        array.clock.advance_to(t)
        if replay:
            array.last_replay = array.journal_replay()
        return array

    def close(self):
        """Clean shutdown: empty the journals and record member status."""
        t = self.clock.now
        for j in self._journals:
            if not j.disk.failed:
                t = max(t, j.format(t, j.next_seq))
        t = max(t, self._write_superblocks(t))
        self.clock.advance_to(t)

    def _zero_members(self, t: float) -> float:
        # journal region and data area; fresh sparse images are skipped cheaply
        chunk = max(self.geometry.unit_sectors, 2048)
        end = t
        start = self.sb.journal_offset // self._ss
        total = self._data_start - start + self.geometry.disk_capacity
        for slot, disk in enumerate(self.disks):
            for s in range(start, start + total, chunk):
                n = min(chunk, start + total - s)
                if disk.peek(s, n).count(0) != n * self._ss:
                    end = max(end, self._write(slot, s, bytes(n * self._ss), t, "init"))
        return end

    def _member_status(self, slot: int) -> MemberStatus:
        if self.disks[slot].failed:
            return MemberStatus.FAULTY
        if slot in self._watermark:
            return MemberStatus.REBUILDING
        return MemberStatus.ACTIVE

    def _write_superblocks(self, t: float) -> float:
        sb = self.sb.bump()
        for slot in range(self.geometry.n_disks):
            sb = sb.with_status(slot, self._member_status(slot))
        self.sb = sb
        end = t
        for slot, disk in enumerate(self.disks):
            if disk.failed:
                continue
            end = max(end, self._write(slot, 0, sb.for_slot(slot).pack(), t, "meta"))
        return end

    # -- helpers ----------------------------------------------------------

    @contextmanager
    def _stripe_lock(self, stripe: int):
        with self._locks_guard:
            lock = self._locks[stripe]
        with lock:
            yield

    def _crash(self, point: str):
        if self.crash_hook is not None:
            self.crash_hook(point)

    def slot_of(self, domain: Domain, index: int) -> int:
        return self.geometry.slot(domain, index)

    def _data_sector(self, disk: int, stripe: int, unit_off: int = 0) -> int:
        return self._data_start + stripe * self.geometry.unit_sectors + unit_off // self._ss

    def _parity_sector(self, stripe: int, unit_off: int = 0) -> int:
        loc = geo.parity_location(stripe, self.geometry)
        return self._data_start + loc.offset // self._ss + unit_off // self._ss

    def _parity_slot(self, stripe: int) -> int:
        return self.geometry.n_data + stripe % self.geometry.m_parity

    def _available(self, slot: int, stripe: int) -> bool:
        if self.disks[slot].failed:
            return False
        mark = self._watermark.get(slot)
        return mark is None or stripe < mark

    def _read(self, slot: int, sector: int, count: int, at: float, tag: str):
        data, end = self.disks[slot].submit_read(sector, count, at, tag)
        self._moved[tag] += len(data)
        return data, end

    def _write(self, slot: int, sector: int, data: bytes, at: float, tag: str) -> float:
        end = self.disks[slot].submit_write(sector, data, at, tag)
        self._moved[tag] += len(data)
        return end

    def bytes_moved(self) -> dict[str, int]:
        """Bytes the engine believes it transferred, by I/O purpose."""
        moved = dict(self._moved)
        journal = self._moved.get("journal", 0) + sum(j.moved for j in self._journals)
        if journal:
            moved["journal"] = journal
        return moved

    def _extents(self, lba: int, count: int):
        """Yield (stripe, disk, unit offset bytes, length bytes, buffer offset)."""
        g = self.geometry
        if count < 0 or lba < 0 or lba + count > g.volume_sectors:
            raise AddressError(f"range {lba}+{count} outside volume of {g.volume_sectors} sectors")
        pos = 0
        while count:
            loc = geo.map_lba(lba, g)
            in_unit = (lba % g.stripe_sectors) % g.unit_sectors
            n = min(count, g.unit_sectors - in_unit)
            yield loc.stripe, loc.disk_index, in_unit * self._ss, n * self._ss, pos
            pos += n * self._ss
            lba += n
            count -= n

    # -- state ------------------------------------------------------------

    def array_state(self) -> ArrayState:
        g = self.geometry
        status = []
        for slot, disk in enumerate(self.disks):
            if disk.failed:
                status.append("failed")
            elif slot in self._watermark:
                status.append("rebuilding")
            else:
                status.append("healthy")
        bad_data = tuple(i for i in range(g.n_data) if status[i] != "healthy")
        bad_parity = tuple(j for j in range(g.m_parity) if status[g.n_data + j] != "healthy")
        if len(bad_data) >= 2 or (bad_data and bad_parity):
            mode = ArrayMode.OFFLINE
        elif bad_data:
            mode = ArrayMode.DEGRADED
        elif bad_parity:
            mode = ArrayMode.REDUNDANCY_LOST
        else:
            mode = ArrayMode.HEALTHY
        return ArrayState(mode, bad_data, bad_parity, tuple(status))

    @property
    def state(self) -> ArrayState:
        return self.array_state()

    def _check_online(self):
        if self.array_state().mode is ArrayMode.OFFLINE:
            raise ArrayOfflineError("array is offline: data domain cannot be reconstructed")

    def fail_disk(self, slot: int):
        self.disks[slot].fail_disk()
        self.clock.advance_to(self._write_superblocks(self.clock.now))

    def restore_disk(self, slot: int):
        """Bring a failed member back as-is; its contents may be stale."""
        self.disks[slot].restore_disk()
        self.clock.advance_to(self._write_superblocks(self.clock.now))

    # -- read path --------------------------------------------------------

    def read(self, lba: int, count: int) -> bytes:
        data, end = self.read_at(lba, count, self.clock.now)
        self.clock.advance_to(end)
        return data

    def read_at(self, lba: int, count: int, at: float) -> tuple[bytes, float]:
        self._check_online()
        out = bytearray(count * self._ss)
        by_stripe: dict[int, list] = defaultdict(list)
        for ext in self._extents(lba, count):
            by_stripe[ext[0]].append(ext)
        end = at
        for stripe, exts in by_stripe.items():
            end = max(end, self._read_stripe(stripe, exts, at, out))
        return bytes(out), end

    def _read_stripe(self, stripe: int, exts, at: float, out: bytearray) -> float:
        end = at
        broken: dict[int, float] = {}  # disk -> time the failure was known
        for _, disk, off, length, pos in exts:
            if not self._available(disk, stripe):
                broken[disk] = at
                continue
            try:
                data, t = self._read(disk, self._data_sector(disk, stripe, off), length // self._ss, at, "io")
            except MediaError as e:
                broken[disk] = e.completed_at
                continue
            out[pos : pos + length] = data
            end = max(end, t)
        if len(broken) > 1:
            raise UnrecoverableReadError(
                f"stripe {stripe}: data disks {sorted(broken)} unreadable", stripe, sorted(broken)
            )
        for disk, t_fail in broken.items():
            block, t = self._recover(stripe, disk, t_fail)
            end = max(end, t)
            for _, d, off, length, pos in exts:
                if d == disk:
                    out[pos : pos + length] = block[off : off + length]
        return end

    def recover_block(self, stripe: int, failed_disk_index: int) -> bytes:
        """Rebuild one data block from its stripe's survivors and parity."""
        geo.parity_location(stripe, self.geometry)
        block, end = self._recover(stripe, failed_disk_index, self.clock.now)
        self.clock.advance_to(end)
        return block

    def _recover(self, stripe: int, disk: int, at: float) -> tuple[bytes, float]:
        g = self.geometry
        with self._stripe_lock(stripe):
            before = [d.stats() for d in self.disks]
            pslot = self._parity_slot(stripe)
            survivors, bad, end = [], [], at
            for j in range(g.n_data):
                if j == disk:
                    continue
                try:
                    if not self._available(j, stripe):
                        raise DiskFailedError("unavailable")
                    data, t = self._read(j, self._data_sector(j, stripe), g.unit_sectors, at, "recovery")
                    survivors.append(data)
                    end = max(end, t)
                except (MediaError, DiskFailedError) as e:
                    bad.append(j)
                    end = max(end, e.completed_at or at)
            parity = None
            try:
                if not self._available(pslot, stripe):
                    raise DiskFailedError("unavailable")
                parity, t = self._read(pslot, self._parity_sector(stripe), g.unit_sectors, at, "recovery")
                end = max(end, t)
            except (MediaError, DiskFailedError) as e:
                bad.append(pslot)
                end = max(end, e.completed_at or at)
            if bad:
                raise UnrecoverableReadError(
                    f"stripe {stripe}: cannot rebuild disk {disk}, slots {[disk, *bad]} unavailable",
                    stripe,
                    [disk, *bad],
                )
            block = reconstruct(survivors, parity, g.n_data)
            delta = [a - b for a, b in zip((d.stats() for d in self.disks), before)]
            event = RecoveryEvent(
                stripe,
                disk,
                sum(delta[s].read_ops for s in range(g.n_data)),
                sum(delta[s].read_ops for s in range(g.n_data, g.n_disks)),
                end - at,
            )
            self.recoveries.append(event)
            if self.writeback and not self.disks[disk].failed and disk not in self._watermark:
                # background: occupies the disk but does not delay the caller
                event.written_back, _ = self._writeback(stripe, disk, block, end)
        return block, end

    def writeback_reconstructed(self, stripe: int, disk_index: int, block: bytes) -> None:
        if len(block) != self.geometry.stripe_unit:
            raise ContractError("block length must equal the stripe unit")
        with self._stripe_lock(stripe):
            end = self._write(disk_index, self._data_sector(disk_index, stripe), block, self.clock.now, "writeback")
        self.clock.advance_to(end)

    def _writeback(self, stripe: int, disk: int, block: bytes, at: float) -> tuple[bool, float]:
        try:
            end = self._write(disk, self._data_sector(disk, stripe), block, at, "writeback")
        except (MediaWriteError, DiskFailedError) as e:
            self.writeback_failures.append((stripe, disk))
            return False, e.completed_at or at
        return True, end

    # -- write path -------------------------------------------------------

    def write(self, lba: int, data: bytes) -> None:
        end = self.write_at(lba, data, self.clock.now)
        self.clock.advance_to(end)

    def write_at(self, lba: int, data: bytes, at: float) -> float:
        if len(data) % self._ss:
            raise ContractError(f"write of {len(data)} bytes is not a whole number of sectors")
        state = self.array_state()
        if state.mode is ArrayMode.OFFLINE:
            raise ArrayOfflineError("array is offline")
        if self.strict and state.mode is ArrayMode.REDUNDANCY_LOST:
            raise RedundancyLostError("parity domain down and strict mode rejects writes")
        pieces: dict[int, dict[int, tuple[int, bytes]]] = defaultdict(dict)
        for stripe, disk, off, length, pos in self._extents(lba, len(data) // self._ss):
            pieces[stripe][disk] = (off, data[pos : pos + length])
        end = at
        errors = []
        for stripe, upd in pieces.items():
            try:
                end = max(end, self._write_stripe(stripe, upd, at))
            except MediaWriteError as e:
                errors.append(e)
                end = max(end, e.completed_at or at)
        if errors:
            raise errors[0]
        return end

    def _write_stripe(self, stripe: int, upd: dict[int, tuple[int, bytes]], at: float) -> float:
        g, su = self.geometry, self.geometry.stripe_unit
        with self._stripe_lock(stripe):
            pslot = self._parity_slot(stripe)
            missing = [d for d in range(g.n_data) if not self._available(d, stripe)]
            if len(missing) > 1:
                raise ArrayOfflineError(f"stripe {stripe}: data disks {missing} unavailable")
            full = len(upd) == g.n_data and all(o == 0 and len(b) == su for o, b in upd.values())
            if not self._available(pslot, stripe):
                if missing:
                    raise ArrayOfflineError(f"stripe {stripe}: parity and disk {missing[0]} unavailable")
                return self._write_raid0(stripe, upd, at)
            if full:
                parity = compute_parity([upd[d][1] for d in range(g.n_data)])
                p_off, t = 0, at
            elif missing:
                p_off, parity, t = 0, *self._reconstruct_write(stripe, upd, set(missing), False, at)
            else:
                p_off, parity, t = self._rmw_parity(stripe, upd, at)
            return self._commit_stripe(stripe, upd, p_off, parity, t)

    def _write_raid0(self, stripe, upd, at) -> float:
        end = at
        for disk, (off, data) in sorted(upd.items()):
            end = max(end, self._write(disk, self._data_sector(disk, stripe, off), data, at, "io"))
        return end

    def _rmw_parity(self, stripe, upd, at):
        """Old data + old parity -> new parity over the touched byte span."""
        pslot = self._parity_slot(stripe)
        lo = min(o for o, _ in upd.values())
        hi = max(o + len(b) for o, b in upd.values())
        old = {}
        bad_data, bad_parity, t = set(), False, at
        for disk, (off, data) in sorted(upd.items()):
            try:
                old[disk], te = self._read(disk, self._data_sector(disk, stripe, off), len(data) // self._ss, at, "io")
                t = max(t, te)
            except MediaError as e:
                bad_data.add(disk)
                t = max(t, e.completed_at)
        try:
            old_parity, te = self._read(pslot, self._parity_sector(stripe, lo), (hi - lo) // self._ss, at, "io")
            t = max(t, te)
        except MediaError as e:
            bad_parity = True
            t = max(t, e.completed_at)
        if bad_data or bad_parity:
            parity, t = self._reconstruct_write(stripe, upd, bad_data, bad_parity, t)
            return 0, parity, t
        delta = bytearray(hi - lo)
        for disk, (off, data) in upd.items():
            change = xor_blocks([old[disk], data])
            seg = slice(off - lo, off - lo + len(data))
            delta[seg] = xor_blocks([bytes(delta[seg]), change])
        return lo, xor_blocks([old_parity, bytes(delta)]), t

    def _reconstruct_write(self, stripe, upd, bad_data: set, bad_parity: bool, at):
        """Full-unit parity from the final contents of every block.

        Used when a block's old contents cannot be read directly: a missing
        member, or a media error during the RMW pre-read.
        """
        g, su = self.geometry, self.geometry.stripe_unit
        pslot = self._parity_slot(stripe)
        covered = {d for d, (o, b) in upd.items() if o == 0 and len(b) == su}
        blocks: dict[int, bytes] = {}
        t = at
        while True:
            unknown = [d for d in range(g.n_data) if d not in covered and d in bad_data]
            if len(unknown) > 1:
                raise UnrecoverableReadError(
                    f"stripe {stripe}: data disks {unknown} unreadable during write", stripe, unknown
                )
            if unknown:
                want = [d for d in range(g.n_data) if d != unknown[0] and d not in blocks]
                if bad_parity:
                    raise UnrecoverableReadError(
                        f"stripe {stripe}: disk {unknown[0]} and parity unreadable", stripe, [unknown[0], pslot]
                    )
            else:
                want = [d for d in range(g.n_data) if d not in covered and d not in blocks]
            for d in want:
                if d in bad_data:
                    continue
                try:
                    blocks[d], te = self._read(d, self._data_sector(d, stripe), g.unit_sectors, at, "io")
                    t = max(t, te)
                except MediaError as e:
                    bad_data.add(d)
                    t = max(t, e.completed_at)
            lost = [d for d in want if d in bad_data]
            if lost and unknown:
                raise UnrecoverableReadError(
                    f"stripe {stripe}: data disks {[unknown[0], *lost]} unreadable during write",
                    stripe, [unknown[0], *lost],
                )
            if lost:
                continue  # retry with the newly bad block as the unknown one
            if unknown:
                try:
                    old_parity, te = self._read(pslot, self._parity_sector(stripe), g.unit_sectors, at, "io")
                    t = max(t, te)
                except MediaError as e:
                    bad_parity = True
                    t = max(t, e.completed_at)
                    continue
                others = [blocks[d] for d in range(g.n_data) if d != unknown[0]]
                blocks[unknown[0]] = reconstruct(others, old_parity, g.n_data)
            break
        final = []
        for d in range(g.n_data):
            if d in covered:
                final.append(upd[d][1])
                continue
            block = bytearray(blocks[d])
            if d in upd:
                off, data = upd[d]
                block[off : off + len(data)] = data
            final.append(bytes(block))
        return compute_parity(final), t

    def _commit_stripe(self, stripe, upd, p_off: int, parity: bytes, at: float) -> float:
        pslot = self._parity_slot(stripe)
        journal = self._journals[stripe % self.geometry.m_parity]
        entries = [JournalEntry(Domain.DATA, d, off, data) for d, (off, data) in sorted(upd.items())]
        entries.append(JournalEntry(Domain.PARITY, pslot - self.geometry.n_data, p_off, parity))
        self._crash("before-intent")
        record, pos, t = journal.begin(stripe, entries, at)
        try:
            self._crash("after-intent")
            t = journal.commit(record, pos, t)
            self._crash("after-commit")
            end = t
            failed_write = None
            for d, (off, data) in sorted(upd.items()):
                if not self._available(d, stripe):
                    continue  # parity carries the missing member's new contents
                try:
                    end = max(end, self._write(d, self._data_sector(d, stripe, off), data, t, "io"))
                except MediaWriteError as e:
                    failed_write = failed_write or e
                    end = max(end, e.completed_at)
                except DiskFailedError:
                    pass
                self._crash(f"after-data-{d}")
            try:
                end = max(end, self._write(pslot, self._parity_sector(stripe, p_off), parity, t, "io"))
            except MediaWriteError as e:
                failed_write = failed_write or e
                end = max(end, e.completed_at)
            self._crash("after-parity")
        finally:
            journal.finish()
        if failed_write is not None:
            self.pending_scrub.add(stripe)
            raise failed_write
        return end

    # -- journal replay ---------------------------------------------------

    def journal_replay(self) -> ReplayReport:
        """Redo committed journal records; drop intent-only ones.

        Records are folded per stripe in sequence order over the current
        member units, and only units whose contents change are rewritten.
        ``repaired`` counts the stripes that needed a rewrite.
        """
        report = ReplayReport()
        t = self.clock.now
        for journal in self._journals:
            if journal.disk.failed:
                continue
            res, t = journal.scan(t)
            report.discarded += res.intent_only
            report.corrupt += res.corrupt
            report.records += len(res.committed)
            by_stripe: dict[int, list] = defaultdict(list)
            for rec in res.committed:
                by_stripe[rec.stripe].append(rec)
            for stripe, recs in sorted(by_stripe.items()):
                changed, t = self._redo_stripe(stripe, recs, t)
                report.repaired += changed
            t = journal.format(t, res.next_seq)
        self.clock.advance_to(t)
        return report

    def _redo_stripe(self, stripe: int, recs, t: float) -> tuple[bool, float]:
        g = self.geometry
        units: dict[int, bytearray | None] = {}  # slot -> current unit, None if unreadable
        for rec in recs:
            for e in rec.entries:
                slot = e.index if e.domain is Domain.DATA else g.n_data + e.index
                if slot in units or self.disks[slot].failed:
                    continue
                sector = self._data_sector(slot, stripe) if slot < g.n_data else self._parity_sector(stripe)
                try:
                    data, t = self._read(slot, sector, g.unit_sectors, t, "replay")
                    units[slot] = bytearray(data)
                except MediaError as e:
                    units[slot] = None
                    t = e.completed_at
        before = {slot: bytes(u) for slot, u in units.items() if u is not None}
        blind: dict[int, list] = defaultdict(list)  # unreadable units: write the entries as logged
        for rec in recs:
            for e in rec.entries:
                slot = e.index if e.domain is Domain.DATA else g.n_data + e.index
                if slot not in units:
                    continue
                if units[slot] is None:
                    blind[slot].append(e)
                else:
                    units[slot][e.unit_offset : e.unit_offset + len(e.data)] = e.data
        changed = bool(blind)
        for slot, unit in units.items():
            writes = []
            if unit is not None and bytes(unit) != before[slot]:
                writes = [(0, bytes(unit))]
            elif unit is None:
                writes = [(e.unit_offset, e.data) for e in blind[slot]]
            for off, data in writes:
                changed = True
                sector = self._data_sector(slot, stripe, off) if slot < g.n_data else self._parity_sector(stripe, off)
                try:
                    t = self._write(slot, sector, data, t, "replay")
                except MediaWriteError as e:
                    self.pending_scrub.add(stripe)
                    t = e.completed_at
        return changed, t

    # -- scrub ------------------------------------------------------------

    def scrub(self, stripes=None) -> ScrubReport:
        """Check every stripe's parity, healing unreadable blocks on the way."""
        self._check_online()
        g = self.geometry
        report = ScrubReport()
        t = self.clock.now
        for stripe in range(g.stripes) if stripes is None else stripes:
            pslot = self._parity_slot(stripe)
            slots = [*range(g.n_data), pslot]
            if not all(self._available(s, stripe) for s in slots):
                report.skipped += 1
                continue
            with self._stripe_lock(stripe):
                report.stripes_checked += 1
                blocks: dict[int, bytes] = {}
                bad = []
                end = t
                for s in slots:
                    sector = self._data_sector(s, stripe) if s < g.n_data else self._parity_sector(stripe)
                    try:
                        blocks[s], te = self._read(s, sector, g.unit_sectors, t, "scrub")
                        end = max(end, te)
                    except MediaError as e:
                        bad.append(s)
                        end = max(end, e.completed_at)
                t = end
                if not bad:
                    data = [blocks[s] for s in range(g.n_data)]
                    if compute_parity(data) != blocks[pslot]:
                        report.inconsistent.append(stripe)
                    else:
                        self.pending_scrub.discard(stripe)
                    continue
                if len(bad) > 1:
                    report.unrecoverable.append(stripe)
                    continue
                (s,) = bad
                if s == pslot:
                    fixed = compute_parity([blocks[d] for d in range(g.n_data)])
                    sector = self._parity_sector(stripe)
                else:
                    fixed = reconstruct([blocks[d] for d in range(g.n_data) if d != s], blocks[pslot], g.n_data)
                    sector = self._data_sector(s, stripe)
                try:
                    t = self._write(s, sector, fixed, t, "scrub")
                    report.healed += 1
                except MediaWriteError as e:
                    report.unhealed.append(stripe)
                    t = e.completed_at
        self.clock.advance_to(t)
        return report

    # -- rebuild ----------------------------------------------------------

    def rebuild(self, slot: int, replacement: VirtualDisk) -> RebuildReport:
        report = None
        for report in self.rebuild_steps(slot, replacement):
            pass
        return report

    def rebuild_steps(self, slot: int, replacement: VirtualDisk) -> Iterator[RebuildReport]:
        """Rebuild ``slot`` onto ``replacement`` one stripe at a time.

        Yields the running report after each stripe; the array keeps
        serving I/O between steps.
        """
        g = self.geometry
        domain, index = g.role(slot)
        others = [s for s in range(g.n_disks) if s != slot]
        if not self.disks[slot].failed:
            raise ConfigError(f"slot {slot} has not failed")
        required = others if domain is Domain.DATA else list(range(g.n_data))
        down = [s for s in required if self.disks[s].failed or s in self._watermark]
        if down:
            raise ConfigError(f"cannot rebuild slot {slot}: slots {down} also unavailable")
        if replacement.capacity != self.disks[others[0]].capacity:
            raise ConfigError("replacement capacity differs from members")
        if replacement.failed:
            raise ConfigError("replacement disk is failed")

        self.disks[slot] = replacement
        self._watermark[slot] = 0
        t = self.clock.now
        if domain is Domain.PARITY:
            self._moved["journal"] += self._journals[index].moved
            self._journals[index] = JournalRegion(
                replacement, self.sb.journal_offset // self._ss, self.sb.journal_size // self._ss, g.n_data
            )
            t = self._journals[index].format(t)
        t = max(t, self._write_superblocks(t))

        report = RebuildReport(slot)
        for stripe in range(g.stripes):
            if domain is Domain.PARITY and stripe % g.m_parity != index:
                self._watermark[slot] = stripe + 1
                continue
            with self._stripe_lock(stripe):
                t = self._rebuild_stripe(slot, domain, stripe, t, report)
                self._watermark[slot] = stripe + 1
            report.stripes += 1
            self.clock.advance_to(t)
            yield report
        del self._watermark[slot]
        self.clock.advance_to(self._write_superblocks(t))
        yield report

    def _rebuild_stripe(self, slot, domain, stripe, t, report) -> float:
        g = self.geometry
        pslot = self._parity_slot(stripe)
        sources = [d for d in range(g.n_data) if d != slot]
        if domain is Domain.DATA:
            sources.append(pslot)
        blocks, end = [], t
        try:
            for s in sources:
                sector = self._data_sector(s, stripe) if s < g.n_data else self._parity_sector(stripe)
                data, te = self._read(s, sector, g.unit_sectors, t, "rebuild")
                blocks.append(data)
                end = max(end, te)
        except (MediaError, DiskFailedError) as e:
            report.lost.append(stripe)
            return max(end, e.completed_at or t)
        block = compute_parity(blocks)  # data: survivors ^ parity; parity: xor of data
        sector = self._data_sector(slot, stripe) if domain is Domain.DATA else self._parity_sector(stripe)
        try:
            return self._write(slot, sector, block, end, "rebuild")
        except MediaWriteError as e:
            report.lost.append(stripe)
            return e.completed_at
