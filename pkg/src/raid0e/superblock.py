"""On-disk superblock, stored in the first bytes of every member disk.

Layout (big-endian, version 1)::

    off  size  field
      0     4  magic            b"R0E1"
      4     2  version          1
      6     2  body length      bytes before the trailing crc
      8     4  n_data
     12     4  m_parity
     16     4  stripe_unit      bytes
     20     4  sector_size      bytes
     24     8  disk_capacity    data-area sectors per disk
     32     8  journal_offset   bytes from start of disk
     40     8  journal_size     bytes
     48     8  data_offset      bytes from start of disk
     56     8  generation
     64    16  array uuid
     80     2  slot of this disk
     82     2  member count     n_data + m_parity
     84  4*K  role map, per member: domain u8 (0 data, 1 parity),
              status u8 (0 active, 1 faulty, 2 rebuilding), index u16
      .     4  crc32 of all preceding bytes

The block is zero padded to ``SUPERBLOCK_AREA`` (rounded up to a whole
number of sectors).
"""

from __future__ import annotations

import enum
import struct
import zlib
from dataclasses import dataclass, replace

from .errors import SuperblockError
from .geometry import ArrayGeometry, Domain

MAGIC = b"R0E1"
VERSION = 1
SUPERBLOCK_AREA = 4096

_HEAD = struct.Struct(">4sHHIIIIQQQQQ16sHH")
_ROLE = struct.Struct(">BBH")
_CRC = struct.Struct(">I")


class MemberStatus(enum.IntEnum):
    ACTIVE = 0
    FAULTY = 1
    REBUILDING = 2


@dataclass(frozen=True)
class Member:
    domain: Domain
    index: int
    status: MemberStatus = MemberStatus.ACTIVE


def superblock_area(sector_size: int) -> int:
    return -(-SUPERBLOCK_AREA // sector_size) * sector_size


@dataclass(frozen=True)
class Superblock:
    geometry: ArrayGeometry
    journal_offset: int
    journal_size: int
    data_offset: int
    uuid: bytes
    slot: int
    members: tuple[Member, ...]
    generation: int = 1
    version: int = VERSION

    def for_slot(self, slot: int) -> Superblock:
        return replace(self, slot=slot)

    def with_status(self, slot: int, status: MemberStatus) -> Superblock:
        members = list(self.members)
        members[slot] = replace(members[slot], status=status)
        return replace(self, members=tuple(members))

    def bump(self) -> Superblock:
        return replace(self, generation=self.generation + 1)

    def pack(self) -> bytes:
        g = self.geometry
        body = _HEAD.pack(
            MAGIC,
            self.version,
            _HEAD.size + _ROLE.size * len(self.members),
            g.n_data,
            g.m_parity,
            g.stripe_unit,
            g.sector_size,
            g.disk_capacity,
            self.journal_offset,
            self.journal_size,
            self.data_offset,
            self.generation,
            self.uuid,
            self.slot,
            len(self.members),
        )
        body += b"".join(
            _ROLE.pack(0 if m.domain is Domain.DATA else 1, int(m.status), m.index)
            for m in self.members
        )
        blob = body + _CRC.pack(zlib.crc32(body))
        area = superblock_area(g.sector_size)
        if len(blob) > area:
            raise SuperblockError(f"superblock of {len(blob)} bytes exceeds {area}")
        return blob.ljust(area, b"\0")

    @classmethod
    def unpack(cls, raw: bytes) -> Superblock:
        if len(raw) < _HEAD.size + _CRC.size:
            raise SuperblockError("superblock truncated")
        (magic, version, body_len, n, m, su, ss, cap, j_off, j_size, d_off,
         gen, uuid, slot, count) = _HEAD.unpack_from(raw)
        if magic != MAGIC:
            raise SuperblockError(f"bad magic {magic!r}")
        if version != VERSION:
            raise SuperblockError(f"unsupported superblock version {version}")
        if body_len != _HEAD.size + _ROLE.size * count or body_len + _CRC.size > len(raw):
            raise SuperblockError("superblock length field inconsistent")
        (crc,) = _CRC.unpack_from(raw, body_len)
        if zlib.crc32(raw[:body_len]) != crc:
            raise SuperblockError("superblock checksum mismatch")
        members = []
        for i in range(count):
            dom, status, index = _ROLE.unpack_from(raw, _HEAD.size + i * _ROLE.size)
            members.append(Member(Domain.DATA if dom == 0 else Domain.PARITY, index, MemberStatus(status)))
        geom = ArrayGeometry(n, m, su, ss, cap)
        if count != geom.n_disks or not 0 <= slot < count:
            raise SuperblockError("role map does not match geometry")
        return cls(geom, j_off, j_size, d_off, uuid, slot, tuple(members), gen, version)
