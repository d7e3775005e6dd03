"""Address arithmetic for the data and parity domains.

The data domain is a plain RAID 0 set: the volume is cut into stripe units
that are dealt round-robin over data disks ``0..N-1``. Stripe ``S`` is the
row of N units sharing the per-disk offset ``S * stripe_unit``. Parity for
stripe ``S`` lives on parity disk ``S mod M`` at offset
``(S div M) * stripe_unit``; with a single parity disk this is just the
stripes laid out back to back.

Offsets in :class:`BlockLocation` are byte offsets into the *data area* of
a disk; the engine adds the on-disk header size when it issues I/O.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from fractions import Fraction

from .errors import AddressError, ConfigError

DEFAULT_SECTOR_SIZE = 512
DEFAULT_STRIPE_UNIT = 64 * 1024


class Domain(str, enum.Enum):
    DATA = "data"
    PARITY = "parity"


@dataclass(frozen=True)
class ArrayGeometry:
    n_data: int
    m_parity: int = 1
    stripe_unit: int = DEFAULT_STRIPE_UNIT
    sector_size: int = DEFAULT_SECTOR_SIZE
    # sectors in the data area of every member disk
    disk_capacity: int = 0

    def __post_init__(self):
        if self.n_data < 2:
            raise ConfigError(f"need at least 2 data disks, got {self.n_data}")
        if self.m_parity < 1:
            raise ConfigError(f"need at least 1 parity disk, got {self.m_parity}")
        if self.sector_size <= 0:
            raise ConfigError("sector_size must be positive")
        if self.stripe_unit <= 0 or self.stripe_unit % self.sector_size:
            raise ConfigError(
                f"stripe_unit {self.stripe_unit} is not a positive multiple "
                f"of sector_size {self.sector_size}"
            )
        if self.disk_capacity < self.unit_sectors:
            raise ConfigError(
                f"disk_capacity {self.disk_capacity} sectors holds no full stripe unit"
            )

    @property
    def unit_sectors(self) -> int:
        return self.stripe_unit // self.sector_size

    @property
    def n_disks(self) -> int:
        return self.n_data + self.m_parity

    @property
    def stripes(self) -> int:
        # trailing partial unit on each disk is unusable
        return self.disk_capacity // self.unit_sectors

    @property
    def stripe_sectors(self) -> int:
        return self.n_data * self.unit_sectors

    @property
    def stripe_bytes(self) -> int:
        return self.n_data * self.stripe_unit

    @property
    def volume_sectors(self) -> int:
        return self.stripes * self.stripe_sectors

    @property
    def volume_bytes(self) -> int:
        return self.volume_sectors * self.sector_size

    @property
    def parity_units_per_disk(self) -> int:
        return -(-self.stripes // self.m_parity)

    def slot(self, domain: Domain, index: int) -> int:
        """Global member slot: data disks first, then parity disks."""
        return index if domain is Domain.DATA else self.n_data + index

    def role(self, slot: int) -> tuple[Domain, int]:
        if not 0 <= slot < self.n_disks:
            raise AddressError(f"disk slot {slot} outside 0..{self.n_disks - 1}")
        if slot < self.n_data:
            return Domain.DATA, slot
        return Domain.PARITY, slot - self.n_data


@dataclass(frozen=True)
class BlockLocation:
    stripe: int
    domain: Domain
    disk_index: int
    offset: int  # bytes into the disk's data area

    def offset_sectors(self, geom: ArrayGeometry) -> int:
        return self.offset // geom.sector_size


def _check_stripe(stripe: int, geom: ArrayGeometry) -> None:
    if not 0 <= stripe < geom.stripes:
        raise AddressError(f"stripe {stripe} outside 0..{geom.stripes - 1}")


def map_lba(lba: int, geom: ArrayGeometry) -> BlockLocation:
    """Resolve a volume sector to its data-domain location."""
    if not 0 <= lba < geom.volume_sectors:
        raise AddressError(f"lba {lba} outside volume of {geom.volume_sectors} sectors")
    unit = geom.unit_sectors
    stripe, within = divmod(lba, geom.stripe_sectors)
    disk, sector_in_unit = divmod(within, unit)
    sector = stripe * unit + sector_in_unit
    return BlockLocation(stripe, Domain.DATA, disk, sector * geom.sector_size)


def parity_location(stripe: int, geom: ArrayGeometry) -> BlockLocation:
    _check_stripe(stripe, geom)
    disk, row = stripe % geom.m_parity, stripe // geom.m_parity
    return BlockLocation(stripe, Domain.PARITY, disk, row * geom.stripe_unit)


def stripe_members(stripe: int, geom: ArrayGeometry) -> list[BlockLocation]:
    """The N data locations of ``stripe`` in disk order, then its parity."""
    _check_stripe(stripe, geom)
    offset = stripe * geom.stripe_unit
    members = [BlockLocation(stripe, Domain.DATA, d, offset) for d in range(geom.n_data)]
    members.append(parity_location(stripe, geom))
    return members


def capacity_efficiency(geom: ArrayGeometry) -> Fraction:
    """Usable fraction of raw capacity, N / (N + M), as an exact ratio."""
    return Fraction(geom.n_data, geom.n_data + geom.m_parity)
