"""Exception hierarchy shared by every layer of the array stack."""


class Raid0eError(Exception):
    """Base class for all array errors."""


class ConfigError(Raid0eError, ValueError):
    """Invalid geometry, disk set or policy."""


class AddressError(Raid0eError, IndexError):
    """An LBA, stripe or sector outside the addressable range."""


class ContractError(Raid0eError, ValueError):
    """Caller broke a precondition (length mismatch, wrong block count...)."""


class DiskError(Raid0eError, OSError):
    """Base for errors raised by a member disk."""

    def __init__(self, message, disk=None, sector=None, completed_at=None):
        super().__init__(message)
        self.disk = disk
        self.sector = sector
        # simulated time at which the failing request finished
        self.completed_at = completed_at


class MediaError(DiskError):
    """A read hit an unreadable sector."""


class MediaWriteError(DiskError):
    """A write hit a write-fail sector; nothing was persisted."""


class DiskFailedError(DiskError):
    """The disk is in the failed state and rejects all I/O."""


class UnrecoverableReadError(Raid0eError):
    """More than one block of a stripe is unavailable."""

    def __init__(self, message, stripe=None, disks=()):
        super().__init__(message)
        self.stripe = stripe
        self.disks = tuple(disks)


class ArrayOfflineError(Raid0eError):
    """The array has lost data-domain redundancy beyond repair."""


class RedundancyLostError(Raid0eError):
    """Strict mode rejected a write while the parity domain is down."""


class SuperblockError(Raid0eError):
    """Missing, corrupt or mismatched superblock."""


class JournalError(Raid0eError):
    """Journal region cannot hold a record, or is structurally broken."""


class SimulatedCrash(Raid0eError):
    """Raised by a crash hook to abort the write pipeline mid-flight."""

    def __init__(self, point):
        super().__init__(f"simulated crash at {point}")
        self.point = point
