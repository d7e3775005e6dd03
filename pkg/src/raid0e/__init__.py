"""RAID-0e: a RAID 0 data domain guarded by a separate XOR parity domain,
simulated over file-backed virtual disks."""

from .engine import ArrayMode, ArrayState, Raid0eArray, make_disks
from .errors import (
    AddressError,
    ArrayOfflineError,
    ConfigError,
    ContractError,
    MediaError,
    Raid0eError,
    RedundancyLostError,
    UnrecoverableReadError,
)
from .geometry import ArrayGeometry, BlockLocation, Domain, capacity_efficiency, map_lba, parity_location
from .harness import IoMetrics, ShadowVolume, WorkloadSpec, degraded_latency_probe, run_workload
from .parity import compute_parity, incremental_parity, reconstruct
from .scenario import run_fault_scenario
from .vdisk import FaultKind, FaultSpec, LatencyModel, SimClock, VirtualDisk

__all__ = [
    "AddressError", "ArrayGeometry", "ArrayMode", "ArrayOfflineError", "ArrayState",
    "BlockLocation", "ConfigError", "ContractError", "Domain", "FaultKind", "FaultSpec",
    "IoMetrics", "LatencyModel", "MediaError", "Raid0eArray", "Raid0eError",
    "RedundancyLostError", "ShadowVolume", "SimClock", "UnrecoverableReadError",
    "VirtualDisk", "WorkloadSpec", "capacity_efficiency", "compute_parity",
    "degraded_latency_probe", "incremental_parity", "make_disks", "map_lba",
    "parity_location", "reconstruct", "run_fault_scenario", "run_workload",
]
