import math

import pytest

from raid0e.errors import ConfigError
from raid0e.geometry import Domain
from raid0e.harness import (
    PATTERNS,
    ShadowVolume,
    WorkloadSpec,
    degraded_latency_probe,
    run_workload,
)
from raid0e.vdisk import FaultSpec, LatencyModel, SimClock, VirtualDisk

UNIFORM = LatencyModel(100e6, 100e6, 0.0005)


def test_spec_validation():
    with pytest.raises(ConfigError):
        WorkloadSpec("sideways", 4096, 8192)
    with pytest.raises(ConfigError):
        WorkloadSpec("random-read", 0, 8192)
    with pytest.raises(ConfigError):
        WorkloadSpec("random-read", 4096, 8192, queue_depth=0)


def test_io_size_checks(array):
    with pytest.raises(ConfigError):
        run_workload(array, WorkloadSpec("random-read", 1000, 8192))
    with pytest.raises(ConfigError):
        run_workload(array, WorkloadSpec("sequential-write-fullstripe", 4096, 8192))


@pytest.mark.parametrize("pattern", PATTERNS)
def test_deterministic(array_factory, pattern):
    io = 16384
    spec = WorkloadSpec(pattern, io, 40 * io, queue_depth=4, seed=7)
    a = run_workload(array_factory("x", latency=UNIFORM), spec)
    b = run_workload(array_factory("y", latency=UNIFORM), spec)
    assert a.format_kv() == b.format_kv()
    assert a.report() == b.report()


@pytest.mark.parametrize("pattern", PATTERNS)
def test_throughput_times_elapsed_is_bytes(array, pattern):
    m = run_workload(array, WorkloadSpec(pattern, 16384, 30 * 16384, seed=1))
    assert m.bytes == 30 * 16384
    assert math.isclose(m.throughput * m.elapsed, m.bytes, rel_tol=1e-12)


def test_conservation(array):
    array.disks[1].inject_fault(FaultSpec("unreadable", array._data_sector(1, 3)))
    for pattern in PATTERNS:
        run_workload(array, WorkloadSpec(pattern, 16384, 20 * 16384, queue_depth=2, seed=3))
    array.scrub()
    on_disks = sum(d.stats().read_bytes + d.stats().write_bytes for d in array.disks)
    assert on_disks == sum(array.bytes_moved().values())


def test_per_domain_split(array):
    m = run_workload(array, WorkloadSpec("sequential-write-fullstripe", 16384, 16 * 16384))
    data, parity = m.domain_stats(Domain.DATA), m.domain_stats(Domain.PARITY)
    assert data.write_bytes == 16 * 16384
    assert parity.write_bytes > 16 * 16384 // 4  # parity plus its journal
    kv = m.to_kv()
    assert kv["data.write_bytes"] == str(data.write_bytes)
    assert kv["parity.read_ops"] == "0"


def test_random_read_touches_one_disk(array):
    m = run_workload(array, WorkloadSpec("random-read", 4096, 100 * 4096, seed=11))
    assert sum(s.read_ops for s in m.disks.values()) == m.requests == 100
    assert m.domain_stats(Domain.PARITY).read_ops == 0


def test_write_amplification_counts(array):
    g = array.geometry
    n = g.n_data

    def member_ops():  # member I/O only; journal I/O carries its own tag
        return sum(d.stats("io").read_ops + d.stats("io").write_ops for d in array.disks)

    before = member_ops()
    run_workload(array, WorkloadSpec("random-write", g.stripe_unit, 32 * g.stripe_unit, seed=2))
    rnd = member_ops() - before
    before = member_ops()
    run_workload(array, WorkloadSpec("sequential-write-fullstripe", g.stripe_bytes, 8 * g.stripe_bytes))
    full = member_ops() - before
    # same 32 blocks written both ways
    assert rnd == 4 * 32
    assert full == (n + 1) * 8
    assert rnd / full == pytest.approx(4 * n / (n + 1))


def test_sequential_read_scaling(array_factory):
    array = array_factory(latency=UNIFORM, disk_capacity=1024)
    io = 65536
    total = 2 * array.geometry.volume_bytes
    m = run_workload(array, WorkloadSpec("sequential-read", io, total))
    disk = VirtualDisk(array.disks[0].path.parent / "single.img", 4096, 512, UNIFORM, SimClock())
    t = 0.0
    for i in range(total // io):
        _, t = disk.submit_read((i * io // 512) % (4096 - io // 512), io // 512, t)
    single = total / t
    n = array.geometry.n_data
    assert 0.9 * n <= m.throughput / single <= n


def test_errors_counted_not_raised(array):
    g = array.geometry
    for d in (0, 1):
        array.disks[d].inject_fault(FaultSpec("unreadable", array._data_sector(d, 2)))
    m = run_workload(array, WorkloadSpec("sequential-read", g.stripe_bytes, g.volume_bytes))
    assert m.errors["UnrecoverableReadError"] == 1
    assert m.requests == g.stripes
    assert m.bytes == g.volume_bytes - g.stripe_bytes


def test_shadow_detects_mismatch(array):
    m = run_workload(array, WorkloadSpec("random-write", 4096, 20 * 4096, seed=4), ShadowVolume(array))
    assert m.mismatches == 0
    shadow = ShadowVolume(array)
    run_workload(array, WorkloadSpec("random-write", 4096, 20 * 4096, seed=4), shadow)
    m = run_workload(array, WorkloadSpec("random-read", 4096, 50 * 4096, seed=5), shadow)
    assert m.mismatches == 0
    shadow.write(0, b"\xff" * 512)
    assert shadow.verify(array.read(0, array.geometry.volume_sectors)) == [0]


def test_shadow_uncertain_accepts_old_or_new(array):
    shadow = ShadowVolume(array)
    shadow.uncertain_write(4, b"\x01" * 4096)  # spans two stripe units
    actual = bytearray(array.read(0, array.geometry.volume_sectors))
    actual[4 * 512 : 8 * 512] = b"\x01" * 2048  # first unit new, second old
    assert shadow.verify(bytes(actual)) == []
    assert shadow.expect(4, 4) == b"\x01" * 2048
    shadow.uncertain_write(0, b"\x02" * 512)
    actual[0:512] = b"\x03" * 512
    assert shadow.verify(bytes(actual)) == [0]


def test_latency_histogram(array):
    m = run_workload(array, WorkloadSpec("random-read", 4096, 50 * 4096))
    hist = m.latency_histogram()
    assert sum(hist.values()) == 50
    assert all(k.startswith("le_") and k.endswith("us") for k in hist)
    assert "latency." + next(iter(hist)) in m.to_kv()


def test_degraded_probe_bounds(array_factory):
    for n in (2, 3, 4, 6):
        array = array_factory(f"n{n}", n=n, latency=UNIFORM)
        array.disks[1].inject_fault(FaultSpec("unreadable", array._data_sector(1, 5)))
        ratio = degraded_latency_probe(array, 5)
        assert 1 < ratio <= n
        assert array.disks[1].faults() != []  # write-back held off
        assert array.writeback is True


def test_degraded_probe_exact_uniform(array_factory):
    array = array_factory(latency=UNIFORM)
    array.disks[2].inject_fault(FaultSpec("unreadable", array._data_sector(2, 4)))
    # failed read, then survivors + parity in parallel: two block times
    assert degraded_latency_probe(array, 4) == pytest.approx(2.0)


def test_healthy_probe_is_one(array):
    assert degraded_latency_probe(array, 3, disk_index=0) == pytest.approx(1.0)
