"""Acceptance criteria 1-10, one test each.

Every test records a one-line verdict; the lines are printed together at the
end of the pytest run (see conftest.py) and by ``python tests/test_acceptance.py``.
"""

import random
import sys
import time
from contextlib import contextmanager
from fractions import Fraction

import pytest

from raid0e.engine import ArrayMode, Raid0eArray, make_disks
from raid0e.errors import SimulatedCrash, UnrecoverableReadError
from raid0e.geometry import ArrayGeometry, Domain, capacity_efficiency
from raid0e.harness import ShadowVolume, WorkloadSpec, degraded_latency_probe, run_workload
from raid0e.parity import compute_parity, incremental_parity, reconstruct
from raid0e.vdisk import FaultSpec, LatencyModel, VirtualDisk

RESULTS: dict[int, str] = {}
UNIFORM = LatencyModel(100e6, 100e6, 0.0005)
MiB = 1 << 20


@contextmanager
def criterion(n: int, title: str):
    info = {"detail": ""}
    try:
        yield info
    except BaseException as e:
        why = info["detail"] or (str(e).splitlines() or [type(e).__name__])[0]
        RESULTS[n] = f"criterion {n:2d} FAIL  {title}: {why}"
        raise
    RESULTS[n] = f"criterion {n:2d} PASS  {title}" + (f": {info['detail']}" if info["detail"] else "")


def make(path, n=4, m=1, su=4096, cap=8 * 128, journal=MiB, latency=UNIFORM, **policy):
    geom = ArrayGeometry(n, m, su, 512, cap)
    return Raid0eArray.create(geom, make_disks(path, geom, journal, latency), journal_size=journal, **policy)


def test_c01_capacity_efficiency():
    with criterion(1, "capacity efficiency is exactly N/(N+1)") as c:
        t0 = time.perf_counter()
        table = {2: Fraction(2, 3), 3: Fraction(3, 4), 4: Fraction(4, 5), 8: Fraction(8, 9), 16: Fraction(16, 17)}
        got = {n: capacity_efficiency(ArrayGeometry(n, 1, 65536, 512, 128)) for n in table}
        elapsed = time.perf_counter() - t0
        c["detail"] = ", ".join(f"{n}:{f}" for n, f in got.items()) + f" in {elapsed:.3f}s"
        assert got == table
        assert elapsed < 1


def test_c02_parity_round_trip():
    with criterion(2, "reconstruct(stripe minus D_i, parity) == D_i over 10,000 stripes") as c:
        rng = random.Random(2)
        t0 = time.perf_counter()
        checks = 0
        for _ in range(10_000):
            n = rng.randint(2, 8)
            size = rng.randint(1, 4096)
            stripe = [rng.randbytes(size) for _ in range(n)]
            p = compute_parity(stripe)
            for i in range(n):
                assert reconstruct(stripe[:i] + stripe[i + 1 :], p, n) == stripe[i]
                checks += 1
        elapsed = time.perf_counter() - t0
        c["detail"] = f"{checks} reconstructions byte-exact in {elapsed:.1f}s"
        assert elapsed < 30


def test_c03_incremental_parity():
    with criterion(3, "incremental parity == full recompute over 1,000 updates") as c:
        rng = random.Random(3)
        t0 = time.perf_counter()
        for _ in range(1000):
            n = rng.randint(2, 8)
            size = rng.randint(1, 4096)
            stripe = [rng.randbytes(size) for _ in range(n)]
            old_p = compute_parity(stripe)
            i = rng.randrange(n)
            new = rng.randbytes(size)
            inc = incremental_parity(stripe[i], new, old_p)
            stripe[i] = new
            assert inc == compute_parity(stripe)
        elapsed = time.perf_counter() - t0
        c["detail"] = f"1000 updates byte-exact in {elapsed:.2f}s"
        assert elapsed < 10


def test_c04_healthy_read_purity(tmp_path):
    with criterion(4, "64 MiB healthy read workload leaves parity read counters at 0") as c:
        array = make(tmp_path, su=65536, cap=8192 * 2)  # 64 MiB volume
        array.write(0, random.Random(4).randbytes(array.geometry.volume_bytes))
        before = [d.stats().read_ops for d in array.disks]
        seq = run_workload(array, WorkloadSpec("sequential-read", 256 * 1024, 32 * MiB))
        rnd = run_workload(array, WorkloadSpec("random-read", 64 * 1024, 32 * MiB, seed=4))
        parity_delta = sum(array.disks[s].stats().read_ops - before[s] for s in range(4, 5))
        moved = seq.bytes + rnd.bytes
        c["detail"] = f"{moved // MiB} MiB read, parity read ops delta {parity_delta}"
        assert moved == 64 * MiB
        assert parity_delta == 0
        assert seq.domain_stats(Domain.PARITY).read_ops == rnd.domain_stats(Domain.PARITY).read_ops == 0


def test_c05_recovery(tmp_path):
    with criterion(5, "single faults on 100 stripes recovered exactly, double faults 100/100 unrecoverable") as c:
        array = make(tmp_path, cap=8 * 220)
        g = array.geometry
        rng = random.Random(5)
        data = rng.randbytes(g.volume_bytes)
        array.write(0, data)
        shadow = ShadowVolume(array, data)
        stripes = rng.sample(range(g.stripes), 100)
        for s in stripes:
            d = rng.randrange(g.n_data)
            array.disks[d].inject_fault(FaultSpec("unreadable", array._data_sector(d, s) + rng.randrange(g.unit_sectors)))
        got = array.read(0, g.volume_sectors)
        assert shadow.verify(got) == []
        events = array.recoveries
        exact = [e for e in events if e.data_reads == g.n_data - 1 and e.parity_reads == 1]
        assert sorted(e.stripe for e in events) == sorted(stripes)
        assert len(exact) == 100
        unrecoverable = 0
        for s in stripes:
            a, b = rng.sample(range(g.n_data), 2)
            for d in (a, b):
                array.disks[d].inject_fault(FaultSpec("unreadable", array._data_sector(d, s)))
            try:
                array.read(s * g.stripe_sectors, g.stripe_sectors)
            except UnrecoverableReadError as e:
                unrecoverable += e.stripe == s
        c["detail"] = f"{len(exact)}/100 recoveries with {g.n_data - 1}+1 reads, {unrecoverable}/100 double faults unrecoverable"
        assert unrecoverable == 100


def test_c06_rmw_budget(tmp_path):
    with criterion(6, "single-block unaligned writes cost exactly 2 reads + 2 writes") as c:
        array = make(tmp_path)
        g = array.geometry
        rng = random.Random(6)
        array.write(0, rng.randbytes(g.volume_bytes))
        bad = 0
        for _ in range(500):
            unit = rng.randrange(g.stripes * g.n_data)
            off = rng.randrange(1, g.unit_sectors)  # never unit aligned
            count = rng.randint(1, g.unit_sectors - off)
            before = [(d.stats("io").read_ops, d.stats("io").write_ops) for d in array.disks]
            array.write(unit * g.unit_sectors + off, rng.randbytes(count * 512))
            r = sum(d.stats("io").read_ops - b[0] for d, b in zip(array.disks, before))
            w = sum(d.stats("io").write_ops - b[1] for d, b in zip(array.disks, before))
            bad += (r, w) != (2, 2)
        c["detail"] = f"{500 - bad}/500 writes at 2R+2W (journal I/O excluded)"
        assert bad == 0
        assert array.scrub().clean


def _throughput(tmp_path, name, n, m, pattern, qd=1):
    array = make(tmp_path / name, n=n, m=m, su=65536, cap=32768, journal=16 * MiB)
    io = 4 * 65536 if pattern == "sequential-read" else n * 65536
    if pattern == "sequential-read":
        array.write(0, bytes(array.geometry.volume_bytes))
    metrics = run_workload(array, WorkloadSpec(pattern, io, 64 * MiB, queue_depth=qd))
    return metrics.throughput


def test_c07_throughput(tmp_path):
    with criterion(7, "throughput: seq read 4xR, 4+1 write 1xW, 4+2 write 2xW, each +-10%") as c:
        R, W = UNIFORM.seq_read_bw, UNIFORM.seq_write_bw
        t0 = time.perf_counter()
        read41 = _throughput(tmp_path, "r41", 4, 1, "sequential-read") / R
        write41 = _throughput(tmp_path, "w41", 4, 1, "sequential-write-fullstripe", qd=8) / W
        write42 = _throughput(tmp_path, "w42", 4, 2, "sequential-write-fullstripe", qd=8) / W
        elapsed = time.perf_counter() - t0
        rows = [("read 4+1", read41, 4.0), ("write 4+1", write41, 1.0), ("write 4+2", write42, 2.0)]
        c["detail"] = "; ".join(
            f"{name} {got:.3f}x (target {want:g}x) {'ok' if abs(got - want) <= 0.1 * want else 'MISS'}"
            for name, got, want in rows
        )
        for name, got, want in rows:
            assert abs(got - want) <= 0.1 * want, c["detail"]
        assert elapsed < 30


def test_c08_degraded_latency(tmp_path):
    with criterion(8, "degraded read latency ratio in [1, N] and > 1") as c:
        array = make(tmp_path, su=65536, cap=128 * 16)
        stripe = 7
        array.disks[2].inject_fault(FaultSpec("unreadable", array._data_sector(2, stripe)))
        ratio = degraded_latency_probe(array, stripe)
        n = array.geometry.n_data
        c["detail"] = f"N={n}, ratio {ratio:.3f}"
        assert 1 < ratio <= n


def _crash_once(array, point, lba, payload):
    def hook(p):
        if p == point:
            raise SimulatedCrash(p)

    array.crash_hook = hook
    try:
        array.write(lba, payload)
        return False
    except SimulatedCrash:
        return True
    finally:
        array.crash_hook = None


def test_c09_write_hole_sweep(tmp_path):
    with criterion(9, "crash at every write-pipeline point over 50+ stripes, replay leaves old-or-new and 0 inconsistencies") as c:
        array = make(tmp_path, cap=8 * 64)
        g = array.geometry
        rng = random.Random(9)
        base = rng.randbytes(g.volume_bytes)
        array.write(0, base)
        shadow = ShadowVolume(array, base)
        full_points = ["before-intent", "after-intent", "after-commit",
                       *(f"after-data-{d}" for d in range(g.n_data)), "after-parity"]
        cases = passed = 0
        stripes = range(0, 56)
        for s in stripes:
            d = rng.randrange(g.n_data)
            small = [p for p in full_points if not p.startswith("after-data-") or p == f"after-data-{d}"]
            plans = [(p, s * g.stripe_sectors, g.stripe_sectors) for p in full_points]
            plans += [(p, s * g.stripe_sectors + d * g.unit_sectors + 3, 2) for p in small]
            for point, lba, count in plans:
                payload = rng.randbytes(count * 512)
                assert _crash_once(array, point, lba, payload), point
                cases += 1
                shadow.uncertain_write(lba, payload)
                array = Raid0eArray.open(array.disks, replay=False)
                array.journal_replay()
                ok = array.scrub().clean and shadow.verify(array.read(0, g.volume_sectors)) == []
                passed += ok
        c["detail"] = f"{passed}/{cases} crash cases over {len(stripes)} stripes"
        assert passed == cases


def test_c10_state_machine(tmp_path):
    with criterion(10, "parity loss, degraded, rebuild and offline transitions") as c:
        array = make(tmp_path)
        g = array.geometry
        data = random.Random(10).randbytes(g.volume_bytes)
        array.write(0, data)
        steps = []
        array.fail_disk(4)
        steps.append(array.array_state().mode is ArrayMode.REDUNDANCY_LOST)
        steps.append(array.read(0, g.volume_sectors) == data)
        array.restore_disk(4)  # parity untouched meanwhile, so it is still current
        array.fail_disk(1)
        steps.append(array.array_state().mode is ArrayMode.DEGRADED)
        steps.append(array.read(0, g.volume_sectors) == data)
        old = array.disks[1]
        spare = VirtualDisk(tmp_path / "spare.img", old.capacity, 512, old.latency, old.clock)
        report = array.rebuild(1, spare)
        steps.append(report.lost == [] and array.array_state().mode is ArrayMode.HEALTHY)
        steps.append(array.read(0, g.volume_sectors) == data)
        array.fail_disk(0)
        array.fail_disk(2)
        steps.append(array.array_state().mode is ArrayMode.OFFLINE)
        names = ["redundancy-lost", "reads intact", "degraded", "degraded reads exact",
                 "rebuild healthy", "post-rebuild compare", "offline"]
        c["detail"] = ", ".join(f"{n} {'ok' if s else 'FAIL'}" for n, s in zip(names, steps))
        assert all(steps)


if __name__ == "__main__":
    code = pytest.main([__file__, "-q", "-p", "no:cacheprovider"])
    sys.exit(code)
