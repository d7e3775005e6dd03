import random

import pytest

from raid0e.engine import Raid0eArray
from raid0e.errors import SimulatedCrash
from raid0e.harness import ShadowVolume


def crash_points(n_data):
    return ["before-intent", "after-intent", "after-commit",
            *(f"after-data-{d}" for d in range(n_data)), "after-parity"]


def crash(array, point, lba, payload):
    def hook(p):
        if p == point:
            raise SimulatedCrash(p)

    array.crash_hook = hook
    try:
        array.write(lba, payload)
    except SimulatedCrash:
        return True
    finally:
        array.crash_hook = None
    return False


@pytest.mark.parametrize("kind", ["full", "partial", "multi"])
def test_crash_sweep(array, kind):
    g = array.geometry
    rng = random.Random(kind)
    base = rng.randbytes(g.volume_bytes)
    array.write(0, base)
    shadow = ShadowVolume(array, base)
    hit = 0
    for stripe in range(0, g.stripes, 3):
        for point in crash_points(g.n_data):
            if kind == "full":
                lba, size = stripe * g.stripe_sectors, g.stripe_sectors
            elif kind == "partial":
                lba, size = stripe * g.stripe_sectors + rng.randrange(g.stripe_sectors), 1
            else:
                lba, size = stripe * g.stripe_sectors + 5, g.unit_sectors + 2
            payload = rng.randbytes(size * 512)
            touched = {(lba + i) % g.stripe_sectors // g.unit_sectors for i in range(size)}
            expected = point.startswith("after-data-") and int(point[11:]) not in touched
            if crash(array, point, lba, payload) == expected:
                continue  # that data disk takes no write in this update
            hit += 1
            shadow.uncertain_write(lba, payload)
            array = Raid0eArray.open(array.disks, replay=False)
            array.journal_replay()
            assert array.scrub().inconsistent == [], (stripe, point)
            assert shadow.verify(array.read(0, g.volume_sectors)) == [], (stripe, point)
    assert hit > 0


def test_replay_outcome_depends_on_commit(array):
    g = array.geometry
    old = bytes(g.stripe_bytes)
    new = b"\xab" * g.stripe_bytes
    crash(array, "after-intent", 0, new)
    array = Raid0eArray.open(array.disks)
    assert array.last_replay.discarded == 1 and array.last_replay.repaired == 0
    assert array.read(0, g.stripe_sectors) == old
    crash(array, "after-data-1", 0, new)
    array = Raid0eArray.open(array.disks)
    assert array.last_replay.repaired == 1
    assert array.read(0, g.stripe_sectors) == new


def test_crash_leaves_hole_without_replay(array):
    g = array.geometry
    crash(array, "after-data-0", 0, b"\x01" * g.stripe_bytes)
    array = Raid0eArray.open(array.disks, replay=False)
    assert array.scrub().inconsistent == [0]
    assert array.journal_replay().repaired == 1
    assert array.scrub().clean


def test_replay_is_idempotent(array):
    crash(array, "after-commit", 0, b"\x02" * 512)
    array = Raid0eArray.open(array.disks, replay=False)
    assert array.journal_replay().repaired == 1
    assert array.journal_replay().repaired == 0


def test_clean_close_replays_nothing(array):
    array.write(0, b"\x03" * 4096)
    array.write(100, b"\x04" * 512)
    array.close()
    again = Raid0eArray.open(array.disks)
    assert again.last_replay.repaired == 0 and again.last_replay.records == 0


def test_records_survive_log_wrap(array_factory):
    array = array_factory(journal=24 * 1024)
    g = array.geometry
    rng = random.Random(3)
    data = bytearray(g.volume_bytes)
    for _ in range(60):
        lba = rng.randrange(g.volume_sectors)
        array.write(lba, b"\x09" * 512)
        data[lba * 512 : lba * 512 + 512] = b"\x09" * 512
    crash(array, "after-data-0", 0, b"\x0a" * g.stripe_bytes)
    data[: g.stripe_bytes] = b"\x0a" * g.stripe_bytes
    array = Raid0eArray.open(array.disks)
    assert array.read(0, g.volume_sectors) == bytes(data)
    assert array.scrub().clean
