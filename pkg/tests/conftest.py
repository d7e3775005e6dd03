import pytest

from raid0e.engine import Raid0eArray, make_disks
from raid0e.geometry import ArrayGeometry
from raid0e.vdisk import LatencyModel

SMALL_JOURNAL = 256 * 1024


def build_array(path, n=4, m=1, stripe_unit=4096, disk_capacity=256, journal=SMALL_JOURNAL,
                latency=None, **policy):
    geom = ArrayGeometry(n, m, stripe_unit, 512, disk_capacity)
    disks = make_disks(path, geom, journal, latency or LatencyModel())
    return Raid0eArray.create(geom, disks, journal_size=journal, **policy)


@pytest.fixture
def array_factory(tmp_path):
    made = []

    def make(name="a", **kw):
        array = build_array(tmp_path / name, **kw)
        made.append(array)
        return array

    yield make
    for a in made:
        for d in a.disks:
            d.close()


@pytest.fixture
def array(array_factory):
    return array_factory()


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        terminalreporter.write_line(RESULTS[n])
