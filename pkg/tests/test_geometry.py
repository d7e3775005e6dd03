from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from raid0e.errors import AddressError, ConfigError
from raid0e.geometry import (
    ArrayGeometry,
    Domain,
    capacity_efficiency,
    map_lba,
    parity_location,
    stripe_members,
)


def enumerate_layout(geom):
    """Deal every volume sector out unit by unit, the slow obvious way."""
    placement = {}
    lba = 0
    per_disk_next = [0] * geom.n_data
    disk = 0
    while lba < geom.volume_sectors:
        for i in range(geom.unit_sectors):
            placement[lba] = (disk, (per_disk_next[disk] + i) * geom.sector_size)
            lba += 1
        per_disk_next[disk] += geom.unit_sectors
        disk = (disk + 1) % geom.n_data
    return placement


geometries = st.builds(
    lambda n, m, units, upd: ArrayGeometry(n, m, units * 512, 512, upd * units),
    st.integers(2, 8),
    st.integers(1, 3),
    st.integers(1, 8),
    st.integers(1, 12),
)


@pytest.mark.parametrize("n,m,su", [(4, 1, 4096), (3, 2, 1024), (2, 1, 512), (5, 3, 2048)])
def test_map_lba_matches_enumeration(n, m, su):
    geom = ArrayGeometry(n, m, su, 512, 16 * su // 512)
    oracle = enumerate_layout(geom)
    for lba, (disk, offset) in oracle.items():
        loc = map_lba(lba, geom)
        assert (loc.disk_index, loc.offset) == (disk, offset)
        assert loc.domain is Domain.DATA
        assert loc.stripe == offset // su


def test_frozen_mapping_values():
    # 4+1, 64 KiB units: 128 sectors per unit, 512 per stripe
    geom = ArrayGeometry(4, 1, 65536, 512, 128 * 10)
    loc = map_lba(0, geom)
    assert (loc.stripe, loc.disk_index, loc.offset) == (0, 0, 0)
    loc = map_lba(1000, geom)
    assert (loc.stripe, loc.disk_index, loc.offset) == (1, 3, 65536 + (1000 - 512 - 384) * 512)
    loc = map_lba(129, geom)
    assert (loc.stripe, loc.disk_index, loc.offset) == (0, 1, 512)
    assert parity_location(7, geom).offset == 7 * 65536


@given(geometries)
def test_mapping_is_a_bijection(geom):
    seen = set()
    for lba in range(geom.volume_sectors):
        loc = map_lba(lba, geom)
        key = (loc.disk_index, loc.offset)
        assert key not in seen
        seen.add(key)
        assert 0 <= loc.offset < geom.disk_capacity * geom.sector_size
    # every sector of every usable unit is hit exactly once
    assert len(seen) == geom.n_data * geom.stripes * geom.unit_sectors


@given(geometries)
def test_parity_locations_disjoint_and_striped(geom):
    seen = set()
    for s in range(geom.stripes):
        p = parity_location(s, geom)
        assert p.domain is Domain.PARITY
        assert p.disk_index == s % geom.m_parity
        assert (p.disk_index, p.offset) not in seen
        seen.add((p.disk_index, p.offset))
        assert p.offset + geom.stripe_unit <= geom.disk_capacity * geom.sector_size
    per_disk = [sum(1 for d, _ in seen if d == j) for j in range(geom.m_parity)]
    assert max(per_disk) - min(per_disk) <= 1


@given(geometries)
def test_stripe_members_share_offset(geom):
    for s in range(geom.stripes):
        members = stripe_members(s, geom)
        assert len(members) == geom.n_data + 1
        assert {m.offset for m in members[:-1]} == {s * geom.stripe_unit}
        assert [m.disk_index for m in members[:-1]] == list(range(geom.n_data))
        assert members[-1] == parity_location(s, geom)


@pytest.mark.parametrize(
    "n,expected,pct",
    [(2, Fraction(2, 3), 66.7), (3, Fraction(3, 4), 75.0), (4, Fraction(4, 5), 80.0),
     (8, Fraction(8, 9), 88.9), (16, Fraction(16, 17), 94.1)],
)
def test_capacity_efficiency_table(n, expected, pct):
    eff = capacity_efficiency(ArrayGeometry(n, 1, 4096, 512, 8))
    assert eff == expected
    assert round(float(eff) * 100, 1) == pct


def test_efficiency_with_more_parity():
    assert capacity_efficiency(ArrayGeometry(4, 2, 4096, 512, 8)) == Fraction(2, 3)


@pytest.mark.parametrize(
    "kw",
    [dict(n_data=1), dict(n_data=0), dict(m_parity=0), dict(stripe_unit=1000),
     dict(stripe_unit=0), dict(disk_capacity=4)],
)
def test_invalid_geometry(kw):
    args = dict(n_data=4, m_parity=1, stripe_unit=4096, sector_size=512, disk_capacity=64)
    args.update(kw)
    with pytest.raises(ConfigError):
        ArrayGeometry(**args)


def test_out_of_range():
    geom = ArrayGeometry(4, 1, 4096, 512, 64)
    with pytest.raises(AddressError):
        map_lba(geom.volume_sectors, geom)
    with pytest.raises(AddressError):
        map_lba(-1, geom)
    with pytest.raises(AddressError):
        parity_location(geom.stripes, geom)
    with pytest.raises(AddressError):
        geom.role(5)


def test_trailing_partial_unit_unused():
    geom = ArrayGeometry(3, 1, 4096, 512, 8 * 5 + 3)
    assert geom.stripes == 5
    assert geom.volume_sectors == 5 * 3 * 8


def test_slots_and_roles():
    geom = ArrayGeometry(4, 2, 4096, 512, 64)
    assert [geom.role(s) for s in range(6)] == [
        (Domain.DATA, 0), (Domain.DATA, 1), (Domain.DATA, 2), (Domain.DATA, 3),
        (Domain.PARITY, 0), (Domain.PARITY, 1),
    ]
    assert all(geom.slot(*geom.role(s)) == s for s in range(6))
