import pytest

from edgefailover.catalog import Catalog, build_family, default_catalog
from edgefailover.cluster import (
    Application,
    CapacityError,
    ClusterState,
    Resources,
    Server,
    SetupError,
    Tier,
    apply_headroom,
    place_primaries,
    usable_capacity,
)
from edgefailover.scenario import Scenario

from conftest import GIB, variant_rows


def gib_catalog(*sizes_gib):
    fams = [build_family(f"f{i}", variant_rows(f"f{i}v", [s * GIB], [0.7])) for i, s in enumerate(sizes_gib)]
    return Catalog(fams)


def test_worst_fit_alternates_between_equal_servers():
    cat = gib_catalog(4, 4)
    apps = [Application("a", "f0", cat.variant("f0v0")), Application("b", "f1", cat.variant("f1v0"))]
    servers = [Server("A", "s", Resources(16 * GIB, 1)), Server("B", "s", Resources(16 * GIB, 1))]
    st = place_primaries(apps, servers, cat)
    assert st.apps["a"].primary_server == "A"
    assert st.apps["b"].primary_server == "B"


def test_worst_fit_hand_trace():
    cat = gib_catalog(8, 4, 2)
    apps = [Application(f"a{i}", f"f{i}", cat.variant(f"f{i}v0")) for i in range(3)]
    servers = [Server("A", "s", Resources(16 * GIB, 1)), Server("B", "s", Resources(8 * GIB, 1))]
    st = place_primaries(apps, servers, cat)
    assert [st.apps[f"a{i}"].primary_server for i in range(3)] == ["A", "B", "A"]


def test_place_primaries_errors():
    cat = gib_catalog(8)
    app = Application("a", "f0", cat.variant("f0v0"))
    with pytest.raises(SetupError, match="no server has room"):
        place_primaries([app], [Server("A", "s", Resources(4 * GIB, 1))], cat)
    pinned = Application("a", "f0", cat.variant("f0v0"), primary_server="Z")
    with pytest.raises(SetupError, match="unknown primary"):
        place_primaries([pinned], [Server("A", "s", Resources(16 * GIB, 1))], cat)


def test_target_util_check():
    cat = gib_catalog(8)
    app = Application("a", "f0", cat.variant("f0v0"))
    place_primaries([app], [Server("A", "s", Resources(16 * GIB, 1))], cat, target_util=0.5)
    with pytest.raises(SetupError, match="not within"):
        place_primaries([app], [Server("A", "s", Resources(16 * GIB, 1))], cat, target_util=0.9)


def test_testbed_mix_utilization():
    st = Scenario.load("testbed6").state()
    assert len(st.apps) == 46
    assert len(st.servers) == 6
    assert len(st.sites) == 3
    util = st.utilization()
    assert 0.2 < util.mem < 0.6


@pytest.mark.parametrize("alpha, expected", [(0.0, 100.0), (1.0, 0.0), (0.1, 90.0)])
def test_usable_capacity(alpha, expected):
    st = ClusterState([Server("A", "s", Resources(100 * GIB, 1))], [], default_catalog())
    assert usable_capacity(st, alpha).mem == pytest.approx(expected * GIB)


def test_usable_capacity_64():
    servers = [Server(s, "x", Resources(32 * GIB, 1)) for s in "AB"]
    st = ClusterState(servers, [], default_catalog())
    assert usable_capacity(st, 0.1).mem == pytest.approx(57.6 * GIB)


def test_usable_capacity_range():
    st = ClusterState([Server("A", "s", Resources(GIB, 1))], [], default_catalog())
    with pytest.raises(ValueError):
        usable_capacity(st, 1.5)


def test_headroom_empty_cluster():
    servers = [Server(s, "x", Resources(16 * GIB, 1)) for s in "AB"]
    st = apply_headroom(ClusterState(servers, [], default_catalog()), 0.5)
    for s in st.servers.values():
        assert s.free().mem == pytest.approx(8 * GIB)


def test_headroom_16_gib():
    servers = [Server(s, "x", Resources(16 * GIB, 1)) for s in "ABC"]
    st = apply_headroom(ClusterState(servers, [], default_catalog()), 0.2)
    for s in st.servers.values():
        assert s.free().mem == pytest.approx(3.2 * GIB)
        assert s.physical.mem == 16 * GIB


def test_headroom_keeps_relative_spread():
    st = Scenario.load("testbed6").state()
    before = {k: s.free().mem for k, s in st.servers.items()}
    new = apply_headroom(st, 0.2)
    ratios = {k: new.servers[k].free().mem / before[k] for k in before}
    assert max(ratios.values()) == pytest.approx(min(ratios.values()))
    assert new.free_total().mem == pytest.approx(0.2 * 6 * 16 * GIB)
    for k, s in new.servers.items():
        assert s.used() == st.servers[k].used()


def test_headroom_too_large():
    st = Scenario.load("testbed6").state()
    with pytest.raises(SetupError):
        apply_headroom(st, 0.95)
    with pytest.raises(ValueError):
        apply_headroom(st, 0.0)


def test_server_capacity_enforced():
    cat = gib_catalog(8)
    s = Server("A", "x", Resources(10 * GIB, 1))
    s.load("a", cat.variant("f0v0"), Tier.PRIMARY)
    with pytest.raises(CapacityError):
        s.load("b", cat.variant("f0v0"), Tier.WARM)
    with pytest.raises(CapacityError, match="already loaded"):
        s.load("a", cat.variant("f0v0"), Tier.WARM)


def test_fail_and_conservation():
    st = Scenario.load("testbed6").state()
    lost = st.fail("s000")
    assert lost
    assert "s000" not in st.alive
    assert st.servers["s000"].used().mem == 0
    st.check_conservation()
    st.revive("s000")
    assert "s000" in st.alive


def test_candidates_capped_by_primary():
    cat = default_catalog()
    v = cat.variant("convnext_base")
    st = ClusterState([Server("A", "x", Resources(GIB, 1))], [], cat)
    app = Application("a", "convnext", v, "A")
    st.apps = {"a": app}
    assert [c.variant_id for c in st.candidates(app)] == ["convnext_tiny", "convnext_small", "convnext_base"]


def test_copy_is_isolated():
    st = Scenario.load("testbed6").state()
    cp = st.copy()
    cp.fail("s001")
    assert "s001" in st.alive
    assert st.servers["s001"].loaded
