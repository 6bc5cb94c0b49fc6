import pytest

from edgefailover.catalog import Catalog, build_family
from edgefailover.cluster import Application, ClusterState, Resources, Server
from edgefailover.scenario import Scenario

GIB = 1024.0


def variant_rows(prefix, mems, accs, cmp=0.01, lat=5.0):
    return [
        {
            "variant_id": f"{prefix}{i}",
            "raw_accuracy": a,
            "mem_demand_mib": float(m),
            "compute_fraction": cmp,
            "service_latency_ms": {"default": lat},
        }
        for i, (m, a) in enumerate(zip(mems, accs))
    ]


@pytest.fixture
def two_size_catalog():
    """Families "x" and "y", each with a 30 MiB and a 100 MiB variant."""
    return Catalog(
        [
            build_family("x", variant_rows("x", [30, 100], [0.6, 0.8])),
            build_family("y", variant_rows("y", [30, 100], [0.5, 0.9])),
        ]
    )


def make_state(catalog, servers, apps):
    """servers: [(id, site, mem MiB)], apps: [(id, family, variant id, primary server)]."""
    srv = [Server(sid, site, Resources(mem, 1.0)) for sid, site, mem in servers]
    state = ClusterState(srv, [], catalog)
    placed = []
    for app_id, fam, vid, host in apps:
        v = catalog.variant(vid)
        app = Application(app_id, fam, v, host)
        if host is not None:
            state.servers[host].load(app_id, v, "primary")
        placed.append(app)
    state.apps = {a.app_id: a for a in placed}
    return state


def single_app_scenario(
    variant="convnext_large",
    crash_ms=45.0,
    k_fraction=1.0,
    progressive=True,
    restores=(),
    timings=None,
    horizon_ms=10_000.0,
):
    """One convnext app on server a (site x) with a roomy spare b (site y)."""
    d = {
        "schema_version": 1,
        "name": "single",
        "cluster": {
            "servers": [
                {"server_id": "a", "site_id": "x", "mem_gib": 16},
                {"server_id": "b", "site_id": "y", "mem_gib": 16},
            ],
            "apps": [{"app_id": "app", "family_id": "convnext", "primary_variant": variant, "primary_server": "a"}],
        },
        "policy": {"k_fraction": k_fraction, "progressive": progressive},
        "headroom": None,
        "injections": [{"time_ms": crash_ms, "targets": ["a"]}],
        "restores": [{"time_ms": t, "targets": ["a"]} for t in restores],
        "horizon_ms": horizon_ms,
    }
    if timings:
        d["timings"] = timings
    return Scenario.from_dict(d)


@pytest.fixture
def single_app():
    return single_app_scenario
