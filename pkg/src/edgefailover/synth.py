"""Seeded synthetic catalogs and clusters for property tests and benchmarks."""

from __future__ import annotations

import random

from .catalog import Catalog, build_family
from .cluster import Application, ClusterState, NetworkModel, Resources, Server, place_primaries


def synth_catalog(
    rng: random.Random,
    n_families: int = 3,
    n_variants: int = 3,
    mem_range: tuple[float, float] = (10.0, 1000.0),
    monotone: bool = True,
    server_classes: tuple[str, ...] = ("default",),
) -> Catalog:
    """Families of ``n_variants`` variants with distinct memory sizes.

    With ``monotone`` accuracy grows with size; otherwise it is random, which
    exercises code paths that must not assume bigger means better.
    """
    fams = []
    for f in range(n_families):
        mems = sorted(rng.sample(range(int(mem_range[0]), int(mem_range[1])), n_variants))
        accs = sorted(rng.uniform(0.3, 0.95) for _ in range(n_variants))
        if not monotone:
            rng.shuffle(accs)
        rows = []
        for j, (m, a) in enumerate(zip(mems, accs)):
            base = rng.uniform(2.0, 40.0)
            rows.append(
                {
                    "variant_id": f"f{f}v{j}",
                    "raw_accuracy": round(a, 4),
                    "mem_demand_mib": float(m),
                    "compute_fraction": round(rng.uniform(0.01, 0.3), 3),
                    "service_latency_ms": {c: round(base * (1 + i * 0.5), 3) for i, c in enumerate(server_classes)},
                }
            )
        fams.append(build_family(f"f{f}", rows))
    return Catalog(fams)


def synth_state(
    rng: random.Random,
    catalog: Catalog,
    n_apps: int,
    n_servers: int,
    n_sites: int = 1,
    slack: float = 1.5,
    critical_fraction: float = 1.0,
    slo_range: tuple[float, float] | None = None,
    rate_range: tuple[float, float] = (1.0, 1.0),
    server_classes: tuple[str, ...] = ("default",),
    network: NetworkModel | None = None,
) -> ClusterState:
    """Random apps with worst-fit primaries on servers of random size.

    Server memory is drawn so the cluster holds about ``slack`` times the
    primaries' total demand.
    """
    fams = list(catalog.families.values())
    specs = []
    for i in range(n_apps):
        fam = rng.choice(fams)
        pv = fam.variants[rng.randrange(len(fam.variants))]
        slo = rng.uniform(*slo_range) if slo_range else float("inf")
        specs.append((f"a{i:04d}", fam.family_id, pv, slo))
    total_mem = sum(pv.mem_demand for _, _, pv, _ in specs)
    total_cmp = sum(pv.compute_demand for _, _, pv, _ in specs)
    biggest = max((pv.mem_demand for _, _, pv, _ in specs), default=1.0)
    weights = [rng.uniform(0.5, 1.5) for _ in range(n_servers)]
    wsum = sum(weights)
    servers = []
    for k, w in enumerate(weights):
        mem = max(total_mem * slack * w / wsum, biggest * 1.05)
        cmp = max(total_cmp * slack * w / wsum, 1.0)
        servers.append(
            Server(
                f"s{k:03d}",
                f"site{k % max(n_sites, 1)}",
                Resources(round(mem, 3), round(cmp, 3)),
                server_class=server_classes[k % len(server_classes)],
            )
        )
    n_crit = round(critical_fraction * n_apps)
    crit = set(rng.sample(range(n_apps), n_crit))
    apps = [
        Application(
            app_id,
            fam_id,
            pv,
            critical=i in crit,
            rate=round(rng.uniform(*rate_range), 3),
            slo_ms=slo,
        )
        for i, (app_id, fam_id, pv, slo) in enumerate(specs)
    ]
    apps.sort(key=lambda a: (-a.primary_variant.mem_demand, a.app_id))
    return place_primaries(apps, servers, catalog, network=network)


def toy_instance(rng: random.Random, max_apps: int = 6, max_servers: int = 4, max_variants: int = 3):
    """Tiny random warm-placement instance: (state, free capacities).

    Free capacity per server is drawn independently so that capacity, not the
    primaries, is what makes the instance tight.
    """
    n_var = rng.randint(1, max_variants)
    cat = synth_catalog(rng, n_families=rng.randint(1, 2), n_variants=n_var, mem_range=(10, 200))
    n_servers = rng.randint(2, max_servers)
    state = synth_state(
        rng,
        cat,
        n_apps=rng.randint(1, max_apps),
        n_servers=n_servers,
        n_sites=rng.randint(1, n_servers),
        slack=3.0,
        slo_range=(10.0, 60.0),
        rate_range=(0.5, 2.0),
    )
    free = {
        s: Resources(round(rng.uniform(20, 400), 1), round(rng.uniform(0.1, 1.0), 3)) for s in sorted(state.alive)
    }
    return state, free


def failover_instance(
    rng: random.Random,
    n_apps: int,
    n_servers: int,
    n_variants: int = 4,
    n_families: int = 8,
    slack: float = 1.6,
):
    """Every app needs a backup at once; every server is available.

    Returns a progressive.FailoverRequest. Servers keep only the space their
    primaries leave, so the request is tight (delta below 1).
    """
    from .progressive import FailoverRequest

    cat = synth_catalog(rng, n_families=n_families, n_variants=n_variants, mem_range=(5.0, 900.0))
    state = synth_state(rng, cat, n_apps=n_apps, n_servers=n_servers, n_sites=max(1, n_servers // 10), slack=slack)
    return FailoverRequest(list(state.apps.values()), sorted(state.alive), state)
