"""Reactive failover: pick variants and servers for apps that lost every replica.

The planner sizes each app's backup to the ratio of free memory to what the
affected apps would need at full size, packs them worst-fit (most free memory
first) stepping down to smaller variants when nothing fits, then spends any
leftover room on each chosen server upgrading to more accurate variants.
Cold loads then run smallest-first: the app is back as soon as its smallest
variant is up, and the selected variant replaces it in the background.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from . import kernels
from .catalog import ModelFamily, ModelVariant
from .cluster import EPS, Application, ClusterState, Resources

INF_RATIO = math.inf


@dataclass
class FailoverRequest:
    affected_apps: list[Application]
    available_servers: list[str]
    state: ClusterState
    site_independent: bool = False
    free: Mapping[str, Resources] | None = None  # overrides the servers' own free capacity


@dataclass(frozen=True)
class LoadStep:
    variant: ModelVariant
    server_id: str


@dataclass
class FailoverDecision:
    selection: dict[str, ModelVariant] = field(default_factory=dict)
    placement: dict[str, str] = field(default_factory=dict)
    schedule: dict[str, list[LoadStep]] = field(default_factory=dict)
    unrecovered: list[str] = field(default_factory=list)
    delta: float = INF_RATIO
    order: list[str] = field(default_factory=list)

    def objective(self, apps: Mapping[str, Application]) -> float:
        return sum(apps[a].rate * v.norm_accuracy for a, v in self.selection.items())


def footprint(variant: ModelVariant, smallest: ModelVariant, progressive: bool) -> float:
    """Memory an app holds on its backup server while its schedule runs."""
    if progressive and variant.variant_id != smallest.variant_id:
        return variant.mem_demand + smallest.mem_demand
    return variant.mem_demand


def _free_map(request: FailoverRequest) -> dict[str, Resources]:
    st = request.state
    if request.free is not None:
        return {s: request.free[s] for s in request.available_servers}
    return {s: st.servers[s].free() for s in request.available_servers}


def demand_ratio(request: FailoverRequest) -> float:
    """Free memory over the memory the affected apps' full-size models need."""
    demand = sum(a.primary_variant.mem_demand for a in request.affected_apps)
    if demand <= 0:
        return INF_RATIO
    free = sum(max(f.mem, 0.0) for f in _free_map(request).values())
    return free / demand


def match_variant(family: ModelFamily | Sequence[ModelVariant], delta: float) -> ModelVariant:
    """Variant whose memory is closest to ``delta`` times the full-size model's.

    Variants must be in ascending memory order; the last one is full size.
    Ties go to the more accurate variant.
    """
    variants = family.variants if isinstance(family, ModelFamily) else tuple(family)
    if not variants:
        raise ValueError("empty variant list")
    full = variants[-1]
    if delta >= 1.0:
        return full
    target = delta * full.mem_demand
    return min(variants, key=lambda v: (abs(v.mem_demand - target), -v.norm_accuracy))


def failover_order(apps: Iterable[Application]) -> list[Application]:
    """Descending rate-weighted full-size accuracy, then app id."""
    return sorted(apps, key=lambda a: (-a.rate * a.primary_variant.norm_accuracy, a.app_id))


def pack(
    state: ClusterState,
    apps: Sequence[Application],
    servers: Sequence[str],
    variants_of: Callable[[Application], Sequence[ModelVariant]],
    start_index: Sequence[int],
    *,
    free: Mapping[str, Resources] | None = None,
    exclude_primary: bool = True,
    site_independent: bool = False,
    forbidden: Mapping[str, Iterable[str]] | None = None,
    progressive: bool = False,
    upgrade: bool = True,
    place_fn=None,
) -> list[tuple[int, str | None]]:
    """Run the worst-fit kernel over ``apps`` in the given order.

    Returns, per app, the chosen index into ``variants_of(app)`` and the
    server id (``(-1, None)`` when nothing fit). ``free`` defaults to each
    server's current free capacity and is not modified.
    """
    n = len(apps)
    if n == 0:
        return []
    servers = list(servers)
    nserv = len(servers)
    if nserv == 0:
        return [(-1, None)] * n
    place_fn = place_fn or kernels.place_worst_fit

    site_names = sorted(set(s.site_id for s in state.servers.values()))
    site_idx = {s: i for i, s in enumerate(site_names)}
    classes = sorted(set(state.servers[s].server_class for s in servers))
    cls_idx = {c: i for i, c in enumerate(classes)}
    srv_idx = {s: i for i, s in enumerate(servers)}

    cand = [tuple(variants_of(a)) for a in apps]
    V = max(len(c) for c in cand)
    C = len(classes)
    mem = np.zeros((n, V))
    cmp = np.zeros((n, V))
    acc = np.zeros((n, V))
    svc = np.zeros((n, V, C))
    nvar = np.zeros(n, dtype=np.int64)
    slo = np.empty(n)
    app_site = np.empty(n, dtype=np.int64)
    prim = np.full(n, -1, dtype=np.int64)
    for i, (a, vs) in enumerate(zip(apps, cand)):
        nvar[i] = len(vs)
        for j, v in enumerate(vs):
            mem[i, j] = v.mem_demand
            cmp[i, j] = v.compute_demand
            acc[i, j] = v.norm_accuracy
            for c, ci in cls_idx.items():
                svc[i, j, ci] = v.latency_on(c)
        slo[i] = a.slo_ms
        app_site[i] = site_idx[state.primary_site(a)]
        if a.primary_server in srv_idx:
            prim[i] = srv_idx[a.primary_server]
    start = np.asarray(start_index, dtype=np.int64)
    if np.any(start >= nvar) or np.any(start < 0):
        raise ValueError("start index outside variant list")

    server_site = np.array([site_idx[state.servers[s].site_id] for s in servers], dtype=np.int64)
    server_class = np.array([cls_idx[state.servers[s].server_class] for s in servers], dtype=np.int64)
    forbid = np.zeros((n, nserv), dtype=np.uint8)
    if exclude_primary:
        rows = np.nonzero(prim >= 0)[0]
        forbid[rows, prim[rows]] = 1
    if site_independent:
        forbid |= (app_site[:, None] == server_site[None, :]).astype(np.uint8)
    if forbidden:
        for i, a in enumerate(apps):
            for s in forbidden.get(a.app_id, ()):
                if s in srv_idx:
                    forbid[i, srv_idx[s]] = 1

    net = np.zeros((len(site_names), len(site_names)))
    for a_name, ai in site_idx.items():
        for b_name, bi in site_idx.items():
            net[ai, bi] = state.network.latency(a_name, b_name)

    if free is None:
        free = {s: state.servers[s].free() for s in servers}
    free_mem = np.array([free[s].mem for s in servers], dtype=np.float64)
    free_cmp = np.array([free[s].compute for s in servers], dtype=np.float64)

    out_var, out_srv = place_fn(
        np.arange(n, dtype=np.int64),
        start,
        nvar,
        mem,
        cmp,
        acc,
        svc,
        slo,
        app_site,
        forbid,
        server_class,
        server_site,
        net,
        free_mem,
        free_cmp,
        progressive,
        upgrade,
    )
    return [
        (int(j), servers[int(k)] if k >= 0 else None) for j, k in zip(out_var.tolist(), out_srv.tolist())
    ]


def plan_failover(
    request: FailoverRequest,
    progressive: bool = True,
    upgrade: bool = True,
    place_fn=None,
) -> FailoverDecision:
    """Variant selection and placement for apps with no live replica left.

    ``progressive`` reserves room for the smallest variant next to the
    selected one so the smallest-first schedule can run on the same server.
    """
    st = request.state
    apps = failover_order(request.affected_apps)
    delta = demand_ratio(request)
    cands = {a.app_id: st.candidates(a) for a in apps}
    start = []
    for a in apps:
        vs = cands[a.app_id]
        m = match_variant(vs, delta)
        start.append(vs.index(m))
    free = _free_map(request)
    placed = pack(
        st,
        apps,
        request.available_servers,
        lambda a: cands[a.app_id],
        start,
        free=free,
        site_independent=request.site_independent,
        progressive=progressive,
        upgrade=upgrade,
        place_fn=place_fn,
    )
    decision = FailoverDecision(delta=delta, order=[a.app_id for a in apps])
    for a, (j, srv) in zip(apps, placed):
        if srv is None:
            decision.unrecovered.append(a.app_id)
            continue
        decision.selection[a.app_id] = cands[a.app_id][j]
        decision.placement[a.app_id] = srv
    return progressive_schedule(decision, st, free=free) if progressive else direct_schedule(decision)


def direct_schedule(decision: FailoverDecision) -> FailoverDecision:
    """One load per app: the selected variant straight away."""
    decision.schedule = {
        a: [LoadStep(v, decision.placement[a])] for a, v in decision.selection.items()
    }
    return decision


def progressive_schedule(
    decision: FailoverDecision,
    state: ClusterState,
    free: Mapping[str, Resources] | None = None,
) -> FailoverDecision:
    """Smallest variant first, then the selected one; both resident during the switch.

    Apps whose server cannot hold both variants at once are downgraded to the
    largest variant that can co-reside with the smallest, or to the smallest.
    """
    if free is None:
        free = {s: state.servers[s].free() for s in set(decision.placement.values())}
    residual = {s: free[s].mem for s in set(decision.placement.values())}
    by_server: dict[str, list[str]] = {}
    for app_id in decision.order or sorted(decision.placement):
        if app_id in decision.placement:
            by_server.setdefault(decision.placement[app_id], []).append(app_id)
    for srv, app_ids in by_server.items():
        for app_id in app_ids:
            smallest = state.candidates(state.apps[app_id])[0]
            residual[srv] -= footprint(decision.selection[app_id], smallest, True)
        for app_id in reversed(app_ids):
            if residual[srv] >= -EPS:
                break
            app = state.apps[app_id]
            cands = state.candidates(app)
            smallest = cands[0]
            cur = decision.selection[app_id]
            residual[srv] += footprint(cur, smallest, True)
            pick = smallest
            for v in reversed(cands):
                if v.norm_accuracy > cur.norm_accuracy or v.mem_demand >= cur.mem_demand:
                    continue
                if footprint(v, smallest, True) <= residual[srv] + EPS:
                    pick = v
                    break
            decision.selection[app_id] = pick
            residual[srv] -= footprint(pick, smallest, True)
    schedule = {}
    for app_id, v in decision.selection.items():
        srv = decision.placement[app_id]
        smallest = state.candidates(state.apps[app_id])[0]
        steps = [LoadStep(smallest, srv)]
        if v.variant_id != smallest.variant_id:
            steps.append(LoadStep(v, srv))
        schedule[app_id] = steps
    decision.schedule = schedule
    return decision
