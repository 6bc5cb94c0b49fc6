"""Warm-backup selection and placement for critical applications.

Every critical app gets a preloaded backup (or ``replicas_per_app`` of them)
on some server other than its primary. The solver maximizes the sum of
rate-weighted normalized accuracy of the chosen variants subject to

* per-server capacity, for memory and compute,
* a cluster-wide budget: warm backups may take at most ``1 - alpha`` of the
  total free capacity, the rest stays free for cold loads,
* primary separation (and, optionally, site separation),
* the app's latency bound.

The exact method is a depth-first branch and bound. Its bound is the LP
relaxation of the multiple-choice knapsack obtained by pooling all server
capacity, computed per resource; the minimum over resources is used.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .catalog import ModelVariant
from .cluster import EPS, Application, ClusterState, Resources, ZERO, demand_of
from .progressive import FailoverRequest, demand_ratio, match_variant, pack

# constraint names used in violation reports
CAPACITY = "capacity"
RESERVE = "reserve"
PRIMARY_SEPARATION = "primary_separation"
REPLICA_COUNT = "replica_count"
LATENCY = "latency"
SITE_SEPARATION = "site_separation"
VARIANT = "variant_family"
SERVER = "unknown_server"

_OBJ_TOL = 1e-12  # relative; objectives closer than this are ties
_MEM_TOL = 1e-7  # relative, for the memory tie-break


class CapacityPlanningError(Exception):
    """Instance exceeds the exact solver budget and fallback is disabled."""


@dataclass
class WarmPlacementProblem:
    critical_apps: list[Application]
    state: ClusterState
    servers: list[str]
    free: dict[str, Resources]
    alpha: float = 0.1
    site_independence: bool = False
    replicas_per_app: int = 1
    partial_k: bool = False
    exact_budget: int = 10**6
    node_limit: int = 200_000
    allow_fallback: bool = True

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.replicas_per_app < 1:
            raise ValueError("replicas_per_app must be at least 1")
        for a in self.critical_apps:
            if a.primary_server is None:
                raise ValueError(f"app {a.app_id} has no primary server")

    @classmethod
    def from_state(
        cls,
        state: ClusterState,
        alpha: float,
        critical: Iterable[Application] | None = None,
        **kwargs,
    ) -> "WarmPlacementProblem":
        apps = list(critical) if critical is not None else [a for a in state.apps.values() if a.critical]
        servers = sorted(state.alive)
        free = {s: state.servers[s].free() for s in servers}
        return cls(apps, state, servers, free, alpha, **kwargs)

    def variants(self, app: Application) -> tuple[ModelVariant, ...]:
        return self.state.candidates(app)

    def budget(self) -> Resources:
        total = ZERO
        for s in self.servers:
            total = total + self.free[s]
        return total.scale(1.0 - self.alpha)

    def size(self) -> int:
        nv = max((len(self.variants(a)) for a in self.critical_apps), default=0)
        return len(self.critical_apps) * nv * len(self.servers)

    def allowed(self, app: Application, server_id: str) -> bool:
        if server_id == app.primary_server:
            return False
        if self.site_independence and self.state.site_of(server_id) == self.state.primary_site(app):
            return False
        return True


def extend_site_independence(problem: WarmPlacementProblem) -> WarmPlacementProblem:
    """Same problem with primaries and backups forced into different sites."""
    return WarmPlacementProblem(
        critical_apps=list(problem.critical_apps),
        state=problem.state,
        servers=list(problem.servers),
        free=dict(problem.free),
        alpha=problem.alpha,
        site_independence=True,
        replicas_per_app=problem.replicas_per_app,
        partial_k=problem.partial_k,
        exact_budget=problem.exact_budget,
        node_limit=problem.node_limit,
        allow_fallback=problem.allow_fallback,
    )


@dataclass
class PlacementPlan:
    warm: dict[str, list[tuple[ModelVariant, str]]] = field(default_factory=dict)
    objective: float = 0.0
    feasible: bool = True
    optimal: bool = True
    method: str = "exact"
    reason: str | None = None
    unplaced: list[str] = field(default_factory=list)
    nodes: int = 0

    def total_demand(self) -> Resources:
        total = ZERO
        for reps in self.warm.values():
            for v, _ in reps:
                total = total + demand_of(v)
        return total

    def to_dict(self) -> dict:
        return {
            "feasible": self.feasible,
            "optimal": self.optimal,
            "method": self.method,
            "objective": self.objective,
            "reason": self.reason,
            "unplaced": list(self.unplaced),
            "warm": {
                a: [{"variant": v.variant_id, "server": s} for v, s in reps]
                for a, reps in sorted(self.warm.items())
            },
        }


@dataclass(frozen=True)
class Violation:
    constraint: str
    app_id: str | None
    server_id: str | None
    detail: str = ""


def validate_plan(plan: PlacementPlan, problem: WarmPlacementProblem) -> list[Violation]:
    """Every constraint the plan breaks; empty when it is a valid warm placement."""
    out: list[Violation] = []
    st = problem.state
    apps = {a.app_id: a for a in problem.critical_apps}
    used: dict[str, Resources] = {}
    total = ZERO
    for app_id, reps in plan.warm.items():
        app = apps.get(app_id) or st.apps.get(app_id)
        if app is None:
            out.append(Violation(VARIANT, app_id, None, "unknown application"))
            continue
        cands = {v.variant_id for v in problem.variants(app)}
        seen_servers: set[str] = set()
        seen_sites: set[str] = set()
        for v, k in reps:
            if v.variant_id not in cands:
                out.append(Violation(VARIANT, app_id, k, f"{v.variant_id} is not a candidate"))
            if k not in problem.free:
                out.append(Violation(SERVER, app_id, k, "server not available"))
                continue
            if k == app.primary_server:
                out.append(Violation(PRIMARY_SEPARATION, app_id, k, "backup on primary server"))
            site = st.site_of(k)
            if problem.site_independence and site == st.primary_site(app):
                out.append(Violation(SITE_SEPARATION, app_id, k, "backup in primary's site"))
            if k in seen_servers:
                out.append(Violation(REPLICA_COUNT, app_id, k, "two replicas on one server"))
            if problem.site_independence and site in seen_sites:
                out.append(Violation(SITE_SEPARATION, app_id, k, "two replicas in one site"))
            seen_servers.add(k)
            seen_sites.add(site)
            lat = st.latency(app, v, k)
            if lat > app.slo_ms + EPS:
                out.append(Violation(LATENCY, app_id, k, f"{lat:.3f} ms > {app.slo_ms} ms"))
            d = demand_of(v)
            used[k] = used.get(k, ZERO) + d
            total = total + d
    for k, u in sorted(used.items()):
        cap = problem.free.get(k)
        if cap is not None and not u.fits_in(cap):
            out.append(Violation(CAPACITY, None, k, f"uses {u}, free {cap}"))
    budget = problem.budget()
    if not total.fits_in(budget):
        out.append(Violation(RESERVE, None, None, f"warm total {total} exceeds budget {budget}"))
    if plan.feasible:
        skip = set(plan.unplaced) if problem.partial_k else set()
        for app in problem.critical_apps:
            if app.app_id in skip:
                continue
            n = len(plan.warm.get(app.app_id, ()))
            if n != problem.replicas_per_app:
                out.append(
                    Violation(REPLICA_COUNT, app.app_id, None, f"{n} replicas, need {problem.replicas_per_app}")
                )
    return out


# exact solver -----------------------------------------------------------------


class _Hull:
    """LP relaxation of a multiple-choice knapsack along one resource.

    Each item must take exactly one option. The relaxation starts every item
    at its lightest option and then buys hull increments in order of value per
    unit of resource.
    """

    def __init__(self, item_options: list[list[tuple[float, float]]]) -> None:
        n = len(item_options)
        self.base_v = [0.0] * n
        self.base_w = [0.0] * n
        segs: list[tuple[float, int, float, float]] = []
        for t, opts in enumerate(item_options):
            if not opts:
                self.base_v[t] = -math.inf
                self.base_w[t] = math.inf
                continue
            pts = sorted(opts, key=lambda p: (p[1], -p[0]))  # (value, weight) by weight
            lightest = pts[0]
            hull = [lightest]
            for v, w in pts[1:]:
                if v <= hull[-1][0] + 1e-15:
                    continue
                if w <= hull[-1][1]:
                    # same weight, higher value
                    hull[-1] = (v, w)
                    while len(hull) >= 2 and hull[-1][0] <= hull[-2][0]:
                        hull.pop(-2)
                    continue
                while len(hull) >= 2:
                    (v1, w1), (v2, w2) = hull[-2], hull[-1]
                    # drop hull[-1] if it lies under the chord hull[-2] -> (v, w)
                    if (v2 - v1) * (w - w1) <= (v - v1) * (w2 - w1):
                        hull.pop()
                    else:
                        break
                hull.append((v, w))
            self.base_v[t] = hull[0][0]
            self.base_w[t] = hull[0][1]
            for (v1, w1), (v2, w2) in zip(hull, hull[1:]):
                dv, dw = v2 - v1, w2 - w1
                eff = math.inf if dw <= 0 else dv / dw
                segs.append((eff, t, dv, dw))
        segs.sort(key=lambda s: (-s[0], s[1]))
        self.segs = segs
        self.suffix_v = [0.0] * (n + 1)
        self.suffix_w = [0.0] * (n + 1)
        for t in range(n - 1, -1, -1):
            self.suffix_v[t] = self.suffix_v[t + 1] + self.base_v[t]
            self.suffix_w[t] = self.suffix_w[t + 1] + self.base_w[t]

    def upper(self, t: int, cap: float) -> float:
        """Max relaxed value of items t.. within ``cap``; -inf if even the lightest overflow."""
        bw = self.suffix_w[t]
        if bw > cap + EPS:
            return -math.inf
        room = cap - bw
        val = self.suffix_v[t]
        for eff, item, dv, dw in self.segs:
            if item < t:
                continue
            if dw <= room:
                room -= dw
                val += dv
            else:
                val += eff * room
                break
        return val

    def min_weight(self, t: int, target: float) -> float:
        """Least relaxed weight of items t.. reaching ``target`` value; inf if unreachable."""
        val = self.suffix_v[t]
        w = self.suffix_w[t]
        if val >= target:
            return w
        for eff, item, dv, dw in self.segs:
            if item < t:
                continue
            if val + dv >= target:
                return w + (target - val) / eff if eff != math.inf else w
            val += dv
            w += dw
        return math.inf


@dataclass
class _Item:
    app: Application
    replica: int
    choices: list[tuple[float, float, float, int, ModelVariant]]  # value, mem, cmp, server idx, variant


def _order_apps(apps: Sequence[Application], problem: WarmPlacementProblem) -> list[Application]:
    def key(a: Application):
        best = max((v.norm_accuracy for v in problem.variants(a)), default=0.0)
        return (-a.rate * best, a.app_id)

    return sorted(apps, key=key)


def _diagnose(problem: WarmPlacementProblem, items: list[_Item]) -> str:
    st = problem.state
    R = problem.replicas_per_app
    for it in items:
        if it.choices and it.replica == 0:
            continue
        if it.choices:
            continue
        app = it.app
        allowed = [k for k in problem.servers if problem.allowed(app, k)]
        if not allowed:
            return f"{SITE_SEPARATION if problem.site_independence else PRIMARY_SEPARATION}: {app.app_id}"
        if not any(st.meets_slo(app, v, k) for v in problem.variants(app) for k in allowed):
            return f"{LATENCY}: {app.app_id}"
        return f"{CAPACITY}: {app.app_id}"
    if R > 1:
        for it in items:
            if it.replica == 0:
                app = it.app
                if problem.site_independence:
                    sites = {st.site_of(k) for k in problem.servers if problem.allowed(app, k)}
                    if len(sites) < R:
                        return f"{SITE_SEPARATION}: {app.app_id}"
                else:
                    if len({k for k in problem.servers if problem.allowed(app, k)}) < R:
                        return f"{PRIMARY_SEPARATION}: {app.app_id}"
    need = ZERO
    for it in items:
        lightest_m = min(c[1] for c in it.choices)
        lightest_c = min(c[2] for c in it.choices)
        need = need + Resources(lightest_m, lightest_c)
    if not need.fits_in(problem.budget()):
        return f"{RESERVE}: lightest backups need {need}, budget {problem.budget()}"
    return f"{CAPACITY}: no packing of the critical backups fits the servers"


def solve_warm(problem: WarmPlacementProblem) -> PlacementPlan:
    """Optimal warm placement, or the heuristic's when the instance is too large."""
    if not problem.critical_apps:
        return PlacementPlan(method="empty")
    if problem.size() > problem.exact_budget:
        if not problem.allow_fallback:
            raise CapacityPlanningError(
                f"{problem.size()} assignment tuples exceed the exact budget {problem.exact_budget}"
            )
        return heuristic_warm(problem)
    seed = heuristic_warm(problem)
    if seed.feasible and validate_plan(seed, problem):
        seed = PlacementPlan(feasible=False)
    plan = _branch_and_bound(problem, seed)
    if plan.feasible:
        # correctly rounded, so the value does not depend on search order
        rate = {a.app_id: a.rate for a in problem.critical_apps}
        plan.objective = math.fsum(rate[a] * v.norm_accuracy for a, reps in plan.warm.items() for v, _ in reps)
    return plan


def _branch_and_bound(problem: WarmPlacementProblem, seed: PlacementPlan) -> PlacementPlan:
    st = problem.state
    R = problem.replicas_per_app
    servers = problem.servers
    srv_index = {s: i for i, s in enumerate(servers)}
    free_m = [problem.free[s].mem for s in servers]
    free_c = [problem.free[s].compute for s in servers]
    srv_site = [st.site_of(s) for s in servers]
    budget = problem.budget()

    apps = _order_apps(problem.critical_apps, problem)
    items: list[_Item] = []
    for app in apps:
        choices = []
        allowed = [k for k in servers if problem.allowed(app, k)]
        for v in sorted(problem.variants(app), key=lambda v: (-v.norm_accuracy, v.mem_demand)):
            d = demand_of(v)
            for k in allowed:
                ki = srv_index[k]
                if d.mem > free_m[ki] + EPS or d.compute > free_c[ki] + EPS:
                    continue
                if not st.meets_slo(app, v, k):
                    continue
                choices.append((app.rate * v.norm_accuracy, d.mem, d.compute, ki, v))
        for r in range(R):
            items.append(_Item(app, r, choices))
    n = len(items)

    def options(dim: int) -> list[list[tuple[float, float]]]:
        out = []
        for it in items:
            opts = {(c[0], c[1 + dim]) for c in it.choices}
            if problem.partial_k:
                opts.add((0.0, 0.0))
            out.append(sorted(opts))
        return out

    hull_m = _Hull(options(0))
    hull_c = _Hull(options(1))
    skip_to = [n] * n  # for partial_k: index of the next app's first item
    for t in range(n - 1, -1, -1):
        if t + 1 < n and items[t + 1].app.app_id != items[t].app.app_id:
            skip_to[t] = t + 1
        elif t + 1 < n:
            skip_to[t] = skip_to[t + 1]

    if not problem.partial_k and any(not it.choices for it in items):
        return PlacementPlan(feasible=False, method="exact", reason=_diagnose(problem, items))

    have_seed = seed.feasible
    best_obj = seed.objective if have_seed else -math.inf
    best_mem = seed.total_demand().mem if have_seed else math.inf
    best_assign: list | None = None
    best_from_seed = have_seed

    used_m = [0.0] * len(servers)
    used_c = [0.0] * len(servers)
    assign: list = [None] * n
    tot = [0.0, 0.0, 0.0]  # value, mem, compute
    nodes = 0
    limit_hit = False

    def better(obj: float, mem: float) -> bool:
        tol = _OBJ_TOL * max(1.0, abs(best_obj)) if best_obj > -math.inf else 0.0
        if obj > best_obj + tol:
            return True
        if obj >= best_obj - tol:
            mtol = _MEM_TOL * max(1.0, best_mem) if best_mem < math.inf else 0.0
            if mem < best_mem - mtol:
                return True
            if best_from_seed and mem <= best_mem + mtol:
                return True
        return False

    def prune(t: int) -> bool:
        rem_m = min(budget.mem - tot[1], sum(max(f - u, 0.0) for f, u in zip(free_m, used_m)))
        rem_c = min(budget.compute - tot[2], sum(max(f - u, 0.0) for f, u in zip(free_c, used_c)))
        ub_m = hull_m.upper(t, rem_m)
        if ub_m == -math.inf:
            return True
        ub_c = hull_c.upper(t, rem_c)
        if ub_c == -math.inf:
            return True
        ub = tot[0] + min(ub_m, ub_c)
        if best_obj == -math.inf:
            return False
        tol = _OBJ_TOL * max(1.0, abs(best_obj))
        if ub < best_obj - tol:
            return True
        if ub <= best_obj + tol:
            need = best_obj - tol - tot[0]
            mem_lb = tot[1] + hull_m.min_weight(t, need)
            mtol = _MEM_TOL * max(1.0, best_mem)
            if best_from_seed:
                return mem_lb > best_mem + mtol
            return mem_lb >= best_mem - mtol
        return False

    def dfs(t: int) -> None:
        nonlocal nodes, best_obj, best_mem, best_assign, best_from_seed, limit_hit
        if limit_hit:
            return
        nodes += 1
        if nodes > problem.node_limit:
            limit_hit = True
            return
        if t == n:
            if better(tot[0], tot[1]):
                best_obj, best_mem = tot[0], tot[1]
                best_assign = list(assign)
                best_from_seed = False
            return
        if prune(t):
            return
        it = items[t]
        prev_k = -1
        taken_sites: set[str] = set()
        if it.replica > 0:
            for q in range(t - it.replica, t):
                a = assign[q]
                if a is not None:
                    prev_k = max(prev_k, a[0])
                    taken_sites.add(srv_site[a[0]])
        for value, m, c, k, v in it.choices:
            if k <= prev_k:
                continue
            if problem.site_independence and srv_site[k] in taken_sites:
                continue
            if used_m[k] + m > free_m[k] + EPS or used_c[k] + c > free_c[k] + EPS:
                continue
            if tot[1] + m > budget.mem + EPS or tot[2] + c > budget.compute + EPS:
                continue
            used_m[k] += m
            used_c[k] += c
            tot[0] += value
            tot[1] += m
            tot[2] += c
            assign[t] = (k, v)
            dfs(t + 1)
            assign[t] = None
            used_m[k] -= m
            used_c[k] -= c
            tot[0] -= value
            tot[1] -= m
            tot[2] -= c
            if limit_hit:
                return
        if problem.partial_k and it.replica == 0:
            dfs(skip_to[t])

    dfs(0)

    if best_assign is None:
        if have_seed:
            seed.optimal = not limit_hit
            seed.method = "exact-seeded"
            seed.nodes = nodes
            return seed
        if limit_hit:
            return PlacementPlan(
                feasible=False, optimal=False, method="exact", nodes=nodes,
                reason="node limit reached before any feasible placement was found",
            )
        return PlacementPlan(feasible=False, method="exact", nodes=nodes, reason=_diagnose(problem, items))

    plan = PlacementPlan(method="exact", optimal=not limit_hit, nodes=nodes)
    for it, a in zip(items, best_assign):
        if a is None:
            continue
        k, v = a
        plan.warm.setdefault(it.app.app_id, []).append((v, servers[k]))
    plan.objective = best_obj
    plan.unplaced = [a.app_id for a in apps if a.app_id not in plan.warm]
    return plan


# heuristic fallback -----------------------------------------------------------


def heuristic_warm(problem: WarmPlacementProblem) -> PlacementPlan:
    """Greedy warm placement restricted to the critical set.

    Runs the reactive planner once per replica round against server capacity
    scaled by ``1 - alpha``, which keeps the cluster-wide reserve intact.
    """
    st = problem.state
    apps = _order_apps(problem.critical_apps, problem)
    keep = 1.0 - problem.alpha
    free = {s: problem.free[s].scale(keep) for s in problem.servers}
    plan = PlacementPlan(method="heuristic", optimal=False)
    forbidden: dict[str, set[str]] = {a.app_id: set() for a in apps}
    for _ in range(problem.replicas_per_app):
        todo = [a for a in apps if a.app_id not in plan.unplaced]
        if not todo:
            break
        if problem.site_independence:
            for a in todo:
                used_sites = {st.site_of(s) for _, s in plan.warm.get(a.app_id, [])}
                forbidden[a.app_id] |= {s for s in problem.servers if st.site_of(s) in used_sites}
        delta = demand_ratio(FailoverRequest(todo, list(problem.servers), st, free=free))
        start = []
        for a in todo:
            vs = problem.variants(a)
            start.append(vs.index(match_variant(vs, delta)))
        placed = pack(
            st,
            todo,
            problem.servers,
            problem.variants,
            start,
            free=free,
            site_independent=problem.site_independence,
            forbidden=forbidden,
            progressive=False,
            upgrade=True,
        )
        for a, (j, srv) in zip(todo, placed):
            if srv is None:
                plan.unplaced.append(a.app_id)
                continue
            v = problem.variants(a)[j]
            plan.warm.setdefault(a.app_id, []).append((v, srv))
            forbidden[a.app_id].add(srv)
            free[srv] = free[srv] - demand_of(v)
    for a in plan.unplaced:
        plan.warm.pop(a, None)
    plan.objective = sum(
        st.apps[a].rate * v.norm_accuracy if a in st.apps else 0.0
        for a, reps in plan.warm.items()
        for v, _ in reps
    )
    if plan.unplaced and not problem.partial_k:
        plan.feasible = False
        plan.reason = f"{CAPACITY}: heuristic could not place {', '.join(plan.unplaced)}"
    return plan
