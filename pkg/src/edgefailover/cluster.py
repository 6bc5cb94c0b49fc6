"""Servers, sites, applications and capacity accounting."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

from .catalog import Catalog, ModelVariant

EPS = 1e-9


class SetupError(Exception):
    """Cluster cannot be built as requested (infeasible placement, bad headroom...)."""


class CapacityError(Exception):
    """A load would overrun a server's capacity."""


@dataclass(frozen=True, slots=True)
class Resources:
    mem: float = 0.0  # MiB
    compute: float = 0.0  # accelerator fraction

    def __add__(self, other: "Resources") -> "Resources":
        return Resources(self.mem + other.mem, self.compute + other.compute)

    def __sub__(self, other: "Resources") -> "Resources":
        return Resources(self.mem - other.mem, self.compute - other.compute)

    def scale(self, k: float) -> "Resources":
        return Resources(self.mem * k, self.compute * k)

    def fits_in(self, other: "Resources") -> bool:
        return self.mem <= other.mem + EPS and self.compute <= other.compute + EPS


ZERO = Resources()


def demand_of(variant: ModelVariant) -> Resources:
    return Resources(variant.mem_demand, variant.compute_demand)


class Tier(str, enum.Enum):
    PRIMARY = "primary"
    WARM = "warm"  # preloaded, passive
    ACTIVE = "active"  # backup currently serving traffic
    LOADING = "loading"  # memory held for an in-flight load


@dataclass
class Placement:
    app_id: str
    variant: ModelVariant
    tier: Tier
    demand: Resources


@dataclass
class Server:
    server_id: str
    site_id: str
    capacity: Resources
    server_class: str = "default"
    physical: Resources | None = None
    loaded: dict[tuple[str, str], Placement] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.physical is None:
            self.physical = self.capacity

    def used(self) -> Resources:
        mem = 0.0
        cmp = 0.0
        for p in self.loaded.values():
            mem += p.demand.mem
            cmp += p.demand.compute
        return Resources(mem, cmp)

    def free(self) -> Resources:
        return self.capacity - self.used()

    def can_fit(self, demand: Resources) -> bool:
        return demand.fits_in(self.free())

    def load(
        self,
        app_id: str,
        variant: ModelVariant,
        tier: Tier,
        demand: Resources | None = None,
    ) -> Placement:
        key = (app_id, variant.variant_id)
        if key in self.loaded:
            raise CapacityError(f"{app_id}/{variant.variant_id} already loaded on {self.server_id}")
        if demand is None:
            demand = demand_of(variant)
        if not self.can_fit(demand):
            raise CapacityError(
                f"{variant.variant_id} for {app_id} does not fit on {self.server_id} "
                f"(need {demand}, free {self.free()})"
            )
        p = Placement(app_id, variant, tier, demand)
        self.loaded[key] = p
        return p

    def unload(self, app_id: str, variant_id: str) -> Placement:
        return self.loaded.pop((app_id, variant_id))

    def entries_for(self, app_id: str) -> list[Placement]:
        return [p for (a, _), p in self.loaded.items() if a == app_id]

    def clone(self) -> "Server":
        return replace(self, loaded={k: replace(p) for k, p in self.loaded.items()})


@dataclass(frozen=True)
class Application:
    app_id: str
    family_id: str
    primary_variant: ModelVariant
    primary_server: str | None = None
    critical: bool = False
    rate: float = 1.0
    slo_ms: float = math.inf


@dataclass(frozen=True)
class NetworkModel:
    """Client-to-server latency: the client sits in its primary's site."""

    intra_site_ms: float = 1.0
    inter_site_ms: float = 5.0

    def latency(self, client_site: str, server_site: str) -> float:
        return self.intra_site_ms if client_site == server_site else self.inter_site_ms


class ClusterState:
    def __init__(
        self,
        servers: Iterable[Server],
        apps: Iterable[Application],
        catalog: Catalog,
        network: NetworkModel | None = None,
        alive: Iterable[str] | None = None,
    ) -> None:
        self.servers: dict[str, Server] = {s.server_id: s for s in sorted(servers, key=lambda s: s.server_id)}
        self.apps: dict[str, Application] = {a.app_id: a for a in apps}
        self.catalog = catalog
        self.network = network or NetworkModel()
        self.alive: set[str] = set(self.servers) if alive is None else set(alive)
        if not self.alive <= set(self.servers):
            raise SetupError("alive set names unknown servers")
        self._candidates: dict[str, tuple[ModelVariant, ...]] = {}

    @property
    def sites(self) -> dict[str, tuple[str, ...]]:
        out: dict[str, list[str]] = {}
        for s in self.servers.values():
            out.setdefault(s.site_id, []).append(s.server_id)
        return {k: tuple(v) for k, v in sorted(out.items())}

    def site_of(self, server_id: str) -> str:
        return self.servers[server_id].site_id

    def primary_site(self, app: Application) -> str:
        if app.primary_server is None:
            raise SetupError(f"app {app.app_id} has no primary server")
        return self.servers[app.primary_server].site_id

    def candidates(self, app: Application) -> tuple[ModelVariant, ...]:
        """Variants that may back up ``app``: its family, no bigger than the primary."""
        cached = self._candidates.get(app.app_id)
        if cached is None:
            fam = self.catalog.family(app.family_id)
            cached = tuple(
                v for v in fam.variants if v.mem_demand <= app.primary_variant.mem_demand
            )
            self._candidates[app.app_id] = cached
        return cached

    def latency(self, app: Application, variant: ModelVariant, server_id: str) -> float:
        srv = self.servers[server_id]
        return variant.latency_on(srv.server_class) + self.network.latency(
            self.primary_site(app), srv.site_id
        )

    def meets_slo(self, app: Application, variant: ModelVariant, server_id: str) -> bool:
        return self.latency(app, variant, server_id) <= app.slo_ms + EPS

    def free_total(self, alive_only: bool = True) -> Resources:
        total = ZERO
        for sid, s in self.servers.items():
            if alive_only and sid not in self.alive:
                continue
            total = total + s.free()
        return total

    def utilization(self) -> Resources:
        """Share of physical capacity held by loaded models, over alive servers."""
        used = ZERO
        cap = ZERO
        for sid in self.alive:
            s = self.servers[sid]
            used = used + s.used()
            cap = cap + s.physical
        return Resources(
            used.mem / cap.mem if cap.mem else 0.0,
            used.compute / cap.compute if cap.compute else 0.0,
        )

    def fail(self, server_id: str) -> list[Placement]:
        """Crash a server. Everything it held is gone; returns what was lost."""
        self.alive.discard(server_id)
        srv = self.servers[server_id]
        lost = list(srv.loaded.values())
        srv.loaded.clear()
        return lost

    def revive(self, server_id: str) -> None:
        self.alive.add(server_id)

    def copy(self) -> "ClusterState":
        new = ClusterState.__new__(ClusterState)
        new.servers = {k: s.clone() for k, s in self.servers.items()}
        new.apps = dict(self.apps)
        new.catalog = self.catalog
        new.network = self.network
        new.alive = set(self.alive)
        new._candidates = self._candidates
        return new

    def check_conservation(self) -> None:
        for s in self.servers.values():
            used = s.used()
            free = s.free()
            if abs(used.mem + free.mem - s.capacity.mem) > 1e-6 or abs(
                used.compute + free.compute - s.capacity.compute
            ) > 1e-6:
                raise AssertionError(f"accounting drift on {s.server_id}")
            if free.mem < -1e-6 or free.compute < -1e-6:
                raise AssertionError(f"{s.server_id} over capacity: free={free}")


def worst_fit_key(server: Server) -> tuple[float, float, str]:
    """Sort key: most free memory first, then most free compute, then id."""
    f = server.free()
    return (-f.mem, -f.compute, server.server_id)


def place_primaries(
    apps: Sequence[Application],
    servers: Iterable[Server],
    catalog: Catalog,
    target_util: float | None = None,
    network: NetworkModel | None = None,
) -> ClusterState:
    """Deploy primaries in the given order; ``primary_server=None`` means worst-fit.

    With ``target_util`` set, the resulting memory utilization must land within
    five points of it.
    """
    state = ClusterState(servers, [], catalog, network)
    placed: list[Application] = []
    for app in apps:
        demand = demand_of(app.primary_variant)
        if app.primary_server is not None:
            if app.primary_server not in state.servers:
                raise SetupError(f"app {app.app_id}: unknown primary server {app.primary_server!r}")
            target = state.servers[app.primary_server]
            if not target.can_fit(demand):
                raise SetupError(f"app {app.app_id} does not fit on its primary server {target.server_id}")
        else:
            fitting = [state.servers[sid] for sid in state.alive if state.servers[sid].can_fit(demand)]
            if not fitting:
                raise SetupError(f"cannot place primary of app {app.app_id}: no server has room")
            target = min(fitting, key=worst_fit_key)
            app = replace(app, primary_server=target.server_id)
        target.load(app.app_id, app.primary_variant, Tier.PRIMARY, demand)
        placed.append(app)
    state.apps = {a.app_id: a for a in placed}
    if target_util is not None:
        util = state.utilization().mem
        if abs(util - target_util) > 0.05:
            raise SetupError(
                f"primary memory utilization {util:.3f} is not within 0.05 of target {target_util}"
            )
    return state


def usable_capacity(state: ClusterState, alpha: float) -> Resources:
    """Warm-backup budget: the part of free capacity not held back for cold loads."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    return state.free_total().scale(1.0 - alpha)


def apply_headroom(state: ClusterState, headroom: float) -> ClusterState:
    """Shrink per-server free capacity so the cluster-wide free share equals ``headroom``.

    Every server keeps the same fraction of its current free capacity, so the
    relative spread of free space is preserved. Placements are untouched.
    """
    if not 0.0 < headroom <= 1.0:
        raise ValueError(f"headroom must be in (0, 1], got {headroom}")
    new = state.copy()
    alive = [new.servers[sid] for sid in sorted(new.alive)]
    phys = ZERO
    free = ZERO
    for s in alive:
        phys = phys + s.physical
        free = free + s.free()
    target = phys.scale(headroom)
    if target.mem > free.mem + 1e-6 or target.compute > free.compute + 1e-6:
        raise SetupError(
            f"headroom {headroom} exceeds what primaries leave free "
            f"(free mem {free.mem / phys.mem:.3f}, compute {free.compute / phys.compute:.3f})"
        )
    k_mem = target.mem / free.mem if free.mem else 0.0
    k_cmp = target.compute / free.compute if free.compute else 0.0
    for s in alive:
        used = s.used()
        f = s.free()
        s.capacity = Resources(used.mem + f.mem * k_mem, used.compute + f.compute * k_cmp)
    return new
