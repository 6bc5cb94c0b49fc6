"""Full-size replication baselines.

None of these ever picks a smaller variant: a backup is the primary model
itself, either preloaded (warm) or loaded from disk once a failure is
detected (cold).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .cluster import Application, ClusterState
from .policy import Policy
from .proactive import PlacementPlan
from .progressive import FailoverDecision, direct_schedule, failover_order, pack


def full_size(app: Application):
    return (app.primary_variant,)


def pack_full_size(
    state: ClusterState,
    apps: Sequence[Application],
    servers: Sequence[str],
    free=None,
    site_independent: bool = False,
) -> list[tuple[Application, str | None]]:
    """Worst-fit the full-size models of ``apps`` in order; None where nothing fits."""
    placed = pack(
        state,
        apps,
        servers,
        full_size,
        [0] * len(apps),
        free=free,
        site_independent=site_independent,
        upgrade=False,
    )
    return [(a, srv) for a, (_, srv) in zip(apps, placed)]


def warm_order(apps: Sequence[Application], critical: set[str]) -> list[Application]:
    """Critical apps first, each group by descending rate-weighted accuracy then id."""
    crit = failover_order(a for a in apps if a.app_id in critical)
    rest = failover_order(a for a in apps if a.app_id not in critical)
    return crit + rest


def plan_full_warm(
    state: ClusterState,
    apps: Sequence[Application],
    critical: set[str],
    site_independent: bool = False,
) -> PlacementPlan:
    servers = sorted(state.alive)
    plan = PlacementPlan(method="full-warm", optimal=False)
    for app, srv in pack_full_size(state, warm_order(apps, critical), servers, site_independent=site_independent):
        if srv is None:
            plan.unplaced.append(app.app_id)
        else:
            plan.warm[app.app_id] = [(app.primary_variant, srv)]
            plan.objective += app.rate * app.primary_variant.norm_accuracy
    return plan


def cold_order(apps: Sequence[Application], critical: set[str], rng) -> list[Application]:
    """Critical apps first, the rest in random order drawn from ``rng``."""
    crit = failover_order(a for a in apps if a.app_id in critical)
    rest = sorted((a for a in apps if a.app_id not in critical), key=lambda a: a.app_id)
    rng.shuffle(rest)
    return crit + rest


def plan_full_cold(state, apps, available, critical, rng, free=None) -> FailoverDecision:
    order = cold_order(apps, critical, rng)
    decision = FailoverDecision(order=[a.app_id for a in order])
    for app, srv in pack_full_size(state, order, available, free=free):
        if srv is None:
            decision.unrecovered.append(app.app_id)
        else:
            decision.selection[app.app_id] = app.primary_variant
            decision.placement[app.app_id] = srv
    return direct_schedule(decision)


@dataclass
class FullWarm(Policy):
    site_independence: bool = False

    def __post_init__(self) -> None:
        self.name = "FullWarm"

    def prepare(self, state, critical, rng):
        return plan_full_warm(state, list(state.apps.values()), critical, self.site_independence)


@dataclass
class FullCold(Policy):
    def __post_init__(self) -> None:
        self.name = "FullCold"

    def failover(self, state, apps, available, critical, rng, free=None):
        return plan_full_cold(state, apps, available, critical, rng, free)


@dataclass
class FullWarmK(Policy):
    site_independence: bool = False

    def __post_init__(self) -> None:
        self.name = "FullWarmK"

    def prepare(self, state, critical, rng):
        crit = [state.apps[a] for a in sorted(critical)]
        return plan_full_warm(state, crit, critical, self.site_independence)

    def failover(self, state, apps, available, critical, rng, free=None):
        return plan_full_cold(state, apps, available, critical, rng, free)
