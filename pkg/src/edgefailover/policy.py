"""Failover policies: what to preload before failures and what to load after.

A policy has two hooks. ``prepare`` runs once at setup and returns the warm
backups to preload. ``failover`` runs whenever the controller has apps with no
usable replica left, and returns a decision whose load schedules the engine
executes.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Sequence

from .cluster import Application, ClusterState, Resources, SetupError
from .proactive import PlacementPlan, WarmPlacementProblem, solve_warm
from .progressive import FailoverDecision, FailoverRequest, plan_failover


@dataclass
class Policy:
    k_fraction: float = 0.5
    name: str = field(default="base", init=False)

    def prepare(self, state: ClusterState, critical: set[str], rng: random.Random) -> PlacementPlan:
        return PlacementPlan(method="none")

    def failover(
        self,
        state: ClusterState,
        apps: Sequence[Application],
        available: Sequence[str],
        critical: set[str],
        rng: random.Random,
        free: dict[str, Resources] | None = None,
    ) -> FailoverDecision:
        return FailoverDecision(unrecovered=sorted(a.app_id for a in apps))

    def params(self) -> dict:
        return {"k_fraction": self.k_fraction}


@dataclass
class FailLite(Policy):
    """Heterogeneous warm backups for the critical set, progressive cold failover for the rest."""

    alpha: float = 0.1
    site_independence: bool = False
    replicas_per_app: int = 1
    partial_k: bool = False
    exact_budget: int = 10**6
    node_limit: int = 200_000
    progressive: bool = True

    def __post_init__(self) -> None:
        self.name = "FailLite"

    def prepare(self, state, critical, rng):
        apps = [state.apps[a] for a in sorted(critical)]
        problem = WarmPlacementProblem.from_state(
            state,
            self.alpha,
            apps,
            site_independence=self.site_independence,
            replicas_per_app=self.replicas_per_app,
            partial_k=self.partial_k,
            exact_budget=self.exact_budget,
            node_limit=self.node_limit,
        )
        plan = solve_warm(problem)
        if not plan.feasible:
            raise SetupError(f"warm placement infeasible: {plan.reason}")
        return plan

    def failover(self, state, apps, available, critical, rng, free=None):
        req = FailoverRequest(list(apps), list(available), state, free=free)
        return plan_failover(req, progressive=self.progressive)

    def params(self) -> dict:
        return {
            "k_fraction": self.k_fraction,
            "alpha": self.alpha,
            "site_independence": self.site_independence,
            "replicas_per_app": self.replicas_per_app,
            "progressive": self.progressive,
        }
