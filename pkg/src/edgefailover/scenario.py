"""Scenario files: catalog, cluster, policy, failures and timing in one YAML document.

Parsing is strict; unknown keys are errors. Apps and servers may be listed
one by one or generated from compact ``app_mix`` / ``server_groups`` blocks.
"""

from __future__ import annotations

import hashlib
import json
import math
import random
from pathlib import Path
from typing import Literal

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .baselines import FullCold, FullWarm, FullWarmK
from .catalog import Catalog, CatalogError, default_catalog
from .cluster import Application, ClusterState, NetworkModel, Resources, Server, SetupError, place_primaries
from .metrics import RunMetrics, compute
from .policy import FailLite, Policy
from .simengine import Injection, RestoreSpec, SimConfig, Timings, run

SCHEMA_VERSION = 1
POLICY_NAMES = ("FailLite", "FullWarm", "FullCold", "FullWarmK")
DATA_DIR = Path(__file__).parent / "data"
REFERENCE_SCENARIOS = {"testbed6": DATA_DIR / "testbed6.yaml", "large100": DATA_DIR / "large100.yaml"}


class ScenarioError(ValueError):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ServerSpec(_Strict):
    server_id: str
    site_id: str
    mem_gib: float = Field(gt=0)
    compute: float = Field(default=1.0, gt=0)
    server_class: str = "default"


class ServerGroup(_Strict):
    """``count`` identical servers split into ``sites`` contiguous blocks."""

    count: int = Field(ge=1)
    sites: int = Field(default=1, ge=1)
    mem_gib: float = Field(gt=0)
    compute: float = Field(default=1.0, gt=0)
    server_class: str = "default"
    prefix: str = "s"
    site_prefix: str = "site"


class AppSpec(_Strict):
    app_id: str
    family_id: str
    primary_variant: str = "largest"
    primary_server: str = "auto"
    critical: bool = False
    rate: float = Field(default=1.0, gt=0)
    slo_ms: float | None = Field(default=None, gt=0)


class AppMix(_Strict):
    family_id: str
    count: int = Field(ge=1)
    primary_variant: str = "largest"
    rate: float = Field(default=1.0, gt=0)
    slo_ms: float | None = Field(default=None, gt=0)


class NetworkSpec(_Strict):
    intra_site_ms: float = Field(default=1.0, ge=0)
    inter_site_ms: float = Field(default=5.0, ge=0)


class ClusterSpec(_Strict):
    servers: list[ServerSpec] = Field(default_factory=list)
    server_groups: list[ServerGroup] = Field(default_factory=list)
    apps: list[AppSpec] = Field(default_factory=list)
    app_mix: list[AppMix] = Field(default_factory=list)
    target_util: float | None = Field(default=None, gt=0, le=1)
    # generated apps deploy in an order shuffled with this seed; null means biggest first
    placement_seed: int | None = 0
    network: NetworkSpec = Field(default_factory=NetworkSpec)

    @model_validator(mode="after")
    def _non_empty(self) -> "ClusterSpec":
        if not self.servers and not self.server_groups:
            raise ValueError("cluster needs servers or server_groups")
        if not self.apps and not self.app_mix:
            raise ValueError("cluster needs apps or app_mix")
        return self


class PolicySpec(_Strict):
    name: Literal["FailLite", "FullWarm", "FullCold", "FullWarmK"] = "FailLite"
    k_fraction: float = Field(default=0.5, ge=0, le=1)
    alpha: float = Field(default=0.1, ge=0, le=1)
    site_independence: bool = False
    replicas_per_app: int = Field(default=1, ge=1)
    partial_k: bool = False
    exact_budget: int = Field(default=10**6, ge=0)
    node_limit: int = Field(default=200_000, ge=1)
    progressive: bool = True


class InjectionSpec(_Strict):
    time_ms: float = Field(ge=0)
    kind: Literal["server", "site"] = "server"
    targets: list[str] = Field(default_factory=list)
    count: int | None = Field(default=None, ge=0)
    rotate: bool = False


class RestoreSpecModel(_Strict):
    time_ms: float = Field(ge=0)
    targets: list[str] = Field(default_factory=list)


class TimingsSpec(_Strict):
    heartbeat_ms: float = Field(default=20.0, gt=0)
    check_ms: float = Field(default=100.0, gt=0)
    heartbeat_phase_ms: float = Field(default=0.0, ge=0)
    check_phase_ms: float = Field(default=0.0, ge=0)
    notify_ms: float = Field(default=10.0, ge=0)
    fetch_ms: float = Field(default=0.0, ge=0)
    jitter_ms: float = Field(default=0.0, ge=0)
    misses: int = Field(default=2, ge=1)


class ScenarioFile(_Strict):
    schema_version: int
    name: str = "scenario"
    catalog: str = "default"
    cluster: ClusterSpec
    policy: PolicySpec = Field(default_factory=PolicySpec)
    policies: list[Literal["FailLite", "FullWarm", "FullCold", "FullWarmK"]] = Field(
        default_factory=lambda: list(POLICY_NAMES)
    )
    headroom: float | None = Field(default=0.2, gt=0, le=1)
    critical_from: Literal["k_fraction", "apps"] = "k_fraction"
    injections: list[InjectionSpec] = Field(default_factory=list)
    restores: list[RestoreSpecModel] = Field(default_factory=list)
    horizon_ms: float = Field(default=20_000.0, gt=0)
    timings: TimingsSpec = Field(default_factory=TimingsSpec)
    seed: int = 0
    repeats: int = Field(default=1, ge=1)


class Scenario:
    """A validated scenario plus the catalog it refers to."""

    def __init__(self, spec: ScenarioFile, catalog: Catalog, base_dir: Path | None = None) -> None:
        if spec.schema_version != SCHEMA_VERSION:
            raise ScenarioError(f"unsupported scenario schema_version {spec.schema_version}")
        self.spec = spec
        self.catalog = catalog
        self.base_dir = base_dir
        self._state: ClusterState | None = None
        self.applications()  # fail at load on unknown families or variants

    @classmethod
    def from_dict(cls, data: dict, base_dir: Path | None = None) -> "Scenario":
        try:
            spec = ScenarioFile.model_validate(data)
        except ValidationError as exc:
            raise ScenarioError(f"invalid scenario: {exc}") from exc
        return cls(spec, _load_catalog(spec.catalog, base_dir), base_dir)

    @classmethod
    def load(cls, path: str | Path) -> "Scenario":
        path = resolve_scenario_path(path)
        with open(path) as fh:
            data = yaml.safe_load(fh)
        if not isinstance(data, dict):
            raise ScenarioError(f"{path}: expected a mapping at top level")
        return cls.from_dict(data, path.parent)

    def with_overrides(self, **updates) -> "Scenario":
        """Copy with top-level fields or ``policy.<field>`` values replaced; None values are ignored."""
        top = {}
        pol = {}
        for key, val in updates.items():
            if val is None:
                continue
            if key.startswith("policy."):
                pol[key.split(".", 1)[1]] = val
            elif key == "failed_sites":
                first = self.spec.injections[0].time_ms if self.spec.injections else 1000.0
                top["injections"] = [InjectionSpec(time_ms=first, kind="site", count=int(val), rotate=True)]
            else:
                top[key] = val
        data = self.spec.model_dump()
        data.update({k: v.model_dump() if isinstance(v, BaseModel) else v for k, v in top.items()})
        data["injections"] = [i.model_dump() if isinstance(i, BaseModel) else i for i in data["injections"]]
        data["policy"].update(pol)
        try:
            spec = ScenarioFile.model_validate(data)
        except ValidationError as exc:
            raise ScenarioError(f"invalid override: {exc}") from exc
        return Scenario(spec, self.catalog, self.base_dir)

    def digest(self) -> str:
        """Stable hash of the scenario content and its catalog."""
        blob = json.dumps(
            {"scenario": self.spec.model_dump(mode="json"), "catalog": self.catalog.to_dict()},
            sort_keys=True,
            separators=(",", ":"),
        )
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    # building ------------------------------------------------------------

    def servers(self) -> list[Server]:
        out = []
        for s in self.spec.cluster.servers:
            cap = Resources(s.mem_gib * 1024.0, s.compute)
            out.append(Server(s.server_id, s.site_id, cap, s.server_class))
        for g in self.spec.cluster.server_groups:
            for i in range(g.count):
                site = i * g.sites // g.count
                cap = Resources(g.mem_gib * 1024.0, g.compute)
                out.append(Server(f"{g.prefix}{i:03d}", f"{g.site_prefix}{site}", cap, g.server_class))
        ids = [s.server_id for s in out]
        if len(set(ids)) != len(ids):
            raise ScenarioError("duplicate server ids")
        return out

    def applications(self) -> list[Application]:
        cat = self.catalog
        apps: list[Application] = []

        def variant_for(app_id: str, family_id: str, ref: str):
            try:
                fam = cat.family(family_id)
            except CatalogError as exc:
                raise ScenarioError(f"app {app_id}: unknown family {family_id!r}") from exc
            if ref == "largest":
                return fam.largest
            try:
                return fam.variant(ref)
            except CatalogError as exc:
                raise ScenarioError(f"app {app_id}: family {family_id} has no variant {ref!r}") from exc

        for a in self.spec.cluster.apps:
            v = variant_for(a.app_id, a.family_id, a.primary_variant)
            apps.append(
                Application(
                    a.app_id,
                    a.family_id,
                    v,
                    None if a.primary_server == "auto" else a.primary_server,
                    a.critical,
                    a.rate,
                    math.inf if a.slo_ms is None else a.slo_ms,
                )
            )
        mixed: list[Application] = []
        for m in self.spec.cluster.app_mix:
            for i in range(m.count):
                app_id = f"{m.family_id}-{i:03d}"
                v = variant_for(app_id, m.family_id, m.primary_variant)
                mixed.append(
                    Application(app_id, m.family_id, v, None, False, m.rate, math.inf if m.slo_ms is None else m.slo_ms)
                )
        mixed.sort(key=lambda a: (-a.primary_variant.mem_demand, a.app_id))
        if self.spec.cluster.placement_seed is not None:
            # a biggest-first deal leaves whole sites holding one family
            random.Random(self.spec.cluster.placement_seed).shuffle(mixed)
        apps.extend(mixed)
        ids = [a.app_id for a in apps]
        if len(set(ids)) != len(ids):
            raise ScenarioError("duplicate app ids")
        return apps

    def state(self) -> ClusterState:
        """Cluster with primaries placed (cached; callers get a copy)."""
        if self._state is None:
            net = NetworkModel(self.spec.cluster.network.intra_site_ms, self.spec.cluster.network.inter_site_ms)
            try:
                self._state = place_primaries(
                    self.applications(), self.servers(), self.catalog, self.spec.cluster.target_util, net
                )
            except SetupError as exc:
                raise ScenarioError(str(exc)) from exc
        return self._state.copy()

    def policy(self, name: str | None = None) -> Policy:
        p = self.spec.policy
        name = name or p.name
        if name == "FailLite":
            return FailLite(
                k_fraction=p.k_fraction,
                alpha=p.alpha,
                site_independence=p.site_independence,
                replicas_per_app=p.replicas_per_app,
                partial_k=p.partial_k,
                exact_budget=p.exact_budget,
                node_limit=p.node_limit,
                progressive=p.progressive,
            )
        if name == "FullWarm":
            return FullWarm(k_fraction=p.k_fraction, site_independence=p.site_independence)
        if name == "FullWarmK":
            return FullWarmK(k_fraction=p.k_fraction, site_independence=p.site_independence)
        if name == "FullCold":
            return FullCold(k_fraction=p.k_fraction)
        raise ScenarioError(f"unknown policy {name!r}")

    def sim_config(self, seed: int | None = None, policy: str | None = None, check_invariants: bool = False) -> SimConfig:
        s = self.spec
        return SimConfig(
            state=self.state(),
            policy=self.policy(policy),
            injections=[Injection(i.time_ms, i.kind, list(i.targets), i.count, i.rotate) for i in s.injections],
            restores=[RestoreSpec(r.time_ms, list(r.targets)) for r in s.restores],
            headroom=s.headroom,
            use_k_fraction=s.critical_from == "k_fraction",
            horizon_ms=s.horizon_ms,
            timings=Timings(**s.timings.model_dump()),
            seed=s.seed if seed is None else seed,
            scenario_hash=self.digest(),
            check_invariants=check_invariants,
        )

    def run(self, seed: int | None = None, policy: str | None = None, check_invariants: bool = False):
        """One simulation; returns (RunResult, RunMetrics)."""
        cfg = self.sim_config(seed, policy, check_invariants)
        try:
            res = run(cfg)
        except SetupError as exc:
            raise ScenarioError(str(exc)) from exc
        metrics = compute(res.timelines, res.policy, res.seed, res.scenario_hash, cfg.policy.params())
        return res, metrics


def resolve_scenario_path(path: str | Path) -> Path:
    """Accepts a file path or the name of a bundled reference scenario."""
    if str(path) in REFERENCE_SCENARIOS:
        return REFERENCE_SCENARIOS[str(path)]
    p = Path(path)
    if not p.exists():
        raise ScenarioError(f"scenario file not found: {path}")
    return p


def _load_catalog(ref: str, base_dir: Path | None) -> Catalog:
    if ref == "default":
        return default_catalog()
    p = Path(ref)
    if not p.is_absolute() and base_dir is not None:
        p = base_dir / p
    try:
        return Catalog.load(p)
    except (OSError, CatalogError) as exc:
        raise ScenarioError(f"cannot load catalog {ref!r}: {exc}") from exc


def run_repeats(scenario: Scenario, policy: str | None = None, repeats: int | None = None) -> list[RunMetrics]:
    """``repeats`` runs with seeds ``seed, seed+1, ...``."""
    n = repeats or scenario.spec.repeats
    base = scenario.spec.seed
    return [scenario.run(base + r, policy)[1] for r in range(n)]


__all__ = [
    "POLICY_NAMES",
    "REFERENCE_SCENARIOS",
    "SCHEMA_VERSION",
    "Scenario",
    "ScenarioError",
    "ScenarioFile",
    "run_repeats",
]
