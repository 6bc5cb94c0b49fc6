"""Deterministic control-plane simulator for two-step failover in edge model serving."""

from .catalog import Catalog, CatalogError, ModelFamily, ModelVariant, SizeClass, default_catalog
from .cluster import Application, ClusterState, Resources, Server, SetupError
from .kernels import BACKEND
from .metrics import RunMetrics, aggregate, compute
from .policy import FailLite, Policy
from .baselines import FullCold, FullWarm, FullWarmK
from .proactive import PlacementPlan, WarmPlacementProblem, solve_warm, validate_plan
from .progressive import FailoverDecision, FailoverRequest, plan_failover
from .scenario import Scenario, ScenarioError, run_repeats
from .simengine import SimConfig, Simulator, run

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "Application",
    "Catalog",
    "CatalogError",
    "ClusterState",
    "FailLite",
    "FailoverDecision",
    "FailoverRequest",
    "FullCold",
    "FullWarm",
    "FullWarmK",
    "ModelFamily",
    "ModelVariant",
    "PlacementPlan",
    "Policy",
    "Resources",
    "RunMetrics",
    "Scenario",
    "ScenarioError",
    "Server",
    "SetupError",
    "SimConfig",
    "Simulator",
    "SizeClass",
    "WarmPlacementProblem",
    "aggregate",
    "compute",
    "default_catalog",
    "plan_failover",
    "run",
    "run_repeats",
    "solve_warm",
    "validate_plan",
]
