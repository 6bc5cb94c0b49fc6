"""Recovery rate, MTTR and accuracy reduction from failover timelines.

Only apps hit by a failure count. Mean MTTR and accuracy reduction are taken
over the recovered ones; accuracy is the family-normalized value, so a backup
of the same variant as the primary costs nothing.
"""

from __future__ import annotations

import statistics
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

METRIC_NAMES = ("recovery_rate", "mean_mttr", "acc_reduction")
ACCURACY_BASE = "family-normalized"


class MetricsError(ValueError):
    pass


@dataclass
class AppRow:
    app_id: str
    critical: bool
    recovered: bool
    mttr_ms: float | None
    acc_primary: float
    acc_backup: float | None
    path: str | None = None


@dataclass
class RunMetrics:
    policy: str
    seed: int
    scenario_hash: str
    affected: int
    recovered: int
    recovery_rate: float | None  # percent
    mean_mttr: float | None  # ms
    acc_reduction: float | None  # percent
    flagged: bool = False
    rows: list[AppRow] = field(default_factory=list)
    params: dict = field(default_factory=dict)

    def summary(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k != "rows"}
        d["accuracy_base"] = ACCURACY_BASE
        return d

    def to_dict(self) -> dict:
        d = self.summary()
        d["rows"] = [asdict(r) for r in self.rows]
        return d


def compute(
    timelines: Iterable,
    policy: str = "",
    seed: int = 0,
    scenario_hash: str = "",
    params: dict | None = None,
) -> RunMetrics:
    rows = []
    for tl in timelines:
        rows.append(
            AppRow(
                app_id=tl.app_id,
                critical=tl.critical,
                recovered=bool(tl.recovered),
                mttr_ms=tl.mttr_ms if tl.recovered else None,
                acc_primary=tl.acc_primary,
                acc_backup=tl.acc_backup if tl.recovered else None,
                path=tl.path,
            )
        )
    rows.sort(key=lambda r: r.app_id)
    affected = len(rows)
    rec = [r for r in rows if r.recovered]
    out = RunMetrics(
        policy=policy,
        seed=seed,
        scenario_hash=scenario_hash,
        affected=affected,
        recovered=len(rec),
        recovery_rate=None,
        mean_mttr=None,
        acc_reduction=None,
        rows=rows,
        params=dict(params or {}),
    )
    if affected == 0:
        out.flagged = True
        return out
    out.recovery_rate = 100.0 * len(rec) / affected
    if rec:
        out.mean_mttr = statistics.fmean(r.mttr_ms for r in rec)
        out.acc_reduction = statistics.fmean((1.0 - r.acc_backup / r.acc_primary) * 100.0 for r in rec)
    return out


def aggregate(runs: Sequence[RunMetrics], group_by_policy: bool = True) -> dict[str, dict]:
    """Mean, min and max of each metric, per policy.

    Flagged runs (nobody affected) are counted but contribute no values.
    """
    if not runs:
        raise MetricsError("nothing to aggregate")
    policies = sorted({r.policy for r in runs})
    if not group_by_policy and len(policies) > 1:
        raise MetricsError(f"runs mix policies {policies}; aggregate per policy instead")
    out: dict[str, dict] = {}
    for pol in policies:
        group = [r for r in runs if r.policy == pol]
        entry: dict = {"runs": len(group), "flagged": sum(r.flagged for r in group)}
        for name in METRIC_NAMES:
            vals = [getattr(r, name) for r in group if getattr(r, name) is not None]
            if vals:
                entry[name] = {"mean": statistics.fmean(vals), "min": min(vals), "max": max(vals)}
            else:
                entry[name] = {"mean": None, "min": None, "max": None}
        out[pol] = entry
    return out
