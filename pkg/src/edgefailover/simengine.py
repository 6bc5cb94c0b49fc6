"""Deterministic discrete-event simulation of failures and failover.

Time is integer microseconds. Events are ordered by (time, priority, seq):
at equal times heartbeats run first, then injections and restores, then load
completions, switches and notifications, and detector checks last, so a
heartbeat sent at the crash instant still counts and a check sees every
heartbeat of its own tick.

The controller only acts on what it knows. It learns about a dead server
when the detector declares it, or earlier when an operation against it (a
traffic switch, a finished load) fails.
"""

from __future__ import annotations

import enum
import heapq
import json
import logging
import random
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

from .catalog import ModelVariant
from .cluster import Application, ClusterState, Resources, SetupError, Tier, apply_headroom
from .detector import HeartbeatState
from .policy import Policy
from .proactive import PlacementPlan

log = logging.getLogger(__name__)

US_PER_MS = 1000


def to_us(ms: float) -> int:
    return int(round(ms * US_PER_MS))


def to_ms(us: int) -> float:
    return us / US_PER_MS


class SimulationFault(RuntimeError):
    """Internal inconsistency; the run is aborted."""


class EventKind(str, enum.Enum):
    HEARTBEAT = "heartbeat"
    DETECTOR_CHECK = "detector_check"
    INJECT_FAILURE = "inject_failure"
    INJECT_SITE_FAILURE = "inject_site_failure"
    LOAD_COMPLETE = "load_complete"
    TRAFFIC_SWITCH = "traffic_switch"
    NOTIFY_CLIENT = "notify_client"
    RESTORE = "restore"


_PRIORITY = {
    EventKind.HEARTBEAT: 0,
    EventKind.INJECT_FAILURE: 1,
    EventKind.INJECT_SITE_FAILURE: 1,
    EventKind.RESTORE: 1,
    EventKind.LOAD_COMPLETE: 2,
    EventKind.TRAFFIC_SWITCH: 3,
    EventKind.NOTIFY_CLIENT: 4,
    EventKind.DETECTOR_CHECK: 5,
}


@dataclass(order=True)
class Event:
    time: int
    priority: int
    seq: int
    kind: EventKind = field(compare=False)
    payload: dict = field(compare=False, default_factory=dict)


@dataclass
class Timings:
    heartbeat_ms: float = 20.0
    check_ms: float = 100.0
    heartbeat_phase_ms: float = 0.0
    check_phase_ms: float = 0.0
    notify_ms: float = 10.0
    fetch_ms: float = 0.0
    jitter_ms: float = 0.0
    misses: int = 2


@dataclass
class Injection:
    time_ms: float
    kind: str = "server"  # "server" or "site"
    targets: list[str] = field(default_factory=list)
    count: int | None = None  # pick this many at random instead of naming targets
    rotate: bool = False  # pick the (seed mod n)-th server or site


@dataclass
class RestoreSpec:
    time_ms: float
    targets: list[str] = field(default_factory=list)  # empty: everything failed so far


@dataclass
class FailoverTimeline:
    app_id: str
    critical: bool
    failure_time: int
    acc_primary: float
    detection_time: int | None = None
    recovery_time: int | None = None
    final_variant: str | None = None
    acc_backup: float | None = None
    recovered: bool = False
    path: str | None = None  # "warm" or "cold"
    upgrade_time: int | None = None
    switch_back_time: int | None = None

    @property
    def mttr_ms(self) -> float | None:
        if self.recovery_time is None:
            return None
        return to_ms(self.recovery_time - self.failure_time)

    def to_dict(self) -> dict:
        return {
            "app_id": self.app_id,
            "critical": self.critical,
            "failure_time_us": self.failure_time,
            "detection_time_us": self.detection_time,
            "recovery_time_us": self.recovery_time,
            "final_variant": self.final_variant,
            "recovered": self.recovered,
            "path": self.path,
            "upgrade_time_us": self.upgrade_time,
            "switch_back_time_us": self.switch_back_time,
            "mttr_ms": self.mttr_ms,
            "acc_primary": self.acc_primary,
            "acc_backup": self.acc_backup,
        }


@dataclass
class SimConfig:
    state: ClusterState
    policy: Policy
    injections: list[Injection] = field(default_factory=list)
    restores: list[RestoreSpec] = field(default_factory=list)
    headroom: float | None = 0.2
    use_k_fraction: bool = True  # False: take criticality from the app definitions
    horizon_ms: float = 20_000.0
    timings: Timings = field(default_factory=Timings)
    seed: int = 0
    scenario_hash: str = ""
    check_invariants: bool = False


@dataclass
class RunResult:
    timelines: list[FailoverTimeline]
    records: list[dict]
    warm_plan: PlacementPlan
    critical: set[str]
    state: ClusterState
    seed: int
    policy: str
    scenario_hash: str

    def log_lines(self) -> list[str]:
        return [json.dumps(r, sort_keys=True, separators=(",", ":")) for r in self.records]


def choose_critical(app_ids: Iterable[str], k_fraction: float, rng: random.Random) -> set[str]:
    """First ``round(k * n)`` apps of a seeded permutation, so sets nest as k grows."""
    ids = sorted(app_ids)
    perm = rng.sample(ids, len(ids))
    return set(perm[: int(round(k_fraction * len(ids)))])


@dataclass
class _Pending:
    gen: int
    server: str
    steps: list[ModelVariant]
    step: int = 0


class Simulator:
    def __init__(self, cfg: SimConfig) -> None:
        self.cfg = cfg
        self.rng = random.Random(cfg.seed)
        state = cfg.state.copy()
        if cfg.headroom is not None:
            state = apply_headroom(state, cfg.headroom)
        self.state = state
        self.t = cfg.timings
        self.policy = cfg.policy
        self.heap: list[Event] = []
        self.seq = 0
        self.now = 0
        self.horizon = to_us(cfg.horizon_ms)
        self.records: list[dict] = []
        self.detector = HeartbeatState.start(
            state.servers, 0, period=to_us(self.t.heartbeat_ms), check_interval=to_us(self.t.check_ms),
            misses=self.t.misses,
        )
        self.crashed: dict[str, int] = {}
        self.unreachable: set[str] = set()
        self.serving: dict[str, tuple[str, ModelVariant] | None] = {
            a.app_id: (a.primary_server, a.primary_variant) for a in state.apps.values()
        }
        self.warm: dict[str, list[tuple[ModelVariant, str]]] = {}
        self.warm_origin: set[tuple[str, str, str]] = set()
        self.pending: dict[str, _Pending] = {}
        self.target: dict[str, str] = {}  # server of the failover in progress
        self.gen: dict[str, int] = {a: 0 for a in state.apps}
        self.timelines: list[FailoverTimeline] = []
        self.open: dict[str, FailoverTimeline] = {}

    # plumbing ------------------------------------------------------------

    def schedule(self, time: int, kind: EventKind, **payload: Any) -> None:
        if time < self.now:
            raise SimulationFault(f"{kind.value} scheduled at {time} before now={self.now}")
        self.seq += 1
        heapq.heappush(self.heap, Event(time, _PRIORITY[kind], self.seq, kind, payload))

    def record(self, kind: str, **payload: Any) -> None:
        self.records.append({"t_us": self.now, "kind": kind, **payload})

    def available(self) -> list[str]:
        return sorted(
            s for s in self.state.servers if s not in self.detector.declared_failed and s not in self.unreachable
        )

    # setup ---------------------------------------------------------------

    def setup(self) -> None:
        st = self.state
        if self.cfg.use_k_fraction:
            self.critical = choose_critical(st.apps, self.policy.k_fraction, self.rng)
        else:
            self.critical = {a.app_id for a in st.apps.values() if a.critical}
        self.record(
            "setup",
            policy=self.policy.name,
            params=self.policy.params(),
            seed=self.cfg.seed,
            critical=sorted(self.critical),
            utilization=round(st.utilization().mem, 6),
        )
        plan = self.policy.prepare(st, self.critical, self.rng)
        self.warm_plan = plan
        for app_id in sorted(plan.warm):
            for v, srv in plan.warm[app_id]:
                st.servers[srv].load(app_id, v, Tier.WARM)
                self.warm.setdefault(app_id, []).append((v, srv))
                self.warm_origin.add((app_id, srv, v.variant_id))
        self.record(
            "warm_plan",
            method=plan.method,
            optimal=plan.optimal,
            objective=round(plan.objective, 9),
            placements={a: [[v.variant_id, s] for v, s in r] for a, r in sorted(plan.warm.items())},
            unplaced=sorted(plan.unplaced),
        )
        for inj in self.cfg.injections:
            targets = self._resolve(inj)
            kind = EventKind.INJECT_SITE_FAILURE if inj.kind == "site" else EventKind.INJECT_FAILURE
            self.schedule(to_us(inj.time_ms), kind, targets=targets)
        for r in self.cfg.restores:
            self.schedule(to_us(r.time_ms), EventKind.RESTORE, targets=list(r.targets))
        self.schedule(to_us(self.t.heartbeat_phase_ms), EventKind.HEARTBEAT)
        self.schedule(to_us(self.t.check_phase_ms), EventKind.DETECTOR_CHECK)

    def _resolve(self, inj: Injection) -> list[str]:
        pool = list(self.state.sites) if inj.kind == "site" else sorted(self.state.servers)
        if inj.targets:
            unknown = [x for x in inj.targets if x not in pool]
            if unknown:
                raise SetupError(f"injection names unknown {inj.kind}(s): {unknown}")
            return list(inj.targets)
        if inj.count is not None and not 0 <= inj.count <= len(pool):
            raise SetupError(f"cannot fail {inj.count} of {len(pool)} {inj.kind}s")
        if inj.rotate:
            # a window of `count` consecutive targets starting at seed mod n
            n = 1 if inj.count is None else inj.count
            start = self.cfg.seed % len(pool)
            return sorted(pool[(start + i) % len(pool)] for i in range(n))
        if inj.count is not None:
            return sorted(self.rng.sample(pool, inj.count))
        raise SetupError("injection needs targets, count or rotate")

    # main loop -----------------------------------------------------------

    def run(self) -> RunResult:
        self.setup()
        handlers = {
            EventKind.HEARTBEAT: self.on_heartbeat,
            EventKind.DETECTOR_CHECK: self.on_check,
            EventKind.INJECT_FAILURE: self.on_inject,
            EventKind.INJECT_SITE_FAILURE: self.on_inject_site,
            EventKind.LOAD_COMPLETE: self.on_load_complete,
            EventKind.TRAFFIC_SWITCH: self.on_switch,
            EventKind.NOTIFY_CLIENT: self.on_notify,
            EventKind.RESTORE: self.on_restore,
        }
        while self.heap:
            ev = heapq.heappop(self.heap)
            if ev.time > self.horizon:
                break
            self.now = ev.time
            handlers[ev.kind](**ev.payload)
            if self.cfg.check_invariants:
                self.state.check_conservation()
        self.record("end", horizon_us=self.horizon)
        return RunResult(
            timelines=self.timelines,
            records=self.records,
            warm_plan=self.warm_plan,
            critical=self.critical,
            state=self.state,
            seed=self.cfg.seed,
            policy=self.policy.name,
            scenario_hash=self.cfg.scenario_hash,
        )

    # detection -----------------------------------------------------------

    def on_heartbeat(self, server: str | None = None) -> None:
        if server is not None:  # single jittered heartbeat
            if server not in self.crashed:
                self.detector.record_heartbeat(server, self.now)
            return
        period = to_us(self.t.heartbeat_ms)
        jitter = to_us(self.t.jitter_ms)
        for s in self.state.servers:
            if s in self.crashed:
                continue
            if jitter:
                self.schedule(self.now + self.rng.randrange(jitter + 1), EventKind.HEARTBEAT, server=s)
            else:
                self.detector.record_heartbeat(s, self.now)
        self.schedule(self.now + period, EventKind.HEARTBEAT)

    def on_check(self) -> None:
        newly = self.detector.check(self.now)
        if newly:
            sites = self.detector.failed_sites(self.state.sites)
            self.record("detect", servers=sorted(newly), failed_sites=sorted(sites))
            self.handle_failures(newly)
        self.schedule(self.now + to_us(self.t.check_ms), EventKind.DETECTOR_CHECK)

    # injection -----------------------------------------------------------

    def on_inject_site(self, targets: list[str]) -> None:
        sites = self.state.sites
        self.record("inject_site", sites=sorted(targets))
        self.crash([s for site in sorted(targets) for s in sites[site]])

    def on_inject(self, targets: list[str]) -> None:
        self.record("inject", servers=sorted(targets))
        self.crash(sorted(targets))

    def crash(self, servers: Sequence[str]) -> None:
        for s in servers:
            if s in self.crashed:
                log.warning("server %s is already down; injection ignored", s)
                self.record("inject_noop", server=s)
                continue
            self.crashed[s] = self.now
            lost = self.state.fail(s)
            self.record("crash", server=s, lost=sorted(f"{p.app_id}/{p.variant.variant_id}" for p in lost))
            for app_id, cur in sorted(self.serving.items()):
                if cur is not None and cur[0] == s:
                    self.serving[app_id] = None
                    self._open_timeline(app_id, self.now)

    def _open_timeline(self, app_id: str, failure_time: int) -> FailoverTimeline:
        tl = self.open.get(app_id)
        if tl is not None and not tl.recovered:
            return tl  # already down; the same outage continues
        app = self.state.apps[app_id]
        tl = FailoverTimeline(
            app_id=app_id,
            critical=app_id in self.critical,
            failure_time=failure_time,
            acc_primary=app.primary_variant.norm_accuracy,
        )
        self.timelines.append(tl)
        self.open[app_id] = tl
        return tl

    # failover ------------------------------------------------------------

    def handle_failures(self, dead: set[str]) -> None:
        """Controller reaction once it knows ``dead`` servers are gone."""
        st = self.state
        for app_id in list(self.warm):
            keep = [(v, s) for v, s in self.warm[app_id] if s not in dead]
            if keep:
                self.warm[app_id] = keep
            else:
                del self.warm[app_id]
        affected: list[Application] = []
        for app_id in sorted(st.apps):
            tl = self.open.get(app_id)
            target = self.target.get(app_id)
            if self.serving[app_id] is None and tl is not None and not tl.recovered:
                # down: handle it if this is news, or if its failover target just died
                if tl.detection_time is None or target in dead:
                    affected.append(st.apps[app_id])
            elif target in dead:
                self._cancel(app_id)
                self.target.pop(app_id, None)
        if not affected:
            return
        cold: list[Application] = []
        for app in affected:
            tl = self.open[app.app_id]
            if tl.detection_time is None:
                tl.detection_time = self.now
            self._cancel(app.app_id)
            self.target.pop(app.app_id, None)
            backup = self._live_warm(app.app_id)
            if backup is not None:
                v, srv = backup
                self.target[app.app_id] = srv
                tl.path = "warm"
                self.record("failover_warm", app=app.app_id, server=srv, variant=v.variant_id)
                self.schedule(self.now, EventKind.TRAFFIC_SWITCH, app=app.app_id, server=srv,
                              variant=v.variant_id, gen=self.gen[app.app_id], warm=True)
            else:
                cold.append(app)
        if cold:
            self.plan_cold(cold)

    def _live_warm(self, app_id: str) -> tuple[ModelVariant, str] | None:
        avail = set(self.available())
        for v, s in sorted(self.warm.get(app_id, []), key=lambda x: (-x[0].norm_accuracy, x[1])):
            if s in avail:
                return v, s
        return None

    def _cancel(self, app_id: str) -> None:
        """Drop any in-flight schedule for ``app_id`` and release its reservations."""
        pend = self.pending.pop(app_id, None)
        self.gen[app_id] += 1
        if pend is None:
            return
        srv = self.state.servers[pend.server]
        cur = self.serving.get(app_id)
        for v in pend.steps:
            key = (app_id, v.variant_id)
            if key in srv.loaded and not (cur is not None and cur[0] == pend.server and cur[1].variant_id == v.variant_id):
                srv.unload(app_id, v.variant_id)

    def plan_cold(self, apps: list[Application]) -> None:
        avail = self.available()
        free = {s: self.state.servers[s].free() for s in avail}
        decision = self.policy.failover(self.state, apps, avail, self.critical, self.rng, free)
        self.record(
            "plan",
            apps=[a.app_id for a in apps],
            delta=None if decision.delta == float("inf") else round(decision.delta, 9),
            unrecovered=sorted(decision.unrecovered),
            decisions={
                a: {
                    "server": decision.placement[a],
                    "variant": v.variant_id,
                    "schedule": [step.variant.variant_id for step in decision.schedule[a]],
                }
                for a, v in sorted(decision.selection.items())
            },
        )
        for app_id in decision.unrecovered:
            self.open[app_id].path = "cold"
        for app_id in sorted(decision.selection):
            steps = [step.variant for step in decision.schedule[app_id]]
            srv_id = decision.placement[app_id]
            srv = self.state.servers[srv_id]
            sel = steps[-1]
            for v in steps:
                if len(steps) > 1 and v is not sel:
                    demand = Resources(v.mem_demand, 0.0)  # rides on the selected variant's compute
                else:
                    demand = Resources(v.mem_demand, v.compute_demand)
                srv.load(app_id, v, Tier.LOADING, demand)
            self.open[app_id].path = "cold"
            self.target[app_id] = srv_id
            pend = _Pending(self.gen[app_id], srv_id, steps)
            self.pending[app_id] = pend
            self._start_load(app_id, pend)

    def _start_load(self, app_id: str, pend: _Pending) -> None:
        v = pend.steps[pend.step]
        dur = to_us(self.t.fetch_ms + self.state.catalog.load_time(v))
        self.record("load_start", app=app_id, server=pend.server, variant=v.variant_id, duration_us=dur)
        self.schedule(self.now + dur, EventKind.LOAD_COMPLETE, app=app_id, gen=pend.gen, step=pend.step)

    def on_load_complete(self, app: str, gen: int, step: int, primary: bool = False) -> None:
        if primary:
            return self._primary_loaded(app)
        if gen != self.gen[app]:
            return
        pend = self.pending[app]
        v = pend.steps[step]
        if pend.server in self.crashed:
            self.record("load_failed", app=app, server=pend.server, variant=v.variant_id)
            self._lost_contact(pend.server)
            return
        srv = self.state.servers[pend.server]
        srv.loaded[(app, v.variant_id)].tier = Tier.ACTIVE
        self.record("load_complete", app=app, server=pend.server, variant=v.variant_id)
        self.schedule(self.now, EventKind.TRAFFIC_SWITCH, app=app, server=pend.server,
                      variant=v.variant_id, gen=gen, warm=False)

    def _lost_contact(self, server: str) -> None:
        """An operation against ``server`` failed: stop using it and re-plan what depended on it."""
        self.unreachable.add(server)
        self.record("unreachable", server=server)
        self.handle_failures({server})

    def on_switch(self, app: str, server: str, variant: str, gen: int, warm: bool) -> None:
        if gen != self.gen[app]:
            return
        if server in self.crashed:
            self.record("switch_failed", app=app, server=server)
            self._lost_contact(server)
            return
        srv = self.state.servers[server]
        v = self.state.catalog.variant(variant)
        entry = srv.loaded[(app, variant)]
        entry.tier = Tier.ACTIVE
        if warm:
            self.warm.pop(app, None)
        prev = self.serving[app]
        self.serving[app] = (server, v)
        tl = self.open[app]
        tl.final_variant = variant
        tl.acc_backup = v.norm_accuracy
        self.record("switch", app=app, server=server, variant=variant)
        pend = self.pending.get(app)
        if prev is None:
            self.schedule(self.now + to_us(self.t.notify_ms), EventKind.NOTIFY_CLIENT, app=app, gen=gen)
        elif pend is not None and prev[0] == server:
            # upgrade finished: drop the small model that kept the app up
            srv.unload(app, prev[1].variant_id)
            tl.upgrade_time = self.now
            self.record("upgrade_complete", app=app, server=server, variant=variant, released=prev[1].variant_id)
        if pend is not None:
            pend.step += 1
            if pend.step < len(pend.steps):
                self._start_load(app, pend)
            else:
                del self.pending[app]
                if self.open[app].recovered:
                    self.target.pop(app, None)

    def on_notify(self, app: str, gen: int) -> None:
        tl = self.open.get(app)
        cur = self.serving.get(app)
        if tl is None or cur is None or tl.recovered:
            return
        if cur[0] in self.crashed:
            return  # died before the client heard about it; the crash reopened the outage
        tl.recovered = True
        tl.recovery_time = self.now
        if app not in self.pending:
            self.target.pop(app, None)
        self.record("notify", app=app, server=cur[0], variant=cur[1].variant_id, mttr_us=self.now - tl.failure_time)

    # restore -------------------------------------------------------------

    def on_restore(self, targets: list[str]) -> None:
        targets = sorted(targets) if targets else sorted(self.crashed)
        for s in targets:
            if s not in self.crashed:
                self.record("restore_noop", server=s)
                continue
            del self.crashed[s]
            self.unreachable.discard(s)
            self.state.revive(s)
            self.detector.restore(s, self.now)
            self.record("restore", server=s)
            for app in sorted(self.state.apps.values(), key=lambda a: a.app_id):
                if app.primary_server != s:
                    continue
                self.state.servers[s].load(app.app_id, app.primary_variant, Tier.LOADING)
                dur = to_us(self.t.fetch_ms + self.state.catalog.load_time(app.primary_variant))
                self.record("primary_reload", app=app.app_id, server=s, duration_us=dur)
                self.schedule(self.now + dur, EventKind.LOAD_COMPLETE, app=app.app_id, gen=-1, step=0, primary=True)

    def _primary_loaded(self, app_id: str) -> None:
        app = self.state.apps[app_id]
        s = app.primary_server
        if s in self.crashed:
            return
        srv = self.state.servers[s]
        srv.loaded[(app_id, app.primary_variant.variant_id)].tier = Tier.PRIMARY
        self._cancel(app_id)
        self.target.pop(app_id, None)
        cur = self.serving[app_id]
        self.serving[app_id] = (s, app.primary_variant)
        # release backups: warm ones return to standby, cold ones are unloaded
        for sid in sorted(self.state.servers):
            if sid == s or sid in self.crashed:
                continue
            other = self.state.servers[sid]
            for p in list(other.entries_for(app_id)):
                key = (app_id, sid, p.variant.variant_id)
                if key in self.warm_origin:
                    p.tier = Tier.WARM
                    reg = self.warm.setdefault(app_id, [])
                    if (p.variant, sid) not in reg:
                        reg.append((p.variant, sid))
                else:
                    other.unload(app_id, p.variant.variant_id)
        tl = self.open.pop(app_id, None)
        if tl is not None:
            tl.switch_back_time = self.now
        self.record("switch_back", app=app_id, server=s, was_serving=None if cur is None else cur[0])
        if tl is not None and not tl.recovered:
            self.record("outage_closed_by_restore", app=app_id)


def run(cfg: SimConfig) -> RunResult:
    return Simulator(cfg).run()
