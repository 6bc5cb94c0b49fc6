"""Push-style liveness detection.

Servers send a keep-alive every ``period`` ms; the controller wakes every
``check_interval`` ms and declares failed any server it has not heard from for
more than two periods. Times are plain numbers in whatever unit the caller
uses consistently (the simulator passes microseconds).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping


class ProtocolError(Exception):
    """Heartbeat or restore for a server the detector does not know."""


@dataclass
class HeartbeatState:
    servers: frozenset[str]
    period: float = 20.0
    check_interval: float = 100.0
    misses: int = 2
    last_seen: dict[str, float] = field(default_factory=dict)
    declared_failed: set[str] = field(default_factory=set)

    def __post_init__(self) -> None:
        self.servers = frozenset(self.servers)
        if self.period <= 0 or self.check_interval <= 0:
            raise ValueError("period and check_interval must be positive")
        unknown = set(self.last_seen) - self.servers
        if unknown:
            raise ProtocolError(f"unknown servers: {sorted(unknown)}")

    @classmethod
    def start(cls, servers: Iterable[str], now: float = 0.0, **kwargs) -> "HeartbeatState":
        """Fresh state where every server was just heard from at ``now``."""
        servers = frozenset(servers)
        return cls(servers, last_seen={s: now for s in servers}, **kwargs)

    @property
    def timeout(self) -> float:
        return self.misses * self.period

    def record_heartbeat(self, server: str, now: float) -> None:
        if server not in self.servers:
            raise ProtocolError(f"heartbeat from unknown server {server!r}")
        self.last_seen[server] = now

    def check(self, now: float) -> set[str]:
        """Declare every live server silent for more than two periods; returns the new ones."""
        newly = {
            s
            for s in self.servers
            if s not in self.declared_failed and now - self.last_seen.get(s, now) > self.timeout
        }
        self.declared_failed |= newly
        return newly

    def restore(self, server: str, now: float) -> None:
        if server not in self.servers:
            raise ProtocolError(f"restore of unknown server {server!r}")
        self.declared_failed.discard(server)
        self.last_seen[server] = now

    def is_failed(self, server: str) -> bool:
        return server in self.declared_failed

    def failed_sites(self, sites: Mapping[str, Iterable[str]]) -> set[str]:
        """Sites all of whose members are declared failed."""
        out = set()
        for site, members in sites.items():
            members = list(members)
            if members and all(m in self.declared_failed for m in members):
                out.add(site)
        return out

    def snapshot(self) -> dict:
        return {
            "last_seen": dict(sorted(self.last_seen.items())),
            "declared_failed": sorted(self.declared_failed),
        }


def detection_latency(
    crash: float,
    period: float = 20.0,
    check_interval: float = 100.0,
    hb_phase: float = 0.0,
    check_phase: float = 0.0,
    misses: int = 2,
) -> float:
    """Closed-form declaration delay for a crash at ``crash`` on fixed grids.

    Heartbeats go out at ``hb_phase + n*period`` (one sent exactly at the crash
    instant still counts), checks run at ``check_phase + m*check_interval``.
    """
    n = math.floor((crash - hb_phase) / period)
    last = hb_phase + n * period
    # first check strictly after last + misses*period
    deadline = last + misses * period
    m = math.floor((deadline - check_phase) / check_interval) + 1
    t = check_phase + m * check_interval
    return t - crash
