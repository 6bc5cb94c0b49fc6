import json

import pytest

from edgefailover.scenario import Scenario, ScenarioError
from edgefailover.simengine import EventKind, SimulationFault, Simulator, choose_critical, to_us

from conftest import single_app_scenario


def only(res):
    assert len(res.timelines) == 1
    return res.timelines[0]


def test_warm_failover_mttr():
    res, m = single_app_scenario(k_fraction=1.0).run()
    tl = only(res)
    assert tl.path == "warm"
    assert tl.detection_time == to_us(100)
    assert tl.mttr_ms == 65.0
    assert m.recovery_rate == 100.0 and m.acc_reduction == 0.0


def test_cold_progressive_mttr_and_upgrade():
    res, _ = single_app_scenario(k_fraction=0.0).run()
    tl = only(res)
    assert tl.path == "cold"
    assert tl.mttr_ms == pytest.approx(100 - 45 + 441 + 10)
    assert tl.upgrade_time == to_us(100 + 441 + 2105)
    assert tl.final_variant == "convnext_large"


def test_cold_direct_load():
    res, _ = single_app_scenario(k_fraction=0.0, progressive=False).run()
    tl = only(res)
    assert tl.mttr_ms == pytest.approx(55 + 2105 + 10)
    assert tl.upgrade_time is None


def test_progressive_cuts_mttr_by_three_quarters():
    prog = only(single_app_scenario(k_fraction=0.0).run()[0]).mttr_ms
    direct = only(single_app_scenario(k_fraction=0.0, progressive=False).run()[0]).mttr_ms
    assert 1 - prog / direct == pytest.approx(0.767, abs=0.005)


def test_small_primary_cold():
    tl = only(single_app_scenario("convnext_tiny", k_fraction=0.0).run()[0])
    assert tl.mttr_ms == pytest.approx(506.0)
    assert tl.final_variant == "convnext_tiny"


def test_restore_switches_back():
    res, _ = single_app_scenario(k_fraction=0.0, restores=(3000,)).run()
    tl = only(res)
    assert tl.switch_back_time == to_us(3000 + 2105)
    kinds = [r["kind"] for r in res.records]
    assert kinds.index("restore") < kinds.index("primary_reload") < kinds.index("switch_back")
    b = res.state.servers["b"]
    assert not b.loaded  # cold backups are released
    assert ("app", "convnext_large") in res.state.servers["a"].loaded


def test_warm_backup_returns_to_standby():
    res, _ = single_app_scenario(k_fraction=1.0, restores=(3000,)).run()
    b = res.state.servers["b"]
    assert [p.tier.value for p in b.loaded.values()] == ["warm"]


def test_second_failure_after_restore():
    sc = single_app_scenario(k_fraction=0.0, restores=(3000,))
    sc = sc.with_overrides(injections=[{"time_ms": 45, "targets": ["a"]}, {"time_ms": 6045, "targets": ["a"]}])
    res, m = sc.run(check_invariants=True)
    assert len(res.timelines) == 2
    assert [t.mttr_ms for t in res.timelines] == pytest.approx([506.0, 506.0])
    assert m.affected == 2


def test_restore_after_horizon_is_ignored():
    res, _ = single_app_scenario(k_fraction=0.0, restores=(30_000,)).run()
    assert "restore" not in [r["kind"] for r in res.records]
    assert only(res).switch_back_time is None


def test_restore_of_live_server_is_noop():
    sc = single_app_scenario(k_fraction=0.0).with_overrides(restores=[{"time_ms": 10, "targets": ["b"]}])
    res, _ = sc.run()
    assert "restore_noop" in [r["kind"] for r in res.records]


def test_double_injection_is_noop():
    sc = single_app_scenario(k_fraction=0.0).with_overrides(
        injections=[{"time_ms": 45, "targets": ["a"]}, {"time_ms": 50, "targets": ["a"]}]
    )
    res, _ = sc.run()
    assert "inject_noop" in [r["kind"] for r in res.records]
    assert len(res.timelines) == 1


def three_server(crash_target_ms):
    return Scenario.from_dict(
        {
            "schema_version": 1,
            "name": "chain",
            "cluster": {
                "servers": [
                    {"server_id": "a", "site_id": "x", "mem_gib": 16},
                    {"server_id": "b", "site_id": "y", "mem_gib": 8},
                    {"server_id": "c", "site_id": "z", "mem_gib": 16},
                ],
                "apps": [{"app_id": "app", "family_id": "convnext", "primary_variant": "convnext_large", "primary_server": "a"}],
            },
            "policy": {"k_fraction": 0.0},
            "headroom": None,
            "injections": [{"time_ms": 45, "targets": ["a"]}, {"time_ms": crash_target_ms, "targets": ["c"]}],
            "horizon_ms": 20_000,
        }
    )


def test_target_dies_during_load():
    # c is the roomiest spare and gets the reload; it dies before the small model is up
    res, m = three_server(300).run(check_invariants=True)
    kinds = [r["kind"] for r in res.records]
    assert "load_failed" in kinds or "detect" in kinds
    tl = only(res)
    assert tl.recovered
    assert res.records[[r["kind"] for r in res.records].index("notify")]["server"] == "b"
    assert tl.mttr_ms > 506


def test_backup_dies_after_recovery_reopens():
    res, m = three_server(5000).run(check_invariants=True)
    assert len(res.timelines) == 2
    assert all(t.recovered for t in res.timelines)
    assert res.timelines[1].failure_time == to_us(5000)


def test_runs_are_deterministic():
    sc = Scenario.load("testbed6")
    a, _ = sc.run(seed=3)
    b, _ = sc.run(seed=3)
    assert a.log_lines() == b.log_lines()
    c, _ = sc.run(seed=4)
    assert a.log_lines() != c.log_lines()


@pytest.mark.parametrize("policy", ["FailLite", "FullWarm", "FullCold", "FullWarmK"])
def test_conservation_every_event(policy):
    sc = Scenario.load("testbed6").with_overrides(restores=[{"time_ms": 12_000, "targets": []}])
    res, m = sc.run(seed=1, policy=policy, check_invariants=True)
    assert m.affected > 0
    for srv in res.state.servers.values():
        assert srv.used().mem <= srv.physical.mem + 1e-6


def test_site_failure_hits_every_server_of_site():
    sc = Scenario.load("large100")
    res, m = sc.run(seed=2)
    inj = next(r for r in res.records if r["kind"] == "inject_site")
    site = inj["sites"][0]
    crashed = {r["server"] for r in res.records if r["kind"] == "crash"}
    assert crashed == set(res.state.sites[site])
    affected = {t.app_id for t in res.timelines}
    assert affected == {a.app_id for a in res.state.apps.values() if a.primary_server in crashed}


def test_jittered_heartbeats_still_detect():
    sc = single_app_scenario(k_fraction=0.0, timings={"jitter_ms": 5})
    res, _ = sc.run()
    tl = only(res)
    assert tl.recovered
    assert 0 < tl.detection_time - tl.failure_time <= to_us(2 * 20 + 100 + 5)


def test_unknown_injection_target():
    sc = single_app_scenario().with_overrides(injections=[{"time_ms": 45, "targets": ["nope"]}])
    with pytest.raises(ScenarioError):
        sc.run()


def test_schedule_in_past_is_a_fault():
    sim = Simulator(single_app_scenario().sim_config())
    sim.now = 100
    with pytest.raises(SimulationFault):
        sim.schedule(50, EventKind.HEARTBEAT)


def test_choose_critical_nests():
    import random

    ids = [f"a{i}" for i in range(40)]
    small = choose_critical(ids, 0.25, random.Random(5))
    big = choose_critical(ids, 0.5, random.Random(5))
    assert len(small) == 10 and len(big) == 20
    assert small <= big


def test_log_is_json_lines():
    res, _ = single_app_scenario().run()
    for line in res.log_lines():
        json.loads(line)
    assert "heartbeat" not in {json.loads(l)["kind"] for l in res.log_lines()}
