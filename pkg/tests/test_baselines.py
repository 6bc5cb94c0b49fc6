import random

from edgefailover.baselines import (
    FullCold,
    FullWarm,
    FullWarmK,
    cold_order,
    plan_full_cold,
    plan_full_warm,
    warm_order,
)
from edgefailover.catalog import default_catalog
from edgefailover.scenario import Scenario

from conftest import make_state


def small_state():
    cat = default_catalog()
    return make_state(
        cat,
        [("p", "s1", 4000), ("b", "s2", 1000)],
        [
            ("big", "convnext", "convnext_large", "p"),
            ("mid", "convnext", "convnext_base", "p"),
            ("tiny", "mobilenet", cat.family("mobilenet").largest.variant_id, "p"),
        ],
    )


def test_warm_order_critical_first():
    st = small_state()
    order = warm_order(list(st.apps.values()), {"tiny"})
    assert order[0].app_id == "tiny"


def test_full_warm_uses_full_size_only():
    st = small_state()
    plan = plan_full_warm(st, list(st.apps.values()), set())
    for app_id, reps in plan.warm.items():
        assert reps == [(st.apps[app_id].primary_variant, "b")]
    # 1000 MiB spare: the large model fits and nothing else of size does
    assert "big" in plan.warm and "mid" in plan.unplaced


def test_full_cold_never_downsizes():
    st = small_state()
    st.fail("p")
    apps = list(st.apps.values())
    dec = plan_full_cold(st, apps, ["b"], set(), random.Random(0))
    for a, v in dec.selection.items():
        assert v is st.apps[a].primary_variant
        assert len(dec.schedule[a]) == 1
    assert set(dec.selection) | set(dec.unrecovered) == {a.app_id for a in apps}


def test_cold_order_is_seeded():
    st = small_state()
    apps = list(st.apps.values())
    o1 = [a.app_id for a in cold_order(apps, set(), random.Random(1))]
    o2 = [a.app_id for a in cold_order(apps, set(), random.Random(1))]
    assert o1 == o2
    assert cold_order(apps, {"mid"}, random.Random(1))[0].app_id == "mid"


def test_policy_names_and_hooks():
    assert FullWarm().name == "FullWarm"
    assert FullCold().name == "FullCold"
    assert FullWarmK().name == "FullWarmK"
    st = small_state()
    assert FullCold().prepare(st, set(), random.Random(0)).warm == {}
    plan = FullWarmK().prepare(st, {"mid"}, random.Random(0))
    assert set(plan.warm) == {"mid"}


def test_full_warm_on_testbed_never_loses_accuracy():
    sc = Scenario.load("testbed6")
    for pol in ("FullWarm", "FullCold", "FullWarmK"):
        _, m = sc.run(seed=0, policy=pol)
        assert m.acc_reduction in (0.0, None)
