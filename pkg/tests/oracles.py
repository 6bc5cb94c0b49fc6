"""Independent reference implementations used as test oracles.

These are deliberately naive: plain enumeration, no shared code with the
solvers under test beyond the data types.
"""

from __future__ import annotations

import itertools
import math

from edgefailover.cluster import EPS


def warm_options(problem, app):
    st = problem.state
    opts = []
    for v in problem.variants(app):
        for k in problem.servers:
            if k == app.primary_server:
                continue
            if problem.site_independence and st.site_of(k) == st.primary_site(app):
                continue
            if st.latency(app, v, k) > app.slo_ms + EPS:
                continue
            opts.append((v, k))
    return opts


def brute_force_warm(problem):
    """Best objective over every assignment of one backup per critical app.

    Returns ``-inf`` when no assignment satisfies all constraints.
    """
    apps = problem.critical_apps
    budget_m = (1 - problem.alpha) * sum(problem.free[k].mem for k in problem.servers)
    budget_c = (1 - problem.alpha) * sum(problem.free[k].compute for k in problem.servers)
    best = -math.inf
    for combo in itertools.product(*(warm_options(problem, a) for a in apps)):
        used = {}
        tm = tc = 0.0
        for v, k in combo:
            m, c = used.get(k, (0.0, 0.0))
            used[k] = (m + v.mem_demand, c + v.compute_demand)
            tm += v.mem_demand
            tc += v.compute_demand
        if tm > budget_m + EPS or tc > budget_c + EPS:
            continue
        if any(m > problem.free[k].mem + EPS or c > problem.free[k].compute + EPS for k, (m, c) in used.items()):
            continue
        obj = math.fsum(a.rate * v.norm_accuracy for a, (v, _) in zip(apps, combo))
        best = max(best, obj)
    return best
