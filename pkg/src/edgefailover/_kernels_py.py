"""Pure-Python worst-fit placement kernel.

Same contract as the compiled ``_kernels`` module. Servers are kept in a list
sorted by (free memory desc, free compute desc, index asc) so the first
feasible server met while scanning is the worst-fit choice, and the scan can
stop as soon as free memory drops below the demand.
"""

from __future__ import annotations

from bisect import bisect_left, insort

import numpy as np

EPS = 1e-9


def place_worst_fit(
    order,
    start,
    nvar,
    mem,
    cmp,
    acc,
    svc,
    slo,
    app_site,
    forbid,
    server_class,
    server_site,
    net,
    free_mem,
    free_cmp,
    progressive=False,
    upgrade=True,
):
    """Place apps one by one on the server with the most free memory.

    Arrays (n apps, V variant slots, S servers, C server classes):
      order[n], start[n], nvar[n]      processing order, first variant tried, variant count
      mem, cmp, acc [n, V]             per-variant demands and accuracy, ascending memory
      svc [n, V, C]                    service latency per server class
      slo[n], app_site[n]              latency bound, client site index
      forbid [n, S]                    nonzero where the app may not use the server
      server_class[S], server_site[S]
      net [sites, sites]               client-site to server-site latency
      free_mem, free_cmp [S]           updated in place

    With ``progressive`` any variant other than the smallest also holds the
    smallest variant's memory, since both are resident during the switch.
    Returns (variant index, server index) arrays, -1 where nothing fit.
    """
    n = len(order)
    order_l = [int(x) for x in order]
    start_l = [int(x) for x in start]
    nvar_l = [int(x) for x in nvar]
    mem_l = mem.tolist()
    cmp_l = cmp.tolist()
    acc_l = acc.tolist()
    svc_l = svc.tolist()
    slo_l = slo.tolist()
    site_l = app_site.tolist()
    forbid_l = forbid.tolist()
    cls_l = server_class.tolist()
    ssite_l = server_site.tolist()
    net_l = net.tolist()
    fm = free_mem.tolist()
    fc = free_cmp.tolist()
    nserv = len(fm)

    keys = sorted((-fm[k], -fc[k], k) for k in range(nserv))

    def reposition(k, old_m, old_c):
        pos = bisect_left(keys, (-old_m, -old_c, k))
        del keys[pos]
        insort(keys, (-fm[k], -fc[k], k))

    out_var = [-1] * n
    out_srv = [-1] * n

    for i in order_l:
        m_i = mem_l[i]
        c_i = cmp_l[i]
        svc_i = svc_l[i]
        fb = forbid_l[i]
        net_i = net_l[site_l[i]]
        bound = slo_l[i] + EPS
        small = m_i[0] if progressive else 0.0
        for j in range(start_l[i], -1, -1):
            need_m = m_i[j] + (small if j > 0 else 0.0)
            need_c = c_i[j]
            lat_j = svc_i[j]
            chosen = -1
            for neg_m, neg_c, k in keys:
                if -neg_m < need_m - EPS:
                    break
                if fb[k] or -neg_c < need_c - EPS:
                    continue
                if lat_j[cls_l[k]] + net_i[ssite_l[k]] > bound:
                    continue
                chosen = k
                break
            if chosen >= 0:
                om, oc = fm[chosen], fc[chosen]
                fm[chosen] = om - need_m
                fc[chosen] = oc - need_c
                reposition(chosen, om, oc)
                out_var[i] = j
                out_srv[i] = chosen
                break

    if upgrade:
        for i in order_l:
            k = out_srv[i]
            if k < 0:
                continue
            j = out_var[i]
            m_i = mem_l[i]
            c_i = cmp_l[i]
            small = m_i[0] if progressive else 0.0
            held_m = m_i[j] + (small if j > 0 else 0.0)
            held_c = c_i[j]
            net_ik = net_l[site_l[i]][ssite_l[k]]
            bound = slo_l[i] + EPS
            for v in range(nvar_l[i] - 1, j, -1):
                if acc_l[i][v] <= acc_l[i][j]:
                    continue
                need_m = m_i[v] + small
                need_c = c_i[v]
                if need_m > fm[k] + held_m + EPS or need_c > fc[k] + held_c + EPS:
                    continue
                if svc_l[i][v][cls_l[k]] + net_ik > bound:
                    continue
                om, oc = fm[k], fc[k]
                fm[k] = om + held_m - need_m
                fc[k] = oc + held_c - need_c
                reposition(k, om, oc)
                out_var[i] = v
                break

    free_mem[:] = fm
    free_cmp[:] = fc
    return np.asarray(out_var, dtype=np.int64), np.asarray(out_srv, dtype=np.int64)
