# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled worst-fit placement kernel; see _kernels_py for the contract."""

import numpy as np
cimport numpy as cnp

cnp.import_array()

cdef double EPS = 1e-9


def place_worst_fit(
    const cnp.int64_t[:] order,
    const cnp.int64_t[:] start,
    const cnp.int64_t[:] nvar,
    const double[:, :] mem,
    const double[:, :] cmp,
    const double[:, :] acc,
    const double[:, :, :] svc,
    const double[:] slo,
    const cnp.int64_t[:] app_site,
    const cnp.uint8_t[:, :] forbid,
    const cnp.int64_t[:] server_class,
    const cnp.int64_t[:] server_site,
    const double[:, :] net,
    double[:] free_mem,
    double[:] free_cmp,
    bint progressive=False,
    bint upgrade=True,
):
    cdef Py_ssize_t n = order.shape[0]
    cdef Py_ssize_t nserv = free_mem.shape[0]
    cdef Py_ssize_t t, i, j, k, v, best
    cdef double small, need_m, need_c, bound, best_m, best_c, held_m, held_c, lat

    out_var_arr = np.full(n, -1, dtype=np.int64)
    out_srv_arr = np.full(n, -1, dtype=np.int64)
    cdef cnp.int64_t[:] out_var = out_var_arr
    cdef cnp.int64_t[:] out_srv = out_srv_arr

    for t in range(n):
        i = order[t]
        small = mem[i, 0] if progressive else 0.0
        bound = slo[i] + EPS
        j = start[i]
        while j >= 0:
            need_m = mem[i, j] + (small if j > 0 else 0.0)
            need_c = cmp[i, j]
            best = -1
            best_m = 0.0
            best_c = 0.0
            for k in range(nserv):
                if forbid[i, k]:
                    continue
                if free_mem[k] < need_m - EPS or free_cmp[k] < need_c - EPS:
                    continue
                lat = svc[i, j, server_class[k]] + net[app_site[i], server_site[k]]
                if lat > bound:
                    continue
                if best < 0 or free_mem[k] > best_m or (free_mem[k] == best_m and free_cmp[k] > best_c):
                    best = k
                    best_m = free_mem[k]
                    best_c = free_cmp[k]
            if best >= 0:
                free_mem[best] = free_mem[best] - need_m
                free_cmp[best] = free_cmp[best] - need_c
                out_var[i] = j
                out_srv[i] = best
                break
            j -= 1

    if upgrade:
        for t in range(n):
            i = order[t]
            k = out_srv[i]
            if k < 0:
                continue
            j = out_var[i]
            small = mem[i, 0] if progressive else 0.0
            held_m = mem[i, j] + (small if j > 0 else 0.0)
            held_c = cmp[i, j]
            bound = slo[i] + EPS
            v = nvar[i] - 1
            while v > j:
                if acc[i, v] > acc[i, j]:
                    need_m = mem[i, v] + small
                    need_c = cmp[i, v]
                    if (need_m <= free_mem[k] + held_m + EPS
                            and need_c <= free_cmp[k] + held_c + EPS
                            and svc[i, v, server_class[k]] + net[app_site[i], server_site[k]] <= bound):
                        free_mem[k] = free_mem[k] + held_m - need_m
                        free_cmp[k] = free_cmp[k] + held_c - need_c
                        out_var[i] = v
                        break
                v -= 1

    return out_var_arr, out_srv_arr
