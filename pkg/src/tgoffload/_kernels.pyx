# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled slot kernels; must stay bit-identical to _kernels_py."""
from libc.math cimport pow, log2

import numpy as np
cimport numpy as cnp

cnp.import_array()


def rank_pairs(double[::1] score, unsigned char[:, ::1] ok, long[:, :, ::1] out):
    """Top-3 server pairs per device by summed score; returns pair counts per device."""
    cdef Py_ssize_t m = ok.shape[0], n = ok.shape[1]
    cdef Py_ssize_t d, i, j, k, slot, count, single
    cdef long bi[3]
    cdef long bj[3]
    cdef double bs[3]
    cdef double s
    counts = np.zeros(m, dtype=np.int64)
    cdef long[::1] cnt = counts
    for d in range(m):
        count = 0
        single = -1
        for i in range(n):
            if ok[d, i]:
                if single < 0:
                    single = i
                for j in range(i + 1, n):
                    if not ok[d, j]:
                        continue
                    s = score[i] + score[j]
                    # insertion into the top-3 list; scan order gives (i, j) tie-breaks for free
                    if count < 3:
                        slot = count
                        count += 1
                    elif s > bs[2]:
                        slot = 2
                    else:
                        continue
                    while slot > 0 and s > bs[slot - 1]:
                        bs[slot] = bs[slot - 1]
                        bi[slot] = bi[slot - 1]
                        bj[slot] = bj[slot - 1]
                        slot -= 1
                    bs[slot] = s
                    bi[slot] = i
                    bj[slot] = j
        if count == 0:
            for k in range(3):
                out[d, k, 0] = single
                out[d, k, 1] = single
            cnt[d] = 1 if single >= 0 else 0
            continue
        cnt[d] = count
        for k in range(3):
            if k < count:
                out[d, k, 0] = bi[k]
                out[d, k, 1] = bj[k]
            else:
                out[d, k, 0] = bi[0]
                out[d, k, 1] = bj[0]
    return counts


def resolve_slot(double[::1] cap, double[::1] load, double[::1] energy, double[::1] bw,
                 double[:, ::1] dist, double[::1] size, long[::1] prio, double[::1] power,
                 long[::1] m1, long[::1] m2, double[::1] alpha1,
                 double beta, double kappa, double chi, double gain_ref, double eta, double n0,
                 double[:, :, ::1] branch, unsigned char[:, ::1] accepted):
    """Serve devices in id order, mutating `load` and `energy` in place.

    branch[d, b] = (t_trans, e_trans, t_comp, e_comp, freq); accepted[d, b] is 0
    for a refused branch.
    """
    cdef Py_ssize_t nd = size.shape[0]
    cdef Py_ssize_t d, b, srv
    cdef double alpha, h, rate, t, rho, f, p, tc
    for d in range(nd):
        for b in range(2):
            branch[d, b, 0] = 0.0
            branch[d, b, 1] = 0.0
            branch[d, b, 2] = 0.0
            branch[d, b, 3] = 0.0
            branch[d, b, 4] = 0.0
            accepted[d, b] = 0
        if m1[d] < 0:
            continue
        rho = beta * prio[d]
        if rho > 1.0:
            rho = 1.0
        for b in range(2):
            if m1[d] == m2[d]:
                if b == 1:
                    accepted[d, b] = 1
                    continue
                srv = m1[d]
                alpha = 1.0
            elif b == 0:
                srv = m1[d]
                alpha = alpha1[d]
            else:
                srv = m2[d]
                alpha = 1.0 - alpha1[d]
            if alpha == 0.0:
                accepted[d, b] = 1
                continue
            h = gain_ref * pow(dist[d, srv], -eta)
            rate = bw[srv] * log2(1.0 + power[d] * h / (n0 * bw[srv]))
            if not rate > 0.0:
                continue
            t = alpha * size[d] / rate
            branch[d, b, 0] = t
            branch[d, b, 1] = power[d] * t
            f = rho * cap[srv] * (1.0 - load[srv] / cap[srv])
            if not f > 0.0:
                continue
            p = kappa * pow(f, 3.0)
            tc = alpha * size[d] * chi / f
            if energy[srv] < p * tc:
                continue
            branch[d, b, 2] = tc
            branch[d, b, 3] = p * tc
            branch[d, b, 4] = f
            load[srv] += f
            energy[srv] -= p * tc
            accepted[d, b] = 1
