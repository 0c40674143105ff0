# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels; ``_kernels_py`` holds the numpy equivalents."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, fabs, INFINITY

cnp.import_array()


cdef inline double _lse(double* v, Py_ssize_t n) noexcept nogil:
    cdef double m = v[0]
    cdef double s = 0.0
    cdef Py_ssize_t k
    for k in range(1, n):
        if v[k] > m:
            m = v[k]
    for k in range(n):
        s += exp(v[k] - m)
    return m + log(s)


def lbp_pairwise(cnp.int64_t[::1] cards, cnp.int64_t[::1] var_off, double[::1] unary,
                 cnp.int64_t[:, ::1] edges, cnp.int64_t[::1] edge_off, double[::1] edge_theta,
                 cnp.int64_t[::1] msg_off, double[::1] msg,
                 double damping, double tol, long max_iters):
    cdef Py_ssize_t num_edges = edges.shape[0]
    cdef Py_ssize_t e, a, b, i, j, ci, cj, o, t, lo, hi, k
    cdef double[::1] new = np.empty(msg.shape[0])
    cdef double[::1] tot = np.empty(unary.shape[0])
    cdef double[::1] work = np.empty(max(int(np.max(cards)) if cards.shape[0] else 1, 1))
    cdef double[::1] cav_i = np.empty_like(work)
    cdef double[::1] cav_j = np.empty_like(work)
    cdef double residual = INFINITY
    cdef double m, s, z, upd, d
    cdef long it = 0
    with nogil:
        for it in range(1, max_iters + 1):
            for k in range(unary.shape[0]):
                tot[k] = unary[k]
            for e in range(num_edges):
                i = edges[e, 0]; j = edges[e, 1]
                ci = cards[i]; cj = cards[j]; o = msg_off[e]
                for a in range(ci):
                    tot[var_off[i] + a] += msg[o + a]
                for b in range(cj):
                    tot[var_off[j] + b] += msg[o + ci + b]
            for e in range(num_edges):
                i = edges[e, 0]; j = edges[e, 1]
                ci = cards[i]; cj = cards[j]; o = msg_off[e]; t = edge_off[e]
                for a in range(ci):
                    cav_i[a] = tot[var_off[i] + a] - msg[o + a]
                for b in range(cj):
                    cav_j[b] = tot[var_off[j] + b] - msg[o + ci + b]
                # into j: logsumexp over x_i
                for b in range(cj):
                    m = edge_theta[t + b] + cav_i[0]
                    for a in range(1, ci):
                        z = edge_theta[t + a * cj + b] + cav_i[a]
                        if z > m:
                            m = z
                    s = 0.0
                    for a in range(ci):
                        s += exp(edge_theta[t + a * cj + b] + cav_i[a] - m)
                    new[o + ci + b] = m + log(s)
                # into i: logsumexp over x_j
                for a in range(ci):
                    m = edge_theta[t + a * cj] + cav_j[0]
                    for b in range(1, cj):
                        z = edge_theta[t + a * cj + b] + cav_j[b]
                        if z > m:
                            m = z
                    s = 0.0
                    for b in range(cj):
                        s += exp(edge_theta[t + a * cj + b] + cav_j[b] - m)
                    new[o + a] = m + log(s)
                z = _lse(&new[o], ci)
                for a in range(ci):
                    new[o + a] -= z
                z = _lse(&new[o + ci], cj)
                for b in range(cj):
                    new[o + ci + b] -= z
            residual = 0.0
            for e in range(num_edges):
                i = edges[e, 0]; j = edges[e, 1]
                ci = cards[i]; cj = cards[j]; o = msg_off[e]
                for k in range(2):
                    if k == 0:
                        lo = o; hi = o + ci
                    else:
                        lo = o + ci; hi = o + ci + cj
                    for a in range(lo, hi):
                        work[a - lo] = (1.0 - damping) * msg[a] + damping * new[a]
                    z = _lse(&work[0], hi - lo)
                    for a in range(lo, hi):
                        upd = work[a - lo] - z
                        d = fabs(upd - msg[a])
                        if d > residual:
                            residual = d
                        msg[a] = upd
            if residual <= tol:
                break
    return it, residual


def project_simplex_blocks(double[::1] values, cnp.int64_t[::1] offsets, double total):
    cdef Py_ssize_t nb = offsets.shape[0] - 1
    cdef Py_ssize_t k, r, lo, n, rho
    cdef double css, tau, cur
    out = np.empty(values.shape[0])
    cdef double[::1] o = out
    cdef double[::1] u
    for k in range(nb):
        lo = offsets[k]
        n = offsets[k + 1] - lo
        u = np.sort(np.asarray(values[lo:lo + n]))[::-1].copy()
        css = 0.0
        rho = 0
        tau = 0.0
        for r in range(n):
            css += u[r]
            cur = (css - total) / (r + 1.0)
            if u[r] - cur > 0:
                rho = r
                tau = cur
        for r in range(n):
            o[lo + r] = values[lo + r] - tau
            if o[lo + r] < 0:
                o[lo + r] = 0.0
    return out
