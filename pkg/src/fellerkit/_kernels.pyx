# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: keyed uniforms, one-step particle transport, greedy merging."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, sqrt, fabs, isfinite
from libc.stdint cimport uint64_t, int64_t

cnp.import_array()

BACKEND = "cython"

cdef uint64_t _GOLDEN = 0x9E3779B97F4A7C15ULL
cdef uint64_t _K_TRAJ = 0x9E3779B97F4A7C15ULL
cdef uint64_t _K_STEP = 0xD1B54A32D192ED03ULL
cdef uint64_t _K_SLOT = 0x8CB92BA72F3D8DD7ULL
cdef double _TWO53 = 1.0 / 9007199254740992.0


cdef inline uint64_t _mix(uint64_t z) noexcept nogil:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline double _uniform(uint64_t seed, uint64_t traj, uint64_t step, uint64_t slot) noexcept nogil:
    cdef uint64_t h = _mix(seed ^ _GOLDEN)
    h = _mix(h + traj * _K_TRAJ)
    h = _mix(h + step * _K_STEP)
    h = _mix(h + slot * _K_SLOT)
    return (<double>(h >> 11) + 0.5) * _TWO53


def keyed_uniforms(seed, traj, step, slot):
    cdef const cnp.uint64_t[::1] t = np.ascontiguousarray(np.atleast_1d(traj), dtype=np.uint64)
    cdef Py_ssize_t n = t.shape[0], k
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    cdef uint64_t s = seed, st = step, sl = slot
    with nogil:
        for k in range(n):
            o[k] = _uniform(s, t[k], st, sl)
    return out.reshape(np.shape(traj))


def particle_step(const double[:, ::1] X, const cnp.uint64_t[::1] traj, uint64_t step, uint64_t seed,
                  const double[:, :, ::1] A, const double[:, ::1] b, int prob_kind, const double[::1] cumw,
                  const double[:, ::1] theta, const double[::1] offs, const double[::1] lam, double gamma,
                  int has_flow):
    cdef Py_ssize_t n = X.shape[0], d = X.shape[1], N = A.shape[0]
    cdef Py_ssize_t k, i, j, m, choice
    out = np.empty((n, d), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef double[::1] xi = np.empty(d, dtype=np.float64)
    cdef double[::1] cum = np.empty(N, dtype=np.float64)
    cdef double dt, u1, acc, mx, tot, v
    cdef Py_ssize_t bad = -1
    with nogil:
        for k in range(n):
            if has_flow:
                dt = -log(_uniform(seed, traj[k], step, 0)) / gamma
                for j in range(d):
                    xi[j] = X[k, j] * exp(dt * lam[j])
            else:
                for j in range(d):
                    xi[j] = X[k, j]
            u1 = _uniform(seed, traj[k], step, 1)
            if prob_kind == 0:
                for i in range(N):
                    cum[i] = cumw[i]
            else:
                mx = -1e308
                for i in range(N):
                    acc = offs[i]
                    for j in range(d):
                        acc = acc + theta[i, j] * xi[j]
                    cum[i] = acc
                    if acc > mx:
                        mx = acc
                tot = 0.0
                for i in range(N):
                    cum[i] = exp(cum[i] - mx)
                    tot = tot + cum[i]
                acc = 0.0
                for i in range(N):
                    acc = acc + cum[i]
                    cum[i] = acc / tot
            choice = N - 1
            for i in range(N):
                if u1 < cum[i]:
                    choice = i
                    break
            for m in range(d):
                acc = 0.0
                for j in range(d):
                    acc = acc + A[choice, m, j] * xi[j]
                v = acc + b[choice, m]
                o[k, m] = v
                if bad < 0 and not isfinite(v):
                    bad = k
    return out, bad


def greedy_merge(const double[:, ::1] points, const cnp.int64_t[::1] order, double radius, double window,
                 int metric_kind, double cap):
    cdef Py_ssize_t n = points.shape[0], d = points.shape[1]
    labels_arr = np.full(n, -1, dtype=np.int64)
    cdef cnp.int64_t[::1] labels = labels_arr
    cdef cnp.int64_t[::1] by_x = np.ascontiguousarray(np.argsort(np.asarray(points[:, 0]), kind="stable"), dtype=np.int64)
    cdef cnp.int64_t[::1] pos = np.empty(n, dtype=np.int64)
    cdef Py_ssize_t r, a, p, q, c, j, side
    cdef cnp.int64_t k = 0
    cdef double dist, diff, x0
    for r in range(n):
        pos[by_x[r]] = r
    with nogil:
        for r in range(n):
            a = order[r]
            if labels[a] != -1:
                continue
            labels[a] = k
            p = pos[a]
            x0 = points[a, 0]
            for side in range(2):
                q = p - 1 if side == 0 else p + 1
                while 0 <= q < n:
                    c = by_x[q]
                    if fabs(points[c, 0] - x0) >= window:
                        break
                    if labels[c] == -1:
                        dist = 0.0
                        for j in range(d):
                            diff = points[c, j] - points[a, j]
                            if metric_kind == 1:
                                if fabs(diff) > dist:
                                    dist = fabs(diff)
                            else:
                                dist = dist + diff * diff
                        if metric_kind != 1:
                            dist = sqrt(dist)
                            if metric_kind == 2 and dist > cap:
                                dist = cap
                        if dist < radius:
                            labels[c] = k
                    q = q - 1 if side == 0 else q + 1
            k += 1
    return labels_arr
