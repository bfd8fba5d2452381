# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels; same contracts as ``_pykernels``."""
import numpy as np

from libc.math cimport log, log10, sqrt, cos, INFINITY, M_PI
from libc.stdint cimport uint64_t, int64_t

cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL
cdef uint64_t NORMAL_SALT = 0xD1B54A32D192ED03ULL
cdef double INV53 = 1.0 / 9007199254740992.0


cdef inline uint64_t _mix(uint64_t z) noexcept nogil:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline uint64_t _hash(uint64_t seed, uint64_t stream, uint64_t a, uint64_t b, uint64_t c) noexcept nogil:
    cdef uint64_t h = _mix(seed + GOLDEN * (stream + 1))
    h = _mix(h ^ (a + GOLDEN))
    h = _mix(h ^ (b + GOLDEN * 2))
    return _mix(h ^ (c + GOLDEN * 3))


def _keys(a, b, c):
    a = np.asarray(a, dtype=np.int64)
    shape = np.broadcast(a, np.asarray(b), np.asarray(c)).shape
    return (np.ascontiguousarray(np.broadcast_to(a, shape)).ravel(),
            np.ascontiguousarray(np.broadcast_to(np.asarray(b, dtype=np.int64), shape)).ravel(),
            np.ascontiguousarray(np.broadcast_to(np.asarray(c, dtype=np.int64), shape)).ravel(),
            shape)


def keyed_hash(seed, stream, a, b, c):
    av, bv, cv, shape = _keys(a, b, c)
    out = np.empty(av.shape[0], dtype=np.uint64)
    cdef const int64_t[::1] A = av, B = bv, C = cv
    cdef uint64_t[::1] O = out
    cdef uint64_t s = <uint64_t><int64_t>seed, st = <uint64_t><int64_t>stream
    cdef Py_ssize_t i
    for i in range(A.shape[0]):
        O[i] = _hash(s, st, <uint64_t>A[i], <uint64_t>B[i], <uint64_t>C[i])
    return out.reshape(shape)


def keyed_uniform(seed, stream, a, b, c):
    av, bv, cv, shape = _keys(a, b, c)
    out = np.empty(av.shape[0], dtype=np.float64)
    cdef const int64_t[::1] A = av, B = bv, C = cv
    cdef double[::1] O = out
    cdef uint64_t s = <uint64_t><int64_t>seed, st = <uint64_t><int64_t>stream
    cdef Py_ssize_t i
    for i in range(A.shape[0]):
        O[i] = <double>(_hash(s, st, <uint64_t>A[i], <uint64_t>B[i], <uint64_t>C[i]) >> 11) * INV53
    return out.reshape(shape)


def keyed_normal(seed, stream, a, b, c):
    av, bv, cv, shape = _keys(a, b, c)
    out = np.empty(av.shape[0], dtype=np.float64)
    cdef const int64_t[::1] A = av, B = bv, C = cv
    cdef double[::1] O = out
    cdef uint64_t s = <uint64_t><int64_t>seed, st = <uint64_t><int64_t>stream
    cdef uint64_t h, h2
    cdef double u1, u2
    cdef Py_ssize_t i
    for i in range(A.shape[0]):
        h = _hash(s, st, <uint64_t>A[i], <uint64_t>B[i], <uint64_t>C[i])
        h2 = _mix(h ^ NORMAL_SALT)
        u1 = 1.0 - <double>(h >> 11) * INV53
        u2 = <double>(h2 >> 11) * INV53
        O[i] = sqrt(-2.0 * log(u1)) * cos(2.0 * M_PI * u2)
    return out.reshape(shape)


def sinr_grouped(group, rx_mw, starts, int length, int n_sub, int n_groups, double noise_mw, bint min_mode=False):
    cdef const int64_t[::1] G = np.ascontiguousarray(group, dtype=np.int64)
    cdef const int64_t[::1] S = np.ascontiguousarray(starts, dtype=np.int64)
    cdef const double[::1] P = np.ascontiguousarray(rx_mw, dtype=np.float64)
    cdef Py_ssize_t n = P.shape[0], i, l
    total = np.zeros((n_groups, n_sub))
    sinr = np.empty(n)
    psd_arr = np.empty(n)
    cdef double[:, ::1] T = total
    cdef double[::1] O = sinr, psd = psd_arr
    cdef double acc, interf, v
    for i in range(n):
        psd[i] = P[i] / length
    for l in range(length):
        for i in range(n):
            T[G[i], S[i] + l] += psd[i]
    for i in range(n):
        acc = 0.0
        for l in range(length):
            interf = T[G[i], S[i] + l] - psd[i]
            if interf < 0.0:
                interf = 0.0
            v = psd[i] / (interf + noise_mw)
            if l == 0:
                acc = v
            elif min_mode:
                if v < acc:
                    acc = v
            else:
                acc = acc + v
        if not min_mode:
            acc = acc / length
        O[i] = 10.0 * log10(acc) if acc > 0.0 else -INFINITY
    return sinr, total


def blocking_rsrp(win_idx, starts, lens, rsrp_dbm, int n_win, int n_sub, int cand_len):
    cdef const int64_t[::1] W = np.ascontiguousarray(win_idx, dtype=np.int64)
    cdef const int64_t[::1] S = np.ascontiguousarray(starts, dtype=np.int64)
    cdef const int64_t[::1] L = np.ascontiguousarray(lens, dtype=np.int64)
    cdef const double[::1] R = np.ascontiguousarray(rsrp_dbm, dtype=np.float64)
    cdef int n_starts = n_sub - cand_len + 1
    grid_arr = np.full((n_win, n_sub), -np.inf)
    out_arr = np.empty((n_win, n_starts))
    cdef double[:, ::1] grid = grid_arr, out = out_arr
    cdef Py_ssize_t i, l, w, j
    cdef double m
    for i in range(W.shape[0]):
        for l in range(L[i]):
            if R[i] > grid[W[i], S[i] + l]:
                grid[W[i], S[i] + l] = R[i]
    for w in range(n_win):
        for j in range(n_starts):
            m = grid[w, j]
            for l in range(1, cand_len):
                if grid[w, j + l] > m:
                    m = grid[w, j + l]
            out[w, j] = m
    return out_arr
