"""Pure numpy implementations of the hot kernels.

Arithmetic order mirrors ``_ckernels.pyx`` so both backends agree to the last
few ulps (transcendentals may differ by one ulp between libm and numpy).
"""
from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_NORMAL_SALT = np.uint64(0xD1B54A32D192ED03)
_S30, _S27, _S31, _S11 = (np.uint64(k) for k in (30, 27, 31, 11))
_INV53 = 1.0 / 9007199254740992.0


def _mix(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def _u64(v):
    return np.asarray(v, dtype=np.int64).astype(np.uint64)


def keyed_hash(seed, stream, a, b, c):
    with np.errstate(over="ignore"):
        h = _mix(_u64(seed) + _GOLDEN * (_u64(stream) + np.uint64(1)))
        h = _mix(h ^ (_u64(a) + _GOLDEN))
        h = _mix(h ^ (_u64(b) + _GOLDEN * np.uint64(2)))
        h = _mix(h ^ (_u64(c) + _GOLDEN * np.uint64(3)))
    return h


def keyed_uniform(seed, stream, a, b, c):
    h = keyed_hash(seed, stream, a, b, c)
    return (h >> _S11).astype(np.float64) * _INV53


def keyed_normal(seed, stream, a, b, c):
    h = keyed_hash(seed, stream, a, b, c)
    with np.errstate(over="ignore"):
        h2 = _mix(h ^ _NORMAL_SALT)
    u1 = 1.0 - (h >> _S11).astype(np.float64) * _INV53
    u2 = (h2 >> _S11).astype(np.float64) * _INV53
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def sinr_grouped(group, rx_mw, starts, length, n_sub, n_groups, noise_mw, min_mode=False):
    """Per-transmission SINR (dB) with interference summed per (group, subchannel).

    ``rx_mw`` is each transmission's total received power, spread evenly over
    its ``length`` subchannels. Returns (sinr_db, total_mw) where total_mw is the
    (n_groups, n_sub) received power grid excluding noise.
    """
    group = np.asarray(group, dtype=np.int64)
    starts = np.asarray(starts, dtype=np.int64)
    psd = np.asarray(rx_mw, dtype=np.float64) / length
    total = np.zeros((n_groups, n_sub))
    for l in range(length):
        np.add.at(total, (group, starts + l), psd)
    acc = None
    for l in range(length):
        interf = np.maximum(total[group, starts + l] - psd, 0.0)
        with np.errstate(divide="ignore"):
            s = psd / (interf + noise_mw)
        if acc is None:
            acc = s
        elif min_mode:
            acc = np.minimum(acc, s)
        else:
            acc = acc + s
    if acc is None:
        return np.zeros(0), total
    if not min_mode:
        acc = acc / length
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(acc), total


def blocking_rsrp(win_idx, starts, lens, rsrp_dbm, n_win, n_sub, cand_len):
    """Max RSRP of sensed reservations overlapping each candidate (w, start).

    Entry i covers subchannels [starts[i], starts[i] + lens[i]) of window
    subframe win_idx[i]. Returns an (n_win, n_sub - cand_len + 1) array, -inf
    where nothing overlaps.
    """
    win_idx = np.asarray(win_idx, dtype=np.int64)
    starts = np.asarray(starts, dtype=np.int64)
    lens = np.asarray(lens, dtype=np.int64)
    rsrp = np.asarray(rsrp_dbm, dtype=np.float64)
    grid = np.full((n_win, n_sub), -np.inf)
    for l in range(int(lens.max()) if len(lens) else 0):
        m = lens > l
        np.maximum.at(grid, (win_idx[m], starts[m] + l), rsrp[m])
    n_starts = n_sub - cand_len + 1
    out = grid[:, :n_starts].copy()
    for l in range(1, cand_len):
        np.maximum(out, grid[:, l:l + n_starts], out=out)
    return out
