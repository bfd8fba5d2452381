"""Backend selection for the hot kernels.

The compiled extension is used when it imports; otherwise the numpy fallback.
Set ``CV2X_EMU_KERNELS=python`` to force the fallback.
"""
from __future__ import annotations

import os

from . import _pykernels

_impl = _pykernels
BACKEND = "python"

if os.environ.get("CV2X_EMU_KERNELS", "").lower() != "python":
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]
        BACKEND = "cython"
    except ImportError:
        pass


def available_backends():
    names = ["python"]
    try:
        from . import _ckernels  # noqa: F401
        names.append("cython")
    except ImportError:
        pass
    return names


def use_backend(name: str) -> None:
    global _impl, BACKEND
    if name == "python":
        _impl = _pykernels
    elif name == "cython":
        from . import _ckernels
        _impl = _ckernels
    else:
        raise ValueError(f"unknown kernel backend {name!r}")
    BACKEND = name


def keyed_hash(seed, stream, a, b, c):
    return _impl.keyed_hash(seed, stream, a, b, c)


def keyed_uniform(seed, stream, a, b, c):
    return _impl.keyed_uniform(seed, stream, a, b, c)


def keyed_normal(seed, stream, a, b, c):
    return _impl.keyed_normal(seed, stream, a, b, c)


def sinr_grouped(group, rx_mw, starts, length, n_sub, n_groups, noise_mw, min_mode=False):
    return _impl.sinr_grouped(group, rx_mw, starts, length, n_sub, n_groups, noise_mw, min_mode)


def blocking_rsrp(win_idx, starts, lens, rsrp_dbm, n_win, n_sub, cand_len):
    return _impl.blocking_rsrp(win_idx, starts, lens, rsrp_dbm, n_win, n_sub, cand_len)
