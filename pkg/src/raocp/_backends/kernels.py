"""Kernel backend selection.

The compiled extension is preferred when present; the numpy fallback is
always available.  Set RAOCP_KERNELS=py or RAOCP_KERNELS=c to force one.
"""

from __future__ import annotations

import os

from . import py_kernels

_selected = None


def available():
    """Mapping of backend name -> module for every importable backend."""
    out = {py_kernels.NAME: py_kernels}
    try:
        from . import _ckernels

        out[_ckernels.NAME] = _ckernels
    except ImportError:
        pass
    return out


def select():
    global _selected
    if _selected is not None:
        return _selected
    forced = os.environ.get("RAOCP_KERNELS")
    mods = available()
    if forced:
        alias = {"py": "python", "python": "python", "c": "cython",
                 "cython": "cython"}
        name = alias.get(forced)
        if name is None or name not in mods:
            raise RuntimeError(
                f"RAOCP_KERNELS={forced!r} is not an available backend "
                f"(have: {sorted(mods)})")
        _selected = mods[name]
    else:
        _selected = mods.get("cython", py_kernels)
    return _selected
