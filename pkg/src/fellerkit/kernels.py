"""Backend selection for the hot kernels.

The compiled extension is used when it imports; otherwise the numpy fallback.
Set ``FELLERKIT_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _fallback

if os.environ.get("FELLERKIT_PURE_PYTHON", "") not in ("", "0"):
    _impl = _fallback
else:
    try:
        from . import _kernels as _impl
    except ImportError:  # extension not built
        _impl = _fallback

BACKEND = _impl.BACKEND
keyed_uniforms = _impl.keyed_uniforms
particle_step = _impl.particle_step
greedy_merge = _impl.greedy_merge


def backends():
    """All importable backends as a name -> module mapping (fallback always present)."""
    out = {"python": _fallback}
    try:
        from . import _kernels

        out["cython"] = _kernels
    except ImportError:
        pass
    return out
