"""Network kernel backend selection.

The compiled extension (_fast, Cython) and the numpy fallback (pyref) expose
the same three entry points with identical semantics:

    forward(theta, d, L, n_hid, z, need_cache) -> (values, cache)
    backward(theta, d, L, n_hid, z, cache, w)  -> flat gradient
    jet(theta, d, L, n_hid, z0, z1, z2)        -> (v0, v1, v2)

The extension is used when importable; set PIDESOL_BACKEND=python to force
the fallback or PIDESOL_BACKEND=fast to fail loudly if the build is missing.
Caches are backend-specific by contract even though the formats currently
coincide.
"""

import os

_requested = os.environ.get("PIDESOL_BACKEND", "")
if _requested not in ("", "fast", "python"):
    raise ValueError(f"PIDESOL_BACKEND must be 'fast' or 'python', got {_requested!r}")

if _requested == "python":
    from . import pyref as _impl
    BACKEND = "python"
else:
    try:
        from . import _fast as _impl
        BACKEND = "fast"
    except ImportError:
        if _requested == "fast":
            raise
        from . import pyref as _impl
        BACKEND = "python"

forward = _impl.forward
backward = _impl.backward
jet = _impl.jet


def get_backend(name):
    """Return the kernel module for an explicit backend name (for benchmarks/tests)."""
    if name == "python":
        from . import pyref
        return pyref
    if name == "fast":
        from . import _fast
        return _fast
    raise ValueError(f"unknown backend {name!r}")
