"""Hot numeric kernels with a compiled core and a pure-numpy fallback.

The compiled extension is preferred when importable; setting the environment
variable ``HYPERPATH_PURE_PYTHON`` (to any nonempty value) before import
forces the numpy fallback. Both backends share one contract: 1-D float64
arrays in, a new 1-D float64 array out.
"""

import os

if os.environ.get("HYPERPATH_PURE_PYTHON"):
    from . import _fallback as _impl

    COMPILED = False
else:
    try:
        from . import _core as _impl  # type: ignore[attr-defined]

        COMPILED = True
    except ImportError:
        from . import _fallback as _impl

        COMPILED = False

BACKEND = _impl.BACKEND
theta_root_batch = _impl.theta_root_batch
bessel_j1_batch = _impl.bessel_j1_batch

__all__ = ["BACKEND", "COMPILED", "bessel_j1_batch", "theta_root_batch"]
