"""Backend dispatch for the hot conv/pool kernels.

The environment variable GRAPHDA_USE_NUMBA selects the path:
  "auto" (default) - numba if importable, else pure numpy
  "1"              - require numba, fail loudly if missing
  "0"              - force the pure-numpy fallback
"""

from __future__ import annotations

import os

from . import numpy_ops

_flag = os.environ.get("GRAPHDA_USE_NUMBA", "auto").strip().lower()

if _flag in ("0", "false", "no", "off"):
    _impl = numpy_ops
    BACKEND = "numpy"
elif _flag in ("1", "true", "yes", "on"):
    from . import numba_ops as _impl

    BACKEND = "numba"
else:
    try:
        from . import numba_ops as _impl

        BACKEND = "numba"
    except ImportError:
        _impl = numpy_ops
        BACKEND = "numpy"

conv2d_forward = _impl.conv2d_forward
conv2d_backward = _impl.conv2d_backward
maxpool2d_forward = _impl.maxpool2d_forward
maxpool2d_backward = _impl.maxpool2d_backward
