"""Hot-kernel backend selection.

The compiled extension (built from _core.pyx) is used when importable;
otherwise the pure-NumPy twin in _pure takes over. Set the environment
variable SVYCONFORM_PURE_KERNELS=1 before import to force the pure path,
e.g. for benchmarking the two backends against each other.
"""

import os

from . import _pure

if os.environ.get("SVYCONFORM_PURE_KERNELS"):
    _impl = _pure
    BACKEND = "pure"
else:
    try:
        from . import _core as _impl

        BACKEND = "compiled"
    except ImportError:
        _impl = _pure
        BACKEND = "pure"

CUM_RTOL = _pure.CUM_RTOL
padded_quantile_indices = _impl.padded_quantile_indices
ppswor_indices = _impl.ppswor_indices

__all__ = ["BACKEND", "CUM_RTOL", "padded_quantile_indices", "ppswor_indices"]
