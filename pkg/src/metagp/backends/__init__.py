"""Backend selection for the squared-exponential hot kernels.

The compiled extension is preferred when it imported cleanly; set
``METAGP_BACKEND=numpy`` or ``METAGP_BACKEND=cython`` to pin one explicitly
(pinning ``cython`` raises if the extension is unavailable). Selection
happens once at import time so a run never mixes backends.
"""

import os

from . import sqexp_numpy

try:
    from . import _sqexp
except ImportError:
    _sqexp = None


def _select():
    choice = os.environ.get("METAGP_BACKEND", "auto").lower()
    if choice == "numpy":
        return sqexp_numpy
    if choice == "cython":
        if _sqexp is None:
            raise ImportError(
                "METAGP_BACKEND=cython but the compiled extension is not built; "
                "reinstall without METAGP_SKIP_EXT"
            )
        return _sqexp
    if choice == "auto":
        return _sqexp if _sqexp is not None else sqexp_numpy
    raise ValueError(f"unknown METAGP_BACKEND {choice!r}; use auto, numpy or cython")


active = _select()

sqexp_matrix = active.sqexp_matrix
sqexp_vjp = active.sqexp_vjp
BACKEND_NAME = active.NAME


def available_backends():
    """Names of the importable backends, compiled one first."""
    out = []
    if _sqexp is not None:
        out.append(_sqexp)
    out.append(sqexp_numpy)
    return out
