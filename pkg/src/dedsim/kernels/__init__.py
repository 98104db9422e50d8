"""Backend selection for the hot integration kernel.

The only performance-critical routine is ``euler_chunk`` (everything else runs
once per sample, not once per step). A compiled version is used when the
extension built, unless ``DEDSIM_FORCE_FALLBACK=1`` is set in the environment;
the pure-numpy fallback is always available and is the arithmetic reference.
Both produce bit-identical state trajectories.
"""

import os

from . import fallback
from .fallback import (
    field_arrays,
    hinge_sigma,
    laplacian_rows,
    row_subgradient,
    subgradient_arrays,
)

if os.environ.get("DEDSIM_FORCE_FALLBACK") == "1":
    _impl = fallback
else:
    try:
        from . import _native as _impl
    except ImportError:
        _impl = fallback

BACKEND = _impl.BACKEND_NAME
euler_chunk = _impl.euler_chunk


def available_backends():
    """Names of the importable euler_chunk implementations."""
    names = ["fallback"]
    try:
        from . import _native  # noqa: F401
        names.append("native")
    except ImportError:
        pass
    return names


def get_backend(name):
    """Fetch a specific euler_chunk implementation by backend name."""
    if name == "fallback":
        return fallback.euler_chunk
    if name == "native":
        from . import _native
        return _native.euler_chunk
    raise ValueError(f"unknown kernel backend: {name!r}")
