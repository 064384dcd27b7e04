"""Backend selection for the hot geometric kernels.

The compiled extension is used when it imports; otherwise the numpy fallback.
Set ``LOWERTAIL_BACKEND=python`` to force the fallback.
"""
import os

from . import _fallback

BACKEND = "python"
_impl = _fallback

if os.environ.get("LOWERTAIL_BACKEND", "").lower() != "python":
    try:
        from . import _kernels as _impl  # noqa: F811

        BACKEND = "compiled"
    except ImportError:
        _impl = _fallback

# the compiled scan keeps per-axis state in fixed arrays of this length
MAX_COMPILED_DIM = 8


def backend_for(dim):
    """Kernel module able to serve dimension ``dim``."""
    if _impl is not _fallback and dim > MAX_COMPILED_DIM:
        return _fallback
    return _impl
