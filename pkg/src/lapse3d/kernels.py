"""Kernel dispatch: compiled extension when importable, else pure Python.

Set ``LAPSE3D_PURE_PYTHON=1`` to force the fallback. ``BACKEND`` records
which one is active.
"""

import os

from . import _pykernels

if os.environ.get("LAPSE3D_PURE_PYTHON"):
    _impl = _pykernels
else:
    try:
        from . import _core as _impl
    except ImportError:  # pragma: no cover - depends on build
        _impl = _pykernels

BACKEND = "python" if _impl is _pykernels else "compiled"

priority_flood = _impl.priority_flood
frechet_table = _impl.frechet_table
lattice_splat = _impl.lattice_splat
lattice_slice = _impl.lattice_slice

python = _pykernels


def compiled():
    """The compiled module, or ``None`` if it was not built."""
    try:
        from . import _core
    except ImportError:  # pragma: no cover
        return None
    return _core
