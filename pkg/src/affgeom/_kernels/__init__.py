"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the numpy
implementation. Set ``AFFGEOM_PURE_PYTHON=1`` to force the fallback.
"""

import contextlib
import os

from . import _pykernels as python

compiled = None
if not os.environ.get("AFFGEOM_PURE_PYTHON"):
    try:
        from . import _ckernels as compiled
    except ImportError:
        compiled = None

_BACKENDS = {"python": python}
if compiled is not None:
    _BACKENDS["compiled"] = compiled

_active = compiled if compiled is not None else python


def backend():
    """Module providing the kernels currently in use."""
    return _active


def backend_name():
    return "compiled" if _active is compiled and compiled is not None else "python"


def available():
    return sorted(_BACKENDS)


@contextlib.contextmanager
def use_backend(name):
    """Temporarily switch kernels (``"python"`` or ``"compiled"``)."""
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"kernel backend {name!r} not available; have {available()}")
    previous = _active
    _active = _BACKENDS[name]
    try:
        yield _active
    finally:
        _active = previous
