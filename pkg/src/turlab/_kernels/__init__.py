"""Hot Monte Carlo loops with a compiled backend and a pure-Python fallback.

The compiled extension is used when it imports; setting the environment
variable ``TURLAB_PURE_PYTHON=1`` forces the fallback.  :func:`use_backend`
switches at runtime (used by the benchmark and the parity tests).
"""

from __future__ import annotations

import os

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # pragma: no cover - depends on the build
    _ckernels = None

HAVE_COMPILED = _ckernels is not None

_active = _pykernels
if HAVE_COMPILED and os.environ.get("TURLAB_PURE_PYTHON", "") not in ("1", "true", "yes"):
    _active = _ckernels


def backend() -> str:
    return "compiled" if _active is _ckernels else "python"


def use_backend(name: str) -> None:
    global _active
    if name == "compiled":
        if not HAVE_COMPILED:
            raise RuntimeError("compiled kernels are not built")
        _active = _ckernels
    elif name == "python":
        _active = _pykernels
    else:
        raise ValueError(f"unknown backend {name!r}")


def metropolis_chain(*args):
    return _active.metropolis_chain(*args)


def exchange_apply(*args):
    return _active.exchange_apply(*args)
