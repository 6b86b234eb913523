"""Kernel backend selection: compiled Cython extension or pure numpy.

The compiled backend is preferred when importable. Set ``I2IDIFF_KERNELS`` to
``"python"`` or ``"compiled"`` to force one; ``"compiled"`` raises if the
extension is missing. Both backends are bit-identical, so the choice only
affects speed (see ``benchmarks/bench_kernels.py``).
"""

import os

from . import kernels_py

try:
    from i2idiff import _kernels as _compiled
except ImportError:  # pragma: no cover - depends on build environment
    _compiled = None

_choice = os.environ.get("I2IDIFF_KERNELS", "auto").lower()
if _choice not in ("auto", "python", "compiled"):
    raise ValueError(f"I2IDIFF_KERNELS must be auto|python|compiled, got {_choice!r}")
if _choice == "compiled" and _compiled is None:
    raise ImportError("I2IDIFF_KERNELS=compiled but the i2idiff._kernels "
                      "extension is not built")

USE_COMPILED = _compiled is not None and _choice != "python"
BACKEND_NAME = "compiled" if USE_COMPILED else "python"

_impl = _compiled if USE_COMPILED else kernels_py


def get_backend(name: str = "active"):
    """Return the kernel module for `name` in {"active", "python", "compiled"}."""
    if name == "active":
        return _impl
    if name == "python":
        return kernels_py
    if name == "compiled":
        if _compiled is None:
            raise ImportError("compiled kernels not available")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")


def im2col(xp, kh, kw, sy=1, sx=1, dy=1, dx=1):
    return _impl.im2col(xp, kh, kw, sy, sx, dy, dx)


def col2im(cols, c, hp, wp, kh, kw, sy=1, sx=1, dy=1, dx=1):
    return _impl.col2im(cols, c, hp, wp, kh, kw, sy, sx, dy, dx)
