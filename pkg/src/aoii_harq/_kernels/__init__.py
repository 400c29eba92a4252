"""Hot-kernel backends: compiled Cython extension with a pure fallback.

The compiled module is preferred when it imported successfully; set the
environment variable ``AOII_HARQ_KERNELS`` to ``pure`` or ``compiled`` to
force a backend (forcing ``compiled`` raises if the extension is absent).
Both backends implement the same functions with identical semantics, and
the simulators consume the random stream identically, so results do not
depend on which one is active (simulated trajectories are bit-identical,
value sweeps agree to floating-point round-off).
"""

from __future__ import annotations

import os

from . import pure

try:
    from . import _core as compiled
except ImportError:
    compiled = None

HAVE_COMPILED = compiled is not None

_ENV_VAR = "AOII_HARQ_KERNELS"


def get_backend(name: str | None = None):
    """Return the kernel module to use: `name`, the env override, or the best."""
    choice = name if name is not None else os.environ.get(_ENV_VAR)
    if choice in (None, "", "auto"):
        return compiled if HAVE_COMPILED else pure
    if choice == "pure":
        return pure
    if choice == "compiled":
        if not HAVE_COMPILED:
            raise RuntimeError(
                "compiled kernels requested but the extension is not built; "
                "reinstall the package with a C compiler available"
            )
        return compiled
    raise ValueError(f"unknown kernel backend {choice!r} (use 'pure' or 'compiled')")


def backend_name(backend=None) -> str:
    return (backend or get_backend()).NAME
