"""Kernel backend selection.

The compiled extension is used when importable.  Set
``REQUANT_BACKEND=python`` to force the numpy fallback, or
``REQUANT_BACKEND=compiled`` to make a missing extension an error.
"""
import os

_choice = os.environ.get("REQUANT_BACKEND", "auto").strip().lower()
if _choice not in ("auto", "compiled", "python"):
    raise ImportError(f"REQUANT_BACKEND must be auto, compiled or python, got {_choice!r}")

kernels = None
if _choice != "python":
    try:
        from . import _kernels as kernels
    except ImportError:
        if _choice == "compiled":
            raise
        kernels = None
if kernels is None:
    from . import _fallback as kernels

BACKEND = "compiled" if kernels.__name__.endswith("_kernels") else "python"


def get(name: str):
    """Return the kernel ``name`` from the active backend."""
    return getattr(kernels, name)
