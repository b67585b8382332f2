"""Kernel selection.

The compiled extension is used when it imports; otherwise the numpy
reference implementation. ``WRFLOW_BACKEND=python`` forces the fallback and
``WRFLOW_BACKEND=compiled`` makes a missing extension an import error.
"""

import os

_choice = os.environ.get("WRFLOW_BACKEND", "auto").strip().lower()
if _choice not in ("auto", "python", "compiled"):
    raise ImportError(f"WRFLOW_BACKEND must be auto, python or compiled, not {_choice!r}")

if _choice == "python":
    from . import _kernel_py as kernel
else:
    try:
        from . import _kernel_c as kernel
    except ImportError:
        if _choice == "compiled":
            raise
        from . import _kernel_py as kernel

NAME = "compiled" if kernel.__name__.endswith("_kernel_c") else "python"

__all__ = ["kernel", "NAME"]
