"""Kernel backend selection.

The compiled extension is preferred when importable; the pure-Python
fallback is numerically identical, just slower. Selection happens once
at import. Set ``LORAFED_BACKEND=python`` to force the fallback or
``LORAFED_BACKEND=compiled`` to insist on the extension (ImportError if
it was not built).
"""

from __future__ import annotations

import os

_choice = os.environ.get("LORAFED_BACKEND", "auto").lower()

if _choice not in ("auto", "python", "compiled"):
    raise ValueError(
        f"LORAFED_BACKEND={_choice!r} not understood (use auto, python or compiled)"
    )

if _choice == "python":
    from lorafed import _kernels_py as kernels

    BACKEND = "python"
elif _choice == "compiled":
    from lorafed import _kernels as kernels  # type: ignore[no-redef]

    BACKEND = "compiled"
else:
    try:
        from lorafed import _kernels as kernels  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        from lorafed import _kernels_py as kernels  # type: ignore[no-redef]

        BACKEND = "python"
