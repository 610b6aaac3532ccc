"""Pick the simulation kernel at import time.

The compiled ``_ckernel`` is used when it imports; otherwise, or when
``ERASURENET_BACKEND=python`` is set, the pure-Python engine runs instead.
Both expose ``simulate_slotted`` and ``simulate_async`` with the same
signatures and produce identical results for the same random stream.
"""

from __future__ import annotations

import os

from . import _pysim

python_kernel = _pysim

try:
    from . import _ckernel as compiled_kernel
except ImportError:  # extension not built
    compiled_kernel = None

if compiled_kernel is not None and os.environ.get("ERASURENET_BACKEND", "").lower() != "python":
    kernel = compiled_kernel
    NAME = "compiled"
else:
    kernel = python_kernel
    NAME = "python"


def get(name: str | None = None):
    """Kernel module by name (``"compiled"`` / ``"python"``); ``None`` means the default."""
    if name is None:
        return kernel
    if name == "python":
        return python_kernel
    if name == "compiled":
        if compiled_kernel is None:
            raise RuntimeError("compiled kernel not built; run `pip install -e . --no-build-isolation`")
        return compiled_kernel
    raise ValueError(f"unknown backend {name!r}")
