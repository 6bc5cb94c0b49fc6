"""Selects the compiled placement kernel when it was built, else the Python one.

Set ``EDGEFAILOVER_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _kernels_py

python_place_worst_fit = _kernels_py.place_worst_fit

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

compiled_place_worst_fit = _compiled.place_worst_fit if _compiled is not None else None

if compiled_place_worst_fit is not None and not os.environ.get("EDGEFAILOVER_PURE_PYTHON"):
    place_worst_fit = compiled_place_worst_fit
    BACKEND = "compiled"
else:
    place_worst_fit = python_place_worst_fit
    BACKEND = "python"
