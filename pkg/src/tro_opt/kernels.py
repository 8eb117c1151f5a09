"""Backend selection for the hot kernels.

The compiled extension is used when it imports; otherwise, or when
``TRO_OPT_PURE_PYTHON=1`` is set, the numpy implementations are used. Both
backends are importable directly for cross-checking and benchmarking.
"""
from __future__ import annotations

import os

from . import _pykernels as py

ACT_TANH = py.ACT_TANH
ACT_RELU = py.ACT_RELU
LOSS_LOGISTIC = py.LOSS_LOGISTIC
LOSS_SQUARED = py.LOSS_SQUARED

try:
    from . import _ckernels as compiled
except ImportError:  # extension not built
    compiled = None

if compiled is not None and os.environ.get("TRO_OPT_PURE_PYTHON", "") != "1":
    _impl = compiled
    BACKEND = "compiled"
else:
    _impl = py
    BACKEND = "python"

project_simplex = _impl.project_simplex
brandes = _impl.brandes
loss_grad = _impl.loss_grad


def available_backends():
    out = {"python": py}
    if compiled is not None:
        out["compiled"] = compiled
    return out
