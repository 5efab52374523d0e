"""Hot inner kernels of the simplex engine and the enumeration oracle.

The compiled extension is used when it was built; set
``TOPOCAND_PURE_PYTHON=1`` to force the numpy fallback.
"""

import os

from . import _py

BACKEND = "python"
_impl = _py

if os.environ.get("TOPOCAND_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _py

ftran_etas = _impl.ftran_etas
btran_etas = _impl.btran_etas
price = _impl.price
primal_ratio = _impl.primal_ratio
dual_ratio = _impl.dual_ratio
binary_screen = _impl.binary_screen

BASIC, AT_LB, AT_UB, FREE, FIXED = _py.BASIC, _py.AT_LB, _py.AT_UB, _py.FREE, _py.FIXED

__all__ = ["BACKEND", "ftran_etas", "btran_etas", "price", "primal_ratio", "dual_ratio",
           "binary_screen", "BASIC", "AT_LB", "AT_UB", "FREE", "FIXED"]
