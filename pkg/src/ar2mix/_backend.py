"""Select the compiled core when importable, else the numpy fallback.

Set ``AR2MIX_PURE_PYTHON=1`` to force the fallback.
"""

import os

BACKEND = "python"
if os.environ.get("AR2MIX_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from ._core import density_row, whittle_loglik  # noqa: F401

        BACKEND = "cython"
    except ImportError:  # extension not built
        pass
if BACKEND == "python":
    from ._fallback import density_row, whittle_loglik  # noqa: F401

from . import _fallback as fallback  # noqa: E402,F401
