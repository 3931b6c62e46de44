"""Backend selection for the hot loops.

The numba backend is used by default.  Set ``TCLGAME_DISABLE_NUMBA=1`` to
force the pure-numpy fallback; it is also selected automatically when numba
is not importable.  Both backends produce bit-identical results.
"""

import os


def _numba_requested():
    flag = os.environ.get("TCLGAME_DISABLE_NUMBA", "").strip().lower()
    return flag not in ("1", "true", "yes", "on")


def _load_backend():
    if _numba_requested():
        try:
            from . import _kernels_numba as impl
            return impl, "numba"
        except ImportError:
            pass
    from . import _kernels_numpy as impl
    return impl, "numpy"


_impl, BACKEND = _load_backend()

riccati_sweep = _impl.riccati_sweep
population_sweep = _impl.population_sweep
