"""Hot numeric kernels with a numba fast path and a pure-numpy fallback.

Backend selection, checked once at import:
  NUTRIPIPE_USE_NUMBA=1  require numba (ImportError surfaces as ConfigError)
  NUTRIPIPE_USE_NUMBA=0  force the pure-numpy implementations
  unset                  use numba when importable, numpy otherwise

NUTRIPIPE_THREADS caps the numba thread pool. Both backends compute
bit-identical results; `benchmarks/bench_kernels.py` compares their speed.
"""

import os

from ..errors import ConfigError
from . import numpy_backend

_flag = os.environ.get("NUTRIPIPE_USE_NUMBA", "").strip().lower()

if _flag in ("0", "false", "no", "off"):
    _use_numba = False
elif _flag in ("1", "true", "yes", "on"):
    try:
        from . import numba_backend
    except ImportError as exc:
        raise ConfigError(f"NUTRIPIPE_USE_NUMBA={_flag} but numba is unavailable: {exc}") from exc
    _use_numba = True
else:
    try:
        from . import numba_backend
        _use_numba = True
    except ImportError:
        _use_numba = False

if _use_numba:
    BACKEND = "numba"
    best_split_scan = numba_backend.best_split_scan
    tree_margin_sum = numba_backend.tree_margin_sum

    _threads = os.environ.get("NUTRIPIPE_THREADS", "").strip()
    if _threads:
        import numba

        try:
            numba.set_num_threads(max(1, min(int(_threads), numba.config.NUMBA_NUM_THREADS)))
        except ValueError as exc:
            raise ConfigError(f"NUTRIPIPE_THREADS={_threads!r} is not an integer") from exc
else:
    BACKEND = "numpy"
    best_split_scan = numpy_backend.best_split_scan
    tree_margin_sum = numpy_backend.tree_margin_sum
