"""Bi-temporal change detection with pixel-wise uncertainty.

Importing the package caps numeric worker threads (ARCD_THREADS,
default 1) before numpy spins up BLAS pools, keeping runs reproducible.
"""

import os as _os

_threads = _os.environ.get("ARCD_THREADS", "1")
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    _os.environ.setdefault(_var, _threads)

__version__ = "0.1.0"
