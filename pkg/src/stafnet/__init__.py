"""Coordinate networks with trainable sinusoidal activations, plus the tools to analyse them."""

import os

# STAF_THREADS caps worker threads; BLAS reads these only before numpy loads.
_threads = os.environ.get("STAF_THREADS")
if _threads:
    for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

from .errors import StafError  # noqa: E402

__version__ = "0.1.0"
__all__ = ["StafError", "__version__"]
