"""Elementwise float64 sin/cos with an optional vectorised backend.

numpy 2.x evaluates float64 sin/cos with scalar libm calls, which dominates
training time. When torch is importable its SIMD kernels (within 1 ulp) are
used instead; set ``STAF_TRIG=numpy`` to force the numpy path. ``STAF_THREADS``
caps the backend's thread count.
"""

import os

import numpy as np

_MIN_SIZE = 4096
_backend = None


def _load():
    global _backend
    if _backend is not None:
        return _backend
    _backend = False
    if os.environ.get("STAF_TRIG", "auto").lower() != "numpy":
        try:
            import torch

            threads = os.environ.get("STAF_THREADS")
            if threads:
                torch.set_num_threads(max(1, int(threads)))
            _backend = torch
        except ImportError:
            pass
    return _backend


def backend_name() -> str:
    return "torch" if _load() else "numpy"


def _apply(name, x, out):
    x = np.asarray(x, dtype=np.float64)
    torch = _load()
    if not torch or x.size < _MIN_SIZE or x.ndim == 0:
        return getattr(np, name)(x, out=out) if out is not None else getattr(np, name)(x)
    x = np.ascontiguousarray(x)
    if out is None or not out.flags.c_contiguous:
        res = np.empty_like(x)
    else:
        res = out
    getattr(torch, name)(torch.from_numpy(x), out=torch.from_numpy(res))
    if out is not None and res is not out:
        out[...] = res
        return out
    return res


def sin(x, out=None):
    return _apply("sin", x, out)


def cos(x, out=None):
    return _apply("cos", x, out)
