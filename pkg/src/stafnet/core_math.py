"""Dense float64 linear algebra, Kronecker products, a Jacobi eigensolver and seeded sampling.

Matrices are plain ``numpy.ndarray`` objects of dtype float64 and ndim 2.
"""

from dataclasses import dataclass

import numpy as np

from .errors import CapacityError, NumericError, RangeError, ShapeError, ValidationError

MAX_ELEMENTS = 1 << 31
JACOBI_MAX_SWEEPS = 100


def as_matrix(x) -> np.ndarray:
    m = np.asarray(x, dtype=np.float64)
    if m.ndim == 1:
        m = m[:, None]
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got ndim={m.ndim}")
    return m


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def kron(a, b) -> np.ndarray:
    """Kronecker product built from the index law (X⊗Y)[i, j] = X[i//p, j//q] · Y[i%p, j%q]."""
    a = as_matrix(a)
    b = as_matrix(b)
    rows = a.shape[0] * b.shape[0]
    cols = a.shape[1] * b.shape[1]
    if rows * cols > MAX_ELEMENTS:
        raise CapacityError(f"Kronecker product of shape {rows}x{cols} exceeds {MAX_ELEMENTS} elements")
    out = a[:, None, :, None] * b[None, :, None, :]
    return out.reshape(rows, cols)


@dataclass(frozen=True)
class EigenResult:
    eigenvalues: np.ndarray  # descending
    eigenvectors: np.ndarray  # column k pairs with eigenvalues[k]


def check_symmetric(m, rtol=1e-10) -> np.ndarray:
    m = as_matrix(m)
    if m.shape[0] != m.shape[1]:
        raise ValidationError(f"matrix must be square, got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValidationError("matrix has non-finite entries")
    scale = np.max(np.abs(m)) if m.size else 0.0
    if np.max(np.abs(m - m.T), initial=0.0) > rtol * max(scale, np.finfo(float).tiny):
        raise ValidationError("matrix is not symmetric within tolerance")
    return m


def sym_eig(m, max_sweeps=JACOBI_MAX_SWEEPS) -> EigenResult:
    """Cyclic Jacobi eigendecomposition of a symmetric matrix.

    Eigenvalues come back in descending order; each eigenvector is
    sign-normalised so its largest-magnitude entry is positive.
    """
    a = check_symmetric(m)
    n = a.shape[0]
    a = 0.5 * (a + a.T)
    v = np.eye(n)
    norm = np.linalg.norm(a)
    if n > 1 and norm > 0.0:
        target = (1e-15 * norm) ** 2
        iu = np.triu_indices(n, 1)
        for _ in range(max_sweeps):
            if 2.0 * np.sum(a[iu] ** 2) <= target:
                break
            for p in range(n - 1):
                for q in range(p + 1, n):
                    apq = a[p, q]
                    if abs(apq) < 1e-300:
                        continue
                    theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                    t = 1.0 / (abs(theta) + np.sqrt(theta * theta + 1.0))
                    if theta < 0.0:
                        t = -t
                    c = 1.0 / np.sqrt(t * t + 1.0)
                    s = t * c
                    col_p = a[:, p].copy()
                    col_q = a[:, q]
                    a[:, p] = c * col_p - s * col_q
                    a[:, q] = s * col_p + c * col_q
                    row_p = a[p, :].copy()
                    row_q = a[q, :]
                    a[p, :] = c * row_p - s * row_q
                    a[q, :] = s * row_p + c * row_q
                    a[p, q] = a[q, p] = 0.0
                    vp = v[:, p].copy()
                    vq = v[:, q]
                    v[:, p] = c * vp - s * vq
                    v[:, q] = s * vp + c * vq
        else:
            if 2.0 * np.sum(a[iu] ** 2) > target:
                raise NumericError(f"Jacobi eigensolver did not converge in {max_sweeps} sweeps")
    w = np.diag(a).copy()
    order = np.argsort(-w, kind="stable")
    w = w[order]
    v = v[:, order]
    for k in range(n):
        j = np.argmax(np.abs(v[:, k]))
        if v[j, k] < 0:
            v[:, k] = -v[:, k]
    return EigenResult(w, v)


class Rng:
    """Seeded PCG64 stream; the same seed gives the same draws on every platform."""

    def __init__(self, seed: int = 0):
        self.seed = int(seed)
        self.gen = np.random.Generator(np.random.PCG64(self.seed))

    def spawn(self, key: int) -> "Rng":
        """Independent child stream, derived deterministically from (seed, key)."""
        child = Rng.__new__(Rng)
        child.seed = self.seed
        ss = np.random.SeedSequence([self.seed, int(key)])
        child.gen = np.random.Generator(np.random.PCG64(ss))
        return child

    def random(self, size=None):
        return self.gen.random(size)

    def normal(self, size=None):
        return self.gen.standard_normal(size)

    def poisson(self, lam, size=None):
        return self.gen.poisson(lam, size)

    def __repr__(self):
        return f"Rng(seed={self.seed})"


def sample_uniform(rng: Rng, lo: float, hi: float, size=None):
    """Draw from U[lo, hi); never returns ``hi`` even after rounding."""
    if not lo < hi:
        raise RangeError(f"need lo < hi, got lo={lo}, hi={hi}")
    x = lo + (hi - lo) * rng.random(size)
    below = np.nextafter(hi, lo)
    if size is None:
        return float(min(x, below))
    return np.minimum(x, below)


def sample_laplace(rng: Rng, scale: float, size=None):
    if not scale > 0:
        raise RangeError(f"Laplace scale must be positive, got {scale}")
    x = rng.gen.laplace(0.0, scale, size)
    return float(x) if size is None else x
