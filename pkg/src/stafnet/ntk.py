"""Dual activation in closed form, its Monte-Carlo oracle, analytic and empirical NTKs, spectra.

For ``rho(x) = sum_i C_i sin(Omega_i x + Phi_i)`` and standard normals ``u, v``
with correlation ``xi``, the product-to-sum identity gives

    E[rho(u) rho(v)] = 1/2 sum_ij C_i C_j exp(-(Omega_i^2 + Omega_j^2)/2)
                       [exp(Omega_i Omega_j xi) cos(Phi_i - Phi_j)
                        - exp(-Omega_i Omega_j xi) cos(Phi_i + Phi_j)].

``sign="printed"`` swaps the minus for a plus; it is kept only to show that
the variant fails the Monte-Carlo check.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .activation import ActivationParams, staf_eval
from .core_math import EigenResult, Rng, as_matrix, check_symmetric, sym_eig
from .errors import CapacityError, DomainError, UnsupportedError, ValidationError
from .network import Network, backward, forward

SIGNS = ("corrected", "printed")
XI_SLACK = 1e-12
NTK_MAX_BYTES = 1 << 31


@dataclass
class DualActivationParams:
    params: ActivationParams
    normalize: bool = False
    sign: str = "corrected"

    def __post_init__(self):
        if self.params.per_neuron:
            raise ValidationError("the dual activation needs one shared (C, Omega, Phi) triple")
        if self.sign not in SIGNS:
            raise ValidationError(f"sign must be one of {SIGNS}, got {self.sign!r}")


def _as_dual(p, normalize=None, sign=None) -> DualActivationParams:
    if isinstance(p, ActivationParams):
        p = DualActivationParams(p)
    if normalize is not None or sign is not None:
        p = DualActivationParams(
            p.params,
            p.normalize if normalize is None else normalize,
            p.sign if sign is None else sign,
        )
    return p


def _pair_terms(p: ActivationParams):
    c, w, ph = p.amplitudes, p.frequencies, p.phases
    cc = np.outer(c, c)
    ww = np.outer(w, w)
    sq = -0.5 * (w[:, None] ** 2 + w[None, :] ** 2)
    return cc, ww, sq, np.cos(ph[:, None] - ph[None, :]), np.cos(ph[:, None] + ph[None, :])


def _raw_dual(p: ActivationParams, xi, sign: str):
    xi = np.asarray(xi, dtype=np.float64)
    cc, ww, sq, cmin, cplus = _pair_terms(p)
    x = xi[..., None, None]
    s = -1.0 if sign == "corrected" else 1.0
    # exponents combined before exp: both are <= 0 for |xi| <= 1
    terms = np.exp(sq + ww * x) * cmin + s * np.exp(sq - ww * x) * cplus
    return 0.5 * np.sum(cc * terms, axis=(-2, -1))


def _raw_dual_derivative(p: ActivationParams, xi, sign: str):
    xi = np.asarray(xi, dtype=np.float64)
    cc, ww, sq, cmin, cplus = _pair_terms(p)
    x = xi[..., None, None]
    s = -1.0 if sign == "corrected" else 1.0
    terms = np.exp(sq + ww * x) * cmin - s * np.exp(sq - ww * x) * cplus
    return 0.5 * np.sum(cc * ww * terms, axis=(-2, -1))


def _check_xi(xi):
    xi = np.asarray(xi, dtype=np.float64)
    if np.any(np.abs(xi) > 1.0 + XI_SLACK):
        raise DomainError(f"correlation must lie in [-1, 1], got {xi}")
    return np.clip(xi, -1.0, 1.0)


def _scalar(v):
    return float(v) if np.ndim(v) == 0 else v


def dual_activation(p, xi, normalize: Optional[bool] = None, sign: Optional[str] = None):
    """rho-check(xi); with ``normalize`` the activation is scaled so that rho-check(1) = 1."""
    d = _as_dual(p, normalize, sign)
    xi = _check_xi(xi)
    val = _raw_dual(d.params, xi, d.sign)
    if d.normalize:
        val = val / _normaliser(d)
    return _scalar(val)


def dual_activation_derivative(p, xi, normalize: Optional[bool] = None, sign: Optional[str] = None):
    d = _as_dual(p, normalize, sign)
    xi = _check_xi(xi)
    val = _raw_dual_derivative(d.params, xi, d.sign)
    if d.normalize:
        val = val / _normaliser(d)
    return _scalar(val)


def _normaliser(d: DualActivationParams) -> float:
    n = float(_raw_dual(d.params, 1.0, d.sign))
    if not n > 0:
        raise DomainError(f"cannot normalise: rho-check(1) = {n} is not positive")
    return n


def mc_dual_oracle(p, xi: float, n: int, rng: Rng, chunk: int = 250_000):
    """Sample mean of rho(u) rho(v) with u = z1, v = xi z1 + sqrt(1 - xi^2) z2, and its standard error."""
    d = _as_dual(p)
    if n < 10_000:
        raise ValidationError(f"need at least 10^4 samples, got {n}")
    if abs(xi) > 1.0 + XI_SLACK:
        raise DomainError(f"correlation must lie in [-1, 1], got {xi}")
    xi = float(np.clip(xi, -1.0, 1.0))
    comp = np.sqrt(max(0.0, 1.0 - xi * xi))
    total = 0.0
    total_sq = 0.0
    done = 0
    while done < n:
        m = min(chunk, n - done)
        z = rng.normal((2, m))
        u = z[0]
        v = xi * z[0] + comp * z[1]
        prod = staf_eval(d.params, u) * staf_eval(d.params, v)
        total += float(np.sum(prod))
        total_sq += float(np.sum(prod * prod))
        done += m
    mean = total / n
    var = max(0.0, (total_sq / n - mean * mean)) * n / (n - 1)
    return mean, float(np.sqrt(var / n))


def analytic_ntk(p, depth: int, x, xt, normalize: bool = True, sign: Optional[str] = None):
    """(Sigma^(L), K^(L)) after ``depth`` steps from Sigma^(0) = K^(0) = x . xt."""
    d = _as_dual(p, normalize, sign)
    if depth < 0:
        raise ValidationError("depth must be non-negative")
    x = np.asarray(x, dtype=np.float64).ravel()
    xt = np.asarray(xt, dtype=np.float64).ravel()
    if x.shape != xt.shape:
        raise ValidationError(f"input lengths differ: {x.shape} vs {xt.shape}")
    xi = float(x @ xt)
    if abs(xi) > 1.0 + XI_SLACK:
        raise DomainError(f"x . xt = {xi} lies outside [-1, 1]; inputs must be on the unit sphere")
    sigma = kern = float(np.clip(xi, -1.0, 1.0))
    for _ in range(depth):
        s_in = float(np.clip(sigma, -1.0, 1.0))
        sigma = dual_activation(d, s_in)
        kern = sigma + kern * dual_activation_derivative(d, s_in)
    return sigma, kern


@dataclass
class KernelMatrix:
    matrix: np.ndarray
    provenance: str  # "analytic" or "empirical"
    inputs: np.ndarray

    def __post_init__(self):
        self.matrix = check_symmetric(self.matrix)
        if self.provenance not in ("analytic", "empirical"):
            raise ValidationError(f"unknown provenance {self.provenance!r}")


def _flat_grads(bundle, include_activation: bool) -> np.ndarray:
    return bundle.flat(include_activation)


def empirical_ntk(
    net: Network, inputs, include_activation: bool = False, max_bytes: int = NTK_MAX_BYTES
) -> KernelMatrix:
    """K = J J^T with J the per-input parameter gradients, one backward pass per input.

    Only weights and biases are differentiated unless ``include_activation``
    is set (the activation parameters are treated as fixed).
    """
    if net.config.output_dim != 1:
        raise UnsupportedError(f"empirical NTK needs a scalar-output network, got output_dim={net.config.output_dim}")
    x = as_matrix(inputs)
    n_params = net.num_parameters(include_activation)
    need = x.shape[0] * n_params * 8
    if need > max_bytes:
        raise CapacityError(f"Jacobian needs {need} bytes, above the {max_bytes}-byte budget")
    jac = np.empty((x.shape[0], n_params))
    one = np.ones((1, 1))
    for i in range(x.shape[0]):
        trace = forward(net, x[i : i + 1])
        jac[i] = _flat_grads(backward(net, trace, one), include_activation)
    k = jac @ jac.T
    k = 0.5 * (k + k.T)
    return KernelMatrix(k, "empirical", x)


def analytic_kernel_matrix(p, depth: int, inputs, normalize: bool = True) -> KernelMatrix:
    """Analytic NTK over rows of ``inputs`` (each row must be a unit vector)."""
    x = as_matrix(inputs)
    n = x.shape[0]
    k = np.empty((n, n))
    for i in range(n):
        for j in range(i, n):
            k[i, j] = k[j, i] = analytic_ntk(p, depth, x[i], x[j], normalize)[1]
    return KernelMatrix(k, "analytic", x)


def ntk_spectrum(k: KernelMatrix) -> EigenResult:
    """Descending eigenvalues; eigenvector columns are discrete eigenfunctions over the inputs."""
    return sym_eig(k.matrix)


def count_significant(eigenvalues, rel: float = 1e-6) -> int:
    """Eigenvalues above ``rel`` times the largest one."""
    w = np.asarray(eigenvalues, dtype=np.float64)
    if w.size == 0:
        return 0
    return int(np.sum(w > rel * np.max(w)))


def is_psd(eigenvalues, rel: float = 1e-8) -> bool:
    w = np.asarray(eigenvalues, dtype=np.float64)
    return bool(np.min(w) >= -rel * np.max(w))
