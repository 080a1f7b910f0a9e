"""Sinusoidal trainable activation: evaluation, gradients, initialisation and init statistics.

The activation is ``rho(x) = sum_i C_i sin(Omega_i x + Phi_i)``. Parameters are
stored either as 1-D arrays of length ``tau`` (shared by a layer or the whole
network) or as ``(F, tau)`` arrays, one row per neuron.
"""

from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from math import factorial, sqrt
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .core_math import Rng, sample_laplace, sample_uniform
from .errors import CapacityError, RangeError, ValidationError


class SharingMode(str, Enum):
    PER_NEURON = "per-neuron"
    PER_LAYER = "per-layer"
    PER_NETWORK = "per-network"


class InitScheme(str, Enum):
    THEOREM_PDF = "theorem"  # Laplace scale 2/tau: unit-variance post-activations
    LISTING_CODE = "listing"  # Laplace scale 1/(2 tau), as in the released initialiser


@dataclass
class ActivationParams:
    amplitudes: np.ndarray
    frequencies: np.ndarray
    phases: np.ndarray

    def __post_init__(self):
        self.amplitudes = np.array(self.amplitudes, dtype=np.float64)
        self.frequencies = np.array(self.frequencies, dtype=np.float64)
        self.phases = np.array(self.phases, dtype=np.float64)
        shapes = {self.amplitudes.shape, self.frequencies.shape, self.phases.shape}
        if len(shapes) != 1:
            raise ValidationError(f"amplitude/frequency/phase shapes differ: {sorted(shapes)}")
        if self.amplitudes.ndim not in (1, 2) or self.amplitudes.shape[-1] < 1:
            raise ValidationError(f"activation parameters need shape (tau,) or (F, tau), got {self.amplitudes.shape}")
        for name in ("amplitudes", "frequencies", "phases"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValidationError(f"non-finite {name}")

    @property
    def tau(self) -> int:
        return self.amplitudes.shape[-1]

    @property
    def per_neuron(self) -> bool:
        return self.amplitudes.ndim == 2

    def copy(self) -> "ActivationParams":
        return ActivationParams(self.amplitudes.copy(), self.frequencies.copy(), self.phases.copy())

    def arrays(self):
        return self.amplitudes, self.frequencies, self.phases


@dataclass
class InitConfig:
    omega0: float = 30.0
    scheme: InitScheme = InitScheme.THEOREM_PDF
    amplitude_scale_b: Optional[float] = None  # overrides the scheme's tau-dependent scale

    def __post_init__(self):
        self.scheme = InitScheme(self.scheme)
        if not self.omega0 > 0:
            raise RangeError(f"omega0 must be positive, got {self.omega0}")
        if self.amplitude_scale_b is not None and not self.amplitude_scale_b > 0:
            raise RangeError(f"amplitude scale must be positive, got {self.amplitude_scale_b}")

    def laplace_scale(self, tau: int) -> float:
        if self.amplitude_scale_b is not None:
            return float(self.amplitude_scale_b)
        if self.scheme is InitScheme.THEOREM_PDF:
            return 2.0 / tau
        return 1.0 / (2.0 * tau)


def _term(p: ActivationParams, i: int):
    return p.amplitudes[..., i], p.frequencies[..., i], p.phases[..., i]


def staf_eval(p: ActivationParams, x):
    """Sum of the tau sine terms, accumulated in index order."""
    x = np.asarray(x, dtype=np.float64)
    c, w, ph = _term(p, 0)
    out = c * kernels.sin(w * x + ph)
    for i in range(1, p.tau):
        c, w, ph = _term(p, i)
        out = out + c * kernels.sin(w * x + ph)
    return out


def staf_dx(p: ActivationParams, x):
    x = np.asarray(x, dtype=np.float64)
    c, w, ph = _term(p, 0)
    out = c * w * kernels.cos(w * x + ph)
    for i in range(1, p.tau):
        c, w, ph = _term(p, i)
        out = out + c * w * kernels.cos(w * x + ph)
    return out


def _reduce_to(g: np.ndarray, per_neuron: bool):
    if g.ndim == 0:
        return float(g)
    if per_neuron:
        return g.reshape(-1, g.shape[-1]).sum(axis=0)
    return float(g.sum())


def staf_backward(p: ActivationParams, x, upstream):
    """Gradients of ``sum(upstream * rho(x))``.

    Returns ``(dx, dC, dOmega, dPhi)``; the parameter gradients have the
    shape of the parameters, summed over every broadcast axis.
    """
    x = np.asarray(x, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    shape = p.amplitudes.shape
    d_amp = np.zeros(shape)
    d_freq = np.zeros(shape)
    d_phase = np.zeros(shape)
    dx = np.zeros(np.broadcast(x, upstream).shape)
    for i in range(p.tau):
        c, w, ph = _term(p, i)
        arg = w * x + ph
        s = kernels.sin(arg)
        co = kernels.cos(arg)
        uc = upstream * c * co
        d_amp[..., i] = _reduce_to(upstream * s, p.per_neuron)
        d_phase[..., i] = _reduce_to(uc, p.per_neuron)
        d_freq[..., i] = _reduce_to(uc * x, p.per_neuron)
        dx = dx + uc * w
    return dx, d_amp, d_freq, d_phase


@dataclass
class StafCache:
    """What the backward pass needs from :func:`staf_forward`.

    ``slope`` is rho'(x). When the forward pass kept its term blocks,
    ``sines``/``cosines`` hold them (shape ``(tau, N, F)``) and the backward
    pass skips the trig recompute.
    """

    slope: np.ndarray
    sines: Optional[np.ndarray] = None
    cosines: Optional[np.ndarray] = None


CHUNK_ROWS = 128
KEEP_TERMS_BYTES = 1 << 28  # per layer; larger batches fall back to chunked recompute


def _term_args(p: ActivationParams):
    if p.per_neuron:
        return p.frequencies.T[:, None, :], p.phases.T[:, None, :]
    return p.frequencies[:, None, None], p.phases[:, None, None]


def _term_blocks(p: ActivationParams, x: np.ndarray, rows: int):
    """Yield ``(lo, hi, sines, cosines)`` with term-major blocks of shape ``(tau, hi-lo, F)``.

    Working row-chunk by row-chunk keeps the stacked blocks cache-resident
    and the memory bounded.
    """
    rows = rows or CHUNK_ROWS
    freqs, phases = _term_args(p)
    for lo in range(0, x.shape[0], rows):
        hi = min(lo + rows, x.shape[0])
        args = freqs * x[None, lo:hi]
        args += phases
        yield lo, hi, kernels.sin(args), kernels.cos(args, out=args)


def _combine(p: ActivationParams, blocks, weights):
    tau = p.tau
    if p.per_neuron:
        return np.einsum("tnf,ft->nf", blocks, weights)
    n, f = blocks.shape[1:]
    return (weights @ blocks.reshape(tau, -1)).reshape(n, f)


def _buffer(reuse, shape):
    if reuse is not None and reuse.shape == shape:
        return reuse
    return np.empty(shape)


def staf_forward(p: ActivationParams, x, rows: Optional[int] = None, reuse: Optional[StafCache] = None):
    """``(rho(x), cache)`` for a 2-D batch ``x``; equals :func:`staf_eval` up to summation rounding.

    Passing ``reuse`` (a cache from an earlier call) keeps the term blocks
    for the backward pass, writing into that cache's buffers when the shapes
    match; ``reuse`` must not be used afterwards. Blocks above
    ``KEEP_TERMS_BYTES`` are never kept.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValidationError(f"staf_forward expects a 2-D batch, got ndim={x.ndim}")
    cw = p.amplitudes * p.frequencies
    shape = (p.tau,) + x.shape
    keep = reuse is not None and 16 * np.prod(shape) <= KEEP_TERMS_BYTES
    if keep:
        sines, cosines = _buffer(reuse.sines, shape), _buffer(reuse.cosines, shape)
    out = np.empty(x.shape)
    slope = np.empty(x.shape)
    for lo, hi, sn, co in _term_blocks(p, x, rows):
        out[lo:hi] = _combine(p, sn, p.amplitudes)
        slope[lo:hi] = _combine(p, co, cw)
        if keep:
            sines[:, lo:hi] = sn
            cosines[:, lo:hi] = co
    if keep:
        return out, StafCache(slope, sines, cosines)
    return out, StafCache(slope)


def _accumulate(p: ActivationParams, acc, sn, co, up, ux):
    tau = p.tau
    if p.per_neuron:
        acc[0] += np.einsum("tnf,nf->tf", sn, up)
        acc[1] += np.einsum("tnf,nf->tf", co, ux)
        acc[2] += np.einsum("tnf,nf->tf", co, up)
    else:
        acc[0] += sn.reshape(tau, -1) @ up.ravel()
        # one pass over the cosines for both reductions
        both = co.reshape(tau, -1) @ np.stack([ux.ravel(), up.ravel()], axis=1)
        acc[1] += both[:, 0]
        acc[2] += both[:, 1]


def staf_backward_cached(p: ActivationParams, x, upstream, cache: StafCache, rows: Optional[int] = None):
    """Same contract as :func:`staf_backward`, reusing what the forward pass left in ``cache``."""
    x = np.asarray(x, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    acc = np.zeros((3, p.tau, x.shape[1])) if p.per_neuron else np.zeros((3, p.tau))
    if cache.sines is not None:
        _accumulate(p, acc, cache.sines, cache.cosines, upstream, upstream * x)
    else:
        for lo, hi, sn, co in _term_blocks(p, x, rows):
            up = upstream[lo:hi]
            _accumulate(p, acc, sn, co, up, up * x[lo:hi])
    if p.per_neuron:
        acc = acc.transpose(0, 2, 1)
    return upstream * cache.slope, acc[0], p.amplitudes * acc[1], p.amplitudes * acc[2]


def staf_param_grads(p: ActivationParams, x, upstream):
    _, d_amp, d_freq, d_phase = staf_backward(p, x, upstream)
    return d_amp, d_freq, d_phase


def sample_amplitudes(rng: Rng, tau: int, cfg: InitConfig, size=None) -> np.ndarray:
    """Signed square roots of centred Laplace draws.

    With the theorem scale ``b = 2/tau`` the density is
    ``(tau |c| / 2) exp(-tau c^2 / 2)``.
    """
    if tau < 1:
        raise RangeError(f"tau must be >= 1, got {tau}")
    shape = (tau,) if size is None else tuple(np.atleast_1d(size)) + (tau,)
    x = sample_laplace(rng, cfg.laplace_scale(tau), shape)
    return np.sign(x) * np.sqrt(np.abs(x))


def init_layer_params(rng: Rng, tau: int, cfg: InitConfig, groups: Optional[int] = None) -> ActivationParams:
    """Frequencies in [0, omega0), phases in [-pi, pi), then amplitudes (draw order fixed)."""
    if tau < 1:
        raise RangeError(f"tau must be >= 1, got {tau}")
    shape = (tau,) if groups is None else (groups, tau)
    freqs = cfg.omega0 * sample_uniform(rng, 0.0, 1.0, shape)
    phases = sample_uniform(rng, -np.pi, np.pi, shape)
    amps = sample_amplitudes(rng, tau, cfg, None if groups is None else groups)
    return ActivationParams(amps, freqs, phases)


def amplitude_moment_oracle(j: int, tau: int, exact: bool = False):
    """E[C^(2j)] required for unit-normal post-activations: (2/tau)^j j!."""
    if j < 0:
        raise RangeError("moment order must be non-negative")
    val = Fraction(2, tau) ** j * factorial(j)
    return val if exact else float(val)


def _compositions(total: int, parts: int):
    if parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def z_moment_oracle(q: int, tau: int, exact: bool = False):
    """E[Z^q] for Z = sum_u C_u sin(theta_u + Phi_u) by enumerating compositions of q/2."""
    if q < 0:
        raise RangeError("moment order must be non-negative")
    if q > 12:
        raise CapacityError("z_moment_oracle supports q <= 12")
    if q % 2:
        return Fraction(0) if exact else 0.0
    total = Fraction(0)
    for js in _compositions(q // 2, tau):
        multinom = factorial(q)
        weight = Fraction(1)
        for j in js:
            multinom //= factorial(j) ** 2
            weight *= amplitude_moment_oracle(j, tau, exact=True)
        total += multinom * weight
    total /= 2**q
    return total if exact else float(total)


def normal_moment(q: int, exact: bool = False):
    if q % 2:
        return Fraction(0) if exact else 0.0
    val = Fraction(factorial(q), factorial(q // 2) * 2 ** (q // 2))
    return val if exact else float(val)


# Weight initialisation shared with the network builder.

def first_layer_bound(fan_in: int) -> float:
    return 1.0 / fan_in


def hidden_layer_bound(fan_in: int, omega_eff) -> np.ndarray:
    omega_eff = np.maximum(np.asarray(omega_eff, dtype=np.float64), 1e-12)
    return np.sqrt(6.0 / fan_in) / omega_eff


def omega_eff(p: ActivationParams):
    """Largest |Omega| of a layer's activation (scalar, or per-row for stacked params)."""
    return np.max(np.abs(p.frequencies))


@dataclass
class LayerStats:
    layer: int
    n: int
    mean: float
    var: float
    skew: float
    kurtosis: float
    se_mean: float
    se_var: float
    se_skew: float
    se_kurtosis: float

    def as_dict(self):
        return dict(self.__dict__)


@dataclass
class StatReport:
    tau: int
    scheme: str
    input_dist: str
    seed: int
    layers: list = field(default_factory=list)

    def as_dict(self):
        return {
            "tau": self.tau,
            "scheme": self.scheme,
            "input_dist": self.input_dist,
            "seed": self.seed,
            "layers": [s.as_dict() for s in self.layers],
        }


def _moments(x: np.ndarray):
    mean = x.mean()
    d = x - mean
    m2 = np.mean(d * d)
    m3 = np.mean(d**3)
    m4 = np.mean(d**4)
    return mean, m2, m3 / m2**1.5, m4 / m2**2


def summarize_samples(x: np.ndarray, layer: int = 0, n_batches: int = 100) -> LayerStats:
    """Moments with batch-means standard errors (no normality assumption)."""
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    mean, var, skew, kurt = _moments(x)
    b = min(n_batches, max(2, n // 100))
    per = np.array([_moments(chunk) for chunk in np.array_split(x, b)])
    se = per.std(axis=0, ddof=1) / sqrt(b)
    return LayerStats(layer, n, float(mean), float(var), float(skew), float(kurt),
                      float(se[0]), float(se[1]), float(se[2]), float(se[3]))


def verify_init_statistics(
    input_dim: int,
    hidden_widths: Sequence[int],
    tau: int,
    rng: Rng,
    n_samples: int,
    cfg: Optional[InitConfig] = None,
    sharing: SharingMode = SharingMode.PER_LAYER,
    input_dist: str = "uniform",
    chunk: int = 20000,
) -> StatReport:
    """Sample post-activations over independent networks and inputs.

    Every sample comes from a freshly initialised network evaluated on one
    fresh input; the first neuron of each hidden layer is recorded, so
    samples are i.i.d. and the reported standard errors are honest.
    """
    cfg = cfg or InitConfig()
    sharing = SharingMode(sharing)
    if n_samples < 1:
        raise RangeError("n_samples must be positive")
    widths = [int(input_dim)] + [int(w) for w in hidden_widths]
    depth = len(widths) - 1
    records = [[] for _ in range(depth)]
    done = 0
    while done < n_samples:
        m = min(chunk, n_samples - done)
        if input_dist == "uniform":
            z = sample_uniform(rng, -1.0, 1.0, (m, widths[0]))
        elif input_dist == "gaussian":
            z = rng.normal((m, widths[0]))
        else:
            raise ValidationError(f"unknown input distribution {input_dist!r}")
        shared = None
        if sharing is SharingMode.PER_NETWORK:
            shared = init_layer_params(rng, tau, cfg, groups=m)
        for l in range(1, depth + 1):
            fan_in, fan_out = widths[l - 1], widths[l]
            last = l == depth
            rows = 1 if last else fan_out
            if shared is not None:
                c, w, ph = (a[:, None, :] for a in shared.arrays())
            elif sharing is SharingMode.PER_LAYER:
                p = init_layer_params(rng, tau, cfg, groups=m)
                c, w, ph = (a[:, None, :] for a in p.arrays())
            else:
                p = init_layer_params(rng, tau, cfg, groups=m * rows)
                c, w, ph = (a.reshape(m, rows, tau) for a in p.arrays())
            if l == 1:
                bound = np.full(m, first_layer_bound(fan_in))
            else:
                bound = hidden_layer_bound(fan_in, np.max(np.abs(w), axis=(1, 2)))
            u = sample_uniform(rng, -1.0, 1.0, (m, rows, fan_in)) * bound[:, None, None]
            bias = sample_uniform(rng, -1.0, 1.0, (m, rows)) * bound[:, None]
            a = np.einsum("mij,mj->mi", u, z) + bias
            post = np.zeros_like(a)
            for i in range(tau):
                post += c[..., i] * kernels.sin(w[..., i] * a + ph[..., i])
            records[l - 1].append(post[:, 0].copy())
            z = post
        done += m
    report = StatReport(tau, cfg.scheme.value, input_dist, rng.seed)
    for l in range(depth):
        report.layers.append(summarize_samples(np.concatenate(records[l]), layer=l + 1))
    return report
