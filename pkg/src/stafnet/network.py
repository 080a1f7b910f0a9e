"""Coordinate MLPs with STAF, sine or ReLU activations and exact reverse-mode gradients.

Layer ``l`` computes ``pre = z_prev @ W.T + b`` and ``z = rho(pre)``; the last
core layer is affine unless ``activated_output`` is set (the all-activated
form used by the Kronecker construction). Trailing *dummy* layers are
residual linear maps ``z = z_prev @ W.T + b + z_prev`` that start at zero.
"""

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import List, Optional

import numpy as np

from . import activation as act
from . import kernels
from .activation import ActivationParams, InitConfig, InitScheme, SharingMode
from .core_math import Rng, as_matrix, sample_uniform
from .errors import NumericError, RangeError, ShapeError, ValidationError


class ActivationKind(str, Enum):
    STAF = "staf"
    SINE = "sine"
    RELU = "relu"


@dataclass
class NetworkConfig:
    input_dim: int
    output_dim: int
    hidden_widths: List[int]
    activation: ActivationKind = ActivationKind.STAF
    sharing: SharingMode = SharingMode.PER_LAYER
    tau: int = 5
    omega0: float = 30.0
    seed: int = 0
    init_scheme: InitScheme = InitScheme.THEOREM_PDF
    activated_output: bool = False
    n_dummy: int = 0
    positional_encoding: int = 0  # number of octaves for the ReLU baseline's input mapping

    def __post_init__(self):
        self.activation = ActivationKind(self.activation)
        self.sharing = SharingMode(self.sharing)
        self.init_scheme = InitScheme(self.init_scheme)
        self.hidden_widths = [int(w) for w in self.hidden_widths]
        if self.input_dim < 1 or self.output_dim < 1 or any(w < 1 for w in self.hidden_widths):
            raise ValidationError("all layer widths must be >= 1")
        if self.depth < 2 and not self.activated_output:
            raise ValidationError("an affine-output network needs at least one hidden layer (L >= 2)")
        if self.tau < 1:
            raise ValidationError("tau must be >= 1")
        if self.omega0 <= 0:
            raise ValidationError("omega0 must be positive")
        if self.n_dummy < 0 or self.positional_encoding < 0:
            raise ValidationError("n_dummy and positional_encoding must be non-negative")
        if self.positional_encoding and self.activation is not ActivationKind.RELU:
            raise ValidationError("positional encoding is only offered for the ReLU baseline")

    @property
    def n_core(self) -> int:
        return len(self.hidden_widths) + 1

    @property
    def depth(self) -> int:
        return self.n_core + self.n_dummy

    @property
    def encoded_dim(self) -> int:
        return self.input_dim * (1 + 2 * self.positional_encoding)

    @property
    def widths(self) -> List[int]:
        return [self.encoded_dim] + self.hidden_widths + [self.output_dim] * (1 + self.n_dummy)

    @property
    def n_activated(self) -> int:
        return self.n_core if self.activated_output else self.n_core - 1

    def is_activated(self, layer: int) -> bool:
        return layer < self.n_activated

    def is_dummy(self, layer: int) -> bool:
        return layer >= self.n_core


@dataclass
class Network:
    config: NetworkConfig
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    activations: List[ActivationParams] = field(default_factory=list)

    def __post_init__(self):
        cfg = self.config
        widths = cfg.widths
        if len(self.weights) != cfg.depth or len(self.biases) != cfg.depth:
            raise ShapeError(f"expected {cfg.depth} layers, got {len(self.weights)} weights / {len(self.biases)} biases")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (widths[l + 1], widths[l]) or b.shape != (widths[l + 1],):
                raise ShapeError(f"layer {l + 1}: W {w.shape}, B {b.shape} do not match widths {widths}")
        if cfg.activation is ActivationKind.STAF:
            expected = 1 if cfg.sharing is SharingMode.PER_NETWORK else cfg.n_activated
            if len(self.activations) != expected:
                raise ShapeError(f"expected {expected} activation parameter groups, got {len(self.activations)}")
            for k, p in enumerate(self.activations):
                if p.tau != cfg.tau:
                    raise ShapeError(f"activation group {k} has tau={p.tau}, config says {cfg.tau}")
                if cfg.sharing is SharingMode.PER_NEURON and p.amplitudes.shape != (widths[k + 1], cfg.tau):
                    raise ShapeError(f"per-neuron activation group {k} must have shape ({widths[k + 1]}, {cfg.tau})")
                if cfg.sharing is not SharingMode.PER_NEURON and p.per_neuron:
                    raise ShapeError("shared activation groups must be 1-D")
        elif self.activations:
            raise ShapeError(f"{cfg.activation.value} networks carry no activation parameters")

    @property
    def depth(self) -> int:
        return self.config.depth

    def activation_for(self, layer: int) -> ActivationParams:
        if self.config.sharing is SharingMode.PER_NETWORK:
            return self.activations[0]
        return self.activations[layer]

    def parameters(self) -> List[np.ndarray]:
        """Every trainable array in a fixed order (weights, biases, then C, Omega, Phi per group)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        for p in self.activations:
            out += [p.amplitudes, p.frequencies, p.phases]
        return out

    def num_parameters(self, include_activation: bool = True) -> int:
        n = sum(w.size + b.size for w, b in zip(self.weights, self.biases))
        if include_activation:
            n += sum(3 * p.amplitudes.size for p in self.activations)
        return n

    def copy(self) -> "Network":
        return Network(
            replace(self.config, hidden_widths=list(self.config.hidden_widths)),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            [p.copy() for p in self.activations],
        )

    def __call__(self, inputs) -> np.ndarray:
        return forward(self, inputs).output


def _uniform(rng, bound, shape):
    return sample_uniform(rng, -1.0, 1.0, shape) * bound


def build_network(config: NetworkConfig) -> Network:
    """Initialise a network from ``config.seed``.

    STAF: activation parameters are drawn first, then weights per layer. The
    first layer uses U(-1/F0, 1/F0); later activated layers use
    U(+-sqrt(6/fan_in)/omega_eff) with omega_eff the largest |Omega| of the
    layer's activation. Sine follows the usual sine-network scheme with
    omega0 applied inside the first layer.
    """
    cfg = config
    rng = Rng(cfg.seed)
    widths = cfg.widths
    icfg = InitConfig(omega0=cfg.omega0, scheme=cfg.init_scheme)
    acts = []
    if cfg.activation is ActivationKind.STAF:
        if cfg.sharing is SharingMode.PER_NETWORK:
            acts = [act.init_layer_params(rng, cfg.tau, icfg)]
        elif cfg.sharing is SharingMode.PER_LAYER:
            acts = [act.init_layer_params(rng, cfg.tau, icfg) for _ in range(cfg.n_activated)]
        else:
            acts = [act.init_layer_params(rng, cfg.tau, icfg, groups=widths[l + 1]) for l in range(cfg.n_activated)]
    weights, biases = [], []
    for l in range(cfg.depth):
        fan_in, fan_out = widths[l], widths[l + 1]
        if cfg.is_dummy(l):
            weights.append(np.zeros((fan_out, fan_in)))
            biases.append(np.zeros(fan_out))
            continue
        if cfg.activation is ActivationKind.STAF:
            if l == 0:
                wb = act.first_layer_bound(fan_in)
            elif cfg.is_activated(l):
                p = acts[0] if cfg.sharing is SharingMode.PER_NETWORK else acts[l]
                wb = float(act.hidden_layer_bound(fan_in, act.omega_eff(p)))
            else:
                wb = np.sqrt(6.0 / fan_in) / cfg.omega0
            bb = wb
        elif cfg.activation is ActivationKind.SINE:
            if l == 0:
                wb = 1.0 / fan_in
            elif cfg.is_activated(l):
                wb = np.sqrt(6.0 / fan_in)
            else:
                wb = np.sqrt(6.0 / fan_in) / cfg.omega0
            bb = 1.0 / np.sqrt(fan_in)
        else:
            wb = np.sqrt(6.0 / fan_in) if cfg.is_activated(l) else 1.0 / np.sqrt(fan_in)
            bb = 1.0 / np.sqrt(fan_in)
        weights.append(_uniform(rng, wb, (fan_out, fan_in)))
        biases.append(_uniform(rng, bb, fan_out))
    return Network(cfg, weights, biases, acts)


def encode_inputs(config: NetworkConfig, inputs: np.ndarray) -> np.ndarray:
    """Input mapping: identity, or [r, sin(2^k pi r), cos(2^k pi r)] for the ReLU baseline."""
    if not config.positional_encoding:
        return inputs
    feats = [inputs]
    for k in range(config.positional_encoding):
        feats.append(kernels.sin((2.0**k) * np.pi * inputs))
        feats.append(kernels.cos((2.0**k) * np.pi * inputs))
    return np.concatenate(feats, axis=1)


@dataclass
class ForwardTrace:
    inputs: np.ndarray  # after the input mapping
    pre: List[np.ndarray]
    post: List[np.ndarray]
    net_id: int = 0
    caches: list = field(default_factory=list)  # StafCache per layer, or None

    @property
    def output(self) -> np.ndarray:
        return self.post[-1]


def _apply_activation(net: Network, l: int, pre: np.ndarray) -> np.ndarray:
    kind = net.config.activation
    if kind is ActivationKind.STAF:
        return act.staf_eval(net.activation_for(l), pre)
    if kind is ActivationKind.SINE:
        if l == 0:
            return kernels.sin(net.config.omega0 * pre)
        return kernels.sin(pre)
    return np.maximum(pre, 0.0)


def _run_layers(net: Network, z, reuse, pres, posts, caches):
    cfg = net.config
    for l in range(cfg.depth):
        cache = None
        pre = z @ net.weights[l].T + net.biases[l]
        if cfg.is_dummy(l):
            pre = pre + z
            post = pre
        elif cfg.is_activated(l) and cfg.activation is ActivationKind.STAF:
            old = None
            if reuse is not None:
                old = (reuse.caches[l] if reuse.caches else None) or act.StafCache(None)
            post, cache = act.staf_forward(net.activation_for(l), pre, reuse=old)
        elif cfg.is_activated(l):
            post = _apply_activation(net, l, pre)
        else:
            post = pre
        pres.append(pre)
        posts.append(post)
        caches.append(cache)
        z = post


def forward(net: Network, inputs, reuse: Optional[ForwardTrace] = None) -> ForwardTrace:
    """Evaluate every layer, keeping what :func:`backward` needs.

    ``reuse`` hands the buffers of an earlier trace (same network and batch
    shape) to this pass, which lets STAF layers keep their trig terms without
    fresh allocations; that earlier trace is invalid afterwards.
    """
    cfg = net.config
    x = as_matrix(inputs)
    if x.shape[1] != cfg.input_dim:
        raise ShapeError(f"inputs have width {x.shape[1]}, network expects {cfg.input_dim}")
    z = encode_inputs(cfg, x)
    z0 = z
    pres, posts, caches = [], [], []
    with np.errstate(invalid="ignore", over="ignore"):  # non-finite values are reported below
        _run_layers(net, z, reuse, pres, posts, caches)
    z = posts[-1]
    if not np.all(np.isfinite(z)):
        # non-finite values propagate, so the output check catches them; name the first bad layer
        bad = next(l for l, v in enumerate(posts) if not np.all(np.isfinite(v)))
        raise NumericError(f"non-finite values at layer {bad + 1}")
    return ForwardTrace(z0, pres, posts, id(net), caches)


@dataclass
class GradientBundle:
    d_weights: List[np.ndarray]
    d_biases: List[np.ndarray]
    d_activations: List[tuple]  # (dC, dOmega, dPhi) per activation group

    def arrays(self) -> List[np.ndarray]:
        """Same order as :meth:`Network.parameters`."""
        out = []
        for w, b in zip(self.d_weights, self.d_biases):
            out += [w, b]
        for g in self.d_activations:
            out += list(g)
        return out

    def flat(self, include_activation: bool = True) -> np.ndarray:
        parts = []
        for w, b in zip(self.d_weights, self.d_biases):
            parts += [w.ravel(), b.ravel()]
        if include_activation:
            for g in self.d_activations:
                parts += [np.ravel(a) for a in g]
        return np.concatenate(parts)


def backward(net: Network, trace: ForwardTrace, output_grad) -> GradientBundle:
    """Gradients of ``sum(output_grad * f(inputs))`` with respect to every parameter."""
    cfg = net.config
    if trace.net_id != id(net) or len(trace.pre) != cfg.depth:
        raise ValidationError("trace was not produced by forward() on this network")
    g = np.asarray(output_grad, dtype=np.float64)
    if g.shape != trace.output.shape:
        raise ShapeError(f"output_grad shape {g.shape} != output shape {trace.output.shape}")
    d_w = [None] * cfg.depth
    d_b = [None] * cfg.depth
    d_act = [tuple(np.zeros_like(a) for a in p.arrays()) for p in net.activations]
    for l in range(cfg.depth - 1, -1, -1):
        z_prev = trace.inputs if l == 0 else trace.post[l - 1]
        pre = trace.pre[l]
        if cfg.is_activated(l):
            if cfg.activation is ActivationKind.STAF:
                p = net.activation_for(l)
                cache = trace.caches[l] if trace.caches else None
                if cache is None:
                    dpre, dc, dw, dph = act.staf_backward(p, pre, g)
                else:
                    dpre, dc, dw, dph = act.staf_backward_cached(p, pre, g, cache)
                k = 0 if cfg.sharing is SharingMode.PER_NETWORK else l
                acc = d_act[k]
                acc[0][...] += dc
                acc[1][...] += dw
                acc[2][...] += dph
            elif cfg.activation is ActivationKind.SINE:
                if l == 0:
                    dpre = g * (cfg.omega0 * kernels.cos(cfg.omega0 * pre))
                else:
                    dpre = g * kernels.cos(pre)
            else:
                dpre = g * (pre > 0.0)
        else:
            dpre = g
        d_w[l] = dpre.T @ z_prev
        d_b[l] = dpre.sum(axis=0)
        if l > 0:
            g = dpre @ net.weights[l]
            if cfg.is_dummy(l):
                g = g + dpre
    return GradientBundle(d_w, d_b, d_act)


def mse(pred, target):
    """Mean squared error over batch and channels, with its gradient 2(pred-target)/N."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction shape {pred.shape} != target shape {target.shape}")
    diff = pred - target
    n = diff.size
    return float(np.sum(diff * diff) / n), (2.0 / n) * diff


def loss_and_grads(net: Network, inputs, targets):
    trace = forward(net, inputs)
    loss, g = mse(trace.output, targets)
    return loss, backward(net, trace, g), trace


@dataclass
class CheckReport:
    max_rel_error: float
    worst: Optional[tuple]  # (array index, flat index)
    n_checked: int
    n_skipped: int
    skipped: list
    passed: bool
    tol: float
    h: float

    def as_dict(self):
        return {
            "max_rel_error": self.max_rel_error,
            "worst": list(self.worst) if self.worst else None,
            "n_checked": self.n_checked,
            "n_skipped": self.n_skipped,
            "passed": self.passed,
            "tol": self.tol,
            "h": self.h,
        }


def relative_error(a, b, floor=1e-8):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def _param_layer(cfg: NetworkConfig, k: int) -> int:
    """Index of the first layer affected by parameter array ``k``."""
    if k < 2 * cfg.depth:
        return k // 2
    return 0 if cfg.sharing is SharingMode.PER_NETWORK else (k - 2 * cfg.depth) // 3


def _reference_tail(net, params, start, z, override, targets, dtype):
    """Run layers ``start..L`` in ``dtype`` and return per-copy losses and ReLU sign patterns.

    ``override`` maps one parameter index to a stack of M perturbed copies;
    every other parameter is shared. Written independently of
    :func:`forward` so the finite-difference side does not reuse the code it
    checks.
    """
    cfg = net.config
    depth = cfg.depth
    k_over, stack = override

    def get(k):
        return (stack, True) if k == k_over else (params[k], False)

    patterns = []
    for l in range(start, depth):
        (w, _), (b, bs) = get(2 * l), get(2 * l + 1)
        pre = np.matmul(z, np.swapaxes(w, -1, -2))
        pre = pre + (b[:, None, :] if bs else b)
        if pre.ndim == 2:
            pre = pre[None]
        if cfg.is_dummy(l):
            z = pre + z
            continue
        if not cfg.is_activated(l):
            z = pre
            continue
        if cfg.activation is ActivationKind.STAF:
            g = 0 if cfg.sharing is SharingMode.PER_NETWORK else l
            base = 2 * depth + 3 * g
            terms = [get(base + j) for j in range(3)]
            out = np.zeros_like(pre)
            for i in range(cfg.tau):
                vals = []
                for arr, stacked in terms:
                    v = arr[..., i]
                    if stacked:
                        v = v[:, None, None] if v.ndim == 1 else v[:, None, :]
                    vals.append(v)
                c, w_, p_ = vals
                out = out + c * np.sin(w_ * pre + p_)
            z = out
        elif cfg.activation is ActivationKind.SINE:
            z = np.sin(dtype(cfg.omega0) * pre) if l == 0 else np.sin(pre)
        else:
            patterns.append(pre > 0)
            z = np.maximum(pre, dtype(0))
    d = z - np.asarray(targets, dtype=np.float64).astype(dtype)
    losses = np.sum(d * d, axis=(-2, -1)) / dtype(d.shape[-2] * d.shape[-1])
    return losses, patterns


def grad_check(
    net: Network,
    inputs,
    targets,
    h: float = 1e-6,
    tol: float = 1e-5,
    floor: float = 1e-8,
    precision: str = "extended",
    chunk: int = 512,
) -> CheckReport:
    """Compare analytic gradients to central differences on every parameter.

    The relative error of a coordinate is ``|a - n| / max(|a|, |n|, floor)``;
    the floor only guards exactly-zero gradients. With ``precision="extended"``
    the difference quotients are taken in long double so that round-off in
    the loss does not swamp small gradient coordinates. For ReLU networks a
    coordinate whose +-h perturbation changes the active-unit pattern sits on
    a kink; it is reported and skipped.
    """
    if not h > 0:
        raise RangeError("h must be positive")
    dtype = {"extended": np.longdouble, "double": np.float64}[precision]
    cfg = net.config
    _, grads, _ = loss_and_grads(net, inputs, targets)
    params = [p.astype(dtype) for p in net.parameters()]
    hd = dtype(h)
    relu = cfg.activation is ActivationKind.RELU

    # base activations entering each layer, in the reference precision
    z_in = [encode_inputs(cfg, as_matrix(inputs)).astype(dtype)]
    base_patterns = []
    for l in range(cfg.depth):
        _, pats = _reference_tail(net, params, l, z_in[l], (-1, None), targets, dtype) if relu else (None, [])
        base_patterns.append(pats)
        z = z_in[l]
        pre = z @ params[2 * l].T + params[2 * l + 1]
        if cfg.is_dummy(l):
            z = pre + z
        elif not cfg.is_activated(l):
            z = pre
        elif cfg.activation is ActivationKind.STAF:
            amp, freq, ph = params[2 * cfg.depth + 3 * (0 if cfg.sharing is SharingMode.PER_NETWORK else l):][:3]
            z = np.zeros_like(pre)
            for i in range(cfg.tau):
                z = z + amp[..., i] * np.sin(freq[..., i] * pre + ph[..., i])
        elif cfg.activation is ActivationKind.SINE:
            z = np.sin(dtype(cfg.omega0) * pre) if l == 0 else np.sin(pre)
        else:
            z = np.maximum(pre, dtype(0))
        z_in.append(z)

    analytic, numeric, kinks, coords = [], [], [], []
    for k, (p, ga) in enumerate(zip(params, grads.arrays())):
        start = _param_layer(cfg, k)
        ga = np.ravel(np.asarray(ga, dtype=np.float64))
        for s0 in range(0, p.size, chunk):
            idx = np.arange(s0, min(s0 + chunk, p.size))
            m = idx.size
            out = {}
            for sign in (+1, -1):
                stack = np.repeat(p.reshape(1, -1), m, axis=0)
                stack[np.arange(m), idx] += sign * hd
                out[sign] = _reference_tail(net, params, start, z_in[start], (k, stack.reshape((m,) + p.shape)), targets, dtype)
            numeric.append(((out[+1][0] - out[-1][0]) / (2 * hd)).astype(np.float64))
            analytic.append(ga[idx])
            kink = np.zeros(m, dtype=bool)
            if relu:
                for base, a, b in zip(base_patterns[start], out[+1][1], out[-1][1]):
                    kink |= np.any(a != base, axis=(1, 2)) | np.any(b != base, axis=(1, 2))
            kinks.append(kink)
            coords += [(k, int(i)) for i in idx]
    analytic = np.concatenate(analytic)
    numeric = np.concatenate(numeric)
    kink = np.concatenate(kinks)
    errs = relative_error(analytic, numeric, floor)
    errs[kink] = 0.0
    skipped = [coords[j] for j in np.nonzero(kink)[0]]
    worst, worst_err = None, 0.0
    if len(coords) > len(skipped):
        j = int(np.argmax(errs))
        worst, worst_err = coords[j], float(errs[j])
    return CheckReport(worst_err, worst, len(coords) - len(skipped), len(skipped), skipped, worst_err < tol, tol, h)
