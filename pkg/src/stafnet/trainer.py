"""Full-batch Adam fitting of coordinate networks to images, audio and 1-D signals."""

import csv
import io
import json
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np

from .core_math import Rng
from .errors import NumericError, ShapeError, ValidationError
from .network import ForwardTrace, Network, backward, forward, mse

PSNR_CAP = 200.0


class TaskKind(str, Enum):
    IMAGE = "image"
    AUDIO = "audio"
    SIGNAL = "signal"


@dataclass
class SignalBuffer:
    """Samples on a regular grid: ``(H, W, C)`` for images, ``(N, C)`` for 1-D signals."""

    samples: np.ndarray
    kind: TaskKind = TaskKind.IMAGE
    sample_rate: Optional[int] = None

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        self.kind = TaskKind(self.kind)
        if self.kind is TaskKind.IMAGE and self.samples.ndim == 2:
            self.samples = self.samples[:, :, None]
        if self.kind is not TaskKind.IMAGE and self.samples.ndim == 1:
            self.samples = self.samples[:, None]
        want = 3 if self.kind is TaskKind.IMAGE else 2
        if self.samples.ndim != want:
            raise ShapeError(f"{self.kind.value} buffer needs {want} dims, got shape {self.samples.shape}")

    @property
    def dims(self) -> Tuple[int, ...]:
        return self.samples.shape

    @property
    def spatial(self) -> Tuple[int, ...]:
        return self.samples.shape[:-1]

    @property
    def channels(self) -> int:
        return self.samples.shape[-1]

    def flat(self) -> np.ndarray:
        return self.samples.reshape(-1, self.channels)

    def with_samples(self, values) -> "SignalBuffer":
        return SignalBuffer(np.asarray(values).reshape(self.dims), self.kind, self.sample_rate)


def make_coordinate_grid(dims) -> np.ndarray:
    """One row per sample, each axis spaced linearly over [-1, 1], row-major order."""
    dims = tuple(int(d) for d in np.atleast_1d(dims))
    if any(d < 1 for d in dims):
        raise ValidationError(f"grid dims must be positive, got {dims}")
    axes = [np.linspace(-1.0, 1.0, d) for d in dims]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.reshape(-1) for m in mesh], axis=1)


def mse_loss(pred, target):
    return mse(pred, target)


def psnr(pred, target, peak: float = 1.0) -> float:
    pred = pred.samples if isinstance(pred, SignalBuffer) else np.asarray(pred, dtype=np.float64)
    target = target.samples if isinstance(target, SignalBuffer) else np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"dims differ: {pred.shape} vs {target.shape}")
    err = float(np.mean((pred - target) ** 2))
    if err == 0.0:
        return PSNR_CAP
    return float(min(PSNR_CAP, 10.0 * np.log10(peak**2 / err)))


def _box_mean(x: np.ndarray, wy: int, wx: int) -> np.ndarray:
    """Mean over every wy x wx window (valid positions), via summed-area tables."""
    s = np.cumsum(np.cumsum(np.pad(x, ((1, 0), (1, 0))), axis=0), axis=1)
    total = s[wy:, wx:] - s[:-wy, wx:] - s[wy:, :-wx] + s[:-wy, :-wx]
    return total / (wy * wx)


def ssim(pred, target, win: int = 8, data_range: float = 1.0) -> float:
    """Mean structural similarity over all 8x8 windows, averaged across channels.

    Uses the usual constants K1 = 0.01, K2 = 0.03 and population (1/N)
    window statistics. 1-D signals are treated as single-row images with a
    window of length ``win``.
    """
    pred = pred.samples if isinstance(pred, SignalBuffer) else np.asarray(pred, dtype=np.float64)
    target = target.samples if isinstance(target, SignalBuffer) else np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"dims differ: {pred.shape} vs {target.shape}")
    if pred.ndim == 1:
        pred, target = pred[None, :, None], target[None, :, None]
    elif pred.ndim == 2:
        pred, target = pred[:, :, None], target[:, :, None]
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    vals = []
    for ch in range(pred.shape[2]):
        x, y = pred[:, :, ch], target[:, :, ch]
        wy, wx = min(win, x.shape[0]), min(win, x.shape[1])
        mx, my = _box_mean(x, wy, wx), _box_mean(y, wy, wx)
        sxx = _box_mean(x * x, wy, wx) - mx * mx
        syy = _box_mean(y * y, wy, wx) - my * my
        sxy = _box_mean(x * y, wy, wx) - mx * my
        num = (2 * mx * my + c1) * (2 * sxy + c2)
        den = (mx * mx + my * my + c1) * (sxx + syy + c2)
        vals.append(float(np.mean(num / den)))
    return float(np.clip(np.mean(vals), -1.0, 1.0))


@dataclass
class AdamState:
    m: List[np.ndarray]
    v: List[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params, **kw) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], **kw)


def adam_step(state: AdamState, params, grads, lr: float):
    """Bias-corrected Adam update, applied in place; returns ``params``."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError("params, grads and optimizer state differ in length")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**state.step
    bc2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params


@dataclass
class TaskSpec:
    kind: TaskKind
    target: SignalBuffer
    iterations: int = 500
    learning_rate: float = 1e-3
    noise: Optional[dict] = None  # {"poisson_mean": 10} or {"gaussian_sigma": 0.1}
    seed: int = 0
    log_every: int = 10

    def __post_init__(self):
        self.kind = TaskKind(self.kind)
        if self.iterations < 1:
            raise ValidationError("iterations must be >= 1")
        if not self.learning_rate > 0:
            raise ValidationError("learning_rate must be positive")
        if self.noise:
            unknown = set(self.noise) - {"poisson_mean", "gaussian_sigma"}
            if unknown or len(self.noise) != 1:
                raise ValidationError(f"noise must be one of poisson_mean / gaussian_sigma, got {self.noise}")


def add_noise(buf: SignalBuffer, noise: Optional[dict], rng: Rng) -> SignalBuffer:
    """Photon noise: Poisson(photons * x) / photons; or additive Gaussian."""
    if not noise:
        return buf
    if "poisson_mean" in noise:
        photons = float(noise["poisson_mean"])
        lam = np.clip(buf.samples, 0.0, None) * photons
        return buf.with_samples(rng.poisson(lam) / photons)
    sigma = float(noise["gaussian_sigma"])
    return buf.with_samples(buf.samples + sigma * rng.normal(buf.samples.shape))


@dataclass
class TrainLog:
    losses: List[float] = field(default_factory=list)
    records: List[dict] = field(default_factory=list)
    final: dict = field(default_factory=dict)

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        clean = bool(self.records) and "psnr_clean" in self.records[0]
        extra = ["psnr_clean", "ssim_clean"] if clean else []
        w.writerow(["iteration", "loss", "psnr", "ssim", "elapsed_ms"] + extra)
        for r in self.records:
            row = [r["iteration"], repr(r["loss"]), repr(r["psnr"]), repr(r["ssim"]), f"{r['elapsed_ms']:.3f}"]
            w.writerow(row + [repr(r[k]) for k in extra])
        return buf.getvalue()

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write(self.csv_text())

    def summary(self) -> dict:
        return {"iterations": len(self.losses), "final": self.final}

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)


def _layer_norms(net: Network):
    return [float(np.linalg.norm(w)) for w in net.weights]


def _fresh(net: Network):
    # an empty trace: asks forward() to keep STAF terms from the first iteration on
    return ForwardTrace(None, [], [], id(net), [])


def fit_signal(net: Network, task: TaskSpec) -> Tuple[Network, TrainLog]:
    """Train ``net`` in place on ``task`` with full-batch Adam.

    The loss is the MSE against the (possibly noise-corrupted) target. PSNR
    and SSIM are logged every ``task.log_every`` iterations against the same
    target; with noise, ``psnr_clean`` tracks the clean signal as well.
    """
    clean = task.target
    coords = make_coordinate_grid(clean.spatial)
    if coords.shape[1] != net.config.input_dim:
        raise ShapeError(f"task is {coords.shape[1]}-D but network input_dim is {net.config.input_dim}")
    if clean.channels != net.config.output_dim:
        raise ShapeError(f"target has {clean.channels} channels, network outputs {net.config.output_dim}")
    train = add_noise(clean, task.noise, Rng(task.seed))
    y = train.flat()
    params = net.parameters()
    state = AdamState.for_params(params)
    log = TrainLog()
    t0 = time.perf_counter()
    want_ssim = task.kind is TaskKind.IMAGE

    def record(it, loss, out):
        pred = clean.with_samples(out)
        row = {
            "iteration": it,
            "loss": loss,
            "psnr": psnr(pred, train),
            "ssim": ssim(pred, train) if want_ssim else float("nan"),
            "elapsed_ms": 1000.0 * (time.perf_counter() - t0),
        }
        if task.noise:
            row["psnr_clean"] = psnr(pred, clean)
            row["ssim_clean"] = ssim(pred, clean) if want_ssim else float("nan")
        log.records.append(row)

    trace = None
    for it in range(task.iterations):
        try:
            trace = forward(net, coords, reuse=trace or _fresh(net))
        except NumericError as exc:
            raise NumericError(f"iteration {it}: {exc}; layer norms {_layer_norms(net)}") from exc
        loss, g = mse(trace.output, y)
        if not np.isfinite(loss):
            raise NumericError(f"iteration {it}: non-finite loss; layer norms {_layer_norms(net)}")
        log.losses.append(loss)
        if it % task.log_every == 0:
            record(it, loss, trace.output)
        grads = backward(net, trace, g)
        adam_step(state, params, grads.arrays(), task.learning_rate)

    out = forward(net, coords).output
    loss, _ = mse(out, y)
    record(task.iterations, loss, out)
    final = dict(log.records[-1])
    final["elapsed_ms"] = 1000.0 * (time.perf_counter() - t0)
    log.final = final
    return net, log


def predict(net: Network, like: SignalBuffer) -> SignalBuffer:
    return like.with_samples(net(make_coordinate_grid(like.spatial)))
