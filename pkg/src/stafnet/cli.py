"""Command-line entry point: ``stafnet <command> [flags]``.

Every command prints one JSON object on stdout. Failures print
``{"error": kind, "message": ...}`` on stderr and exit nonzero
(2 for bad flags or inputs, 1 for a failed verification gate).
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import fileio, kronecker, ntk
from .activation import (
    InitConfig,
    InitScheme,
    SharingMode,
    amplitude_moment_oracle,
    init_layer_params,
    sample_amplitudes,
    summarize_samples,
    verify_init_statistics,
)
from .core_math import Rng
from .errors import StafError
from .network import ActivationKind, NetworkConfig, build_network, grad_check
from .trainer import SignalBuffer, TaskKind, TaskSpec, fit_signal, predict, psnr, ssim

EXIT_GATE = 1
EXIT_USAGE = 2


class UsageError(StafError):
    kind = "usage"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# --- fit / eval ---------------------------------------------------------------

FIT_DEFAULTS = {
    "activation": "staf",
    "tau": 5,
    "width": 128,
    "depth": 3,
    "omega0": 30.0,
    "lr": 1e-3,
    "iters": 500,
    "seed": 0,
    "sharing": "per-layer",
    "scheme": "theorem",
    "log_every": 10,
    "noise_poisson": 0.0,
    "noise_gaussian": 0.0,
}
AUDIO_DEFAULTS = {"lr": 2.5e-4, "omega0": 3000.0}
DENOISE_DEFAULTS = {"lr": 1.5e-4, "omega0": 5.0, "tau": 2}


def _load_target(args) -> SignalBuffer:
    if bool(args.image) == bool(args.audio):
        raise UsageError("give exactly one of --image or --audio")
    return fileio.load_image(args.image) if args.image else fileio.load_wav(args.audio)


def _fit_settings(args, kind: TaskKind) -> dict:
    defaults = dict(FIT_DEFAULTS)
    if kind is TaskKind.AUDIO:
        defaults.update(AUDIO_DEFAULTS)
    file_values = fileio.load_config(args.config) if args.config else {}
    noisy = any(
        float(v or 0) > 0
        for v in (args.noise_poisson, args.noise_gaussian, file_values.get("noise_poisson"), file_values.get("noise_gaussian"))
    )
    if noisy:
        defaults.update(DENOISE_DEFAULTS)
    flags = {k: getattr(args, k) for k in FIT_DEFAULTS}
    return fileio.merge_settings(defaults, file_values, flags)


def _write_recon(out: Path, net, target: SignalBuffer):
    recon = predict(net, target)
    if target.kind is TaskKind.AUDIO:
        fileio.save_wav(out / "recon.wav", recon, target.sample_rate)
        return "recon.wav"
    img = recon.samples
    if img.shape[2] == 1:
        img = np.repeat(img, 3, axis=2)
    fileio.save_image(out / "recon.ppm", SignalBuffer(img))
    return "recon.ppm"


def cmd_fit(args):
    target = _load_target(args)
    s = _fit_settings(args, target.kind)
    noise = None
    if s["noise_poisson"] and s["noise_gaussian"]:
        raise UsageError("choose one noise model")
    if s["noise_poisson"]:
        noise = {"poisson_mean": s["noise_poisson"]}
    elif s["noise_gaussian"]:
        noise = {"gaussian_sigma": s["noise_gaussian"]}
    cfg = NetworkConfig(
        input_dim=len(target.spatial),
        output_dim=target.channels,
        hidden_widths=[s["width"]] * s["depth"],
        activation=s["activation"],
        sharing=s["sharing"],
        tau=s["tau"],
        omega0=s["omega0"],
        seed=s["seed"],
        init_scheme=s["scheme"],
    )
    task = TaskSpec(target.kind, target, s["iters"], s["lr"], noise, s["seed"], s["log_every"])
    net, log = fit_signal(build_network(cfg), task)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    fileio.atomic_write_text(out / "log.csv", log.csv_text())
    fileio.save_checkpoint(net, out / "model.ckpt")
    recon = _write_recon(out, net, target)
    summary = {"command": "fit", "settings": s, "final": log.final, "artifacts": ["log.csv", "summary.json", "model.ckpt", recon]}
    fileio.atomic_write_text(out / "summary.json", json.dumps(summary, indent=2, sort_keys=True))
    return {k: summary[k] for k in ("command", "final", "artifacts")}


def cmd_eval(args):
    net = fileio.load_checkpoint(args.model)
    target = _load_target(args)
    recon = predict(net, target)
    result = {"command": "eval", "psnr": psnr(recon, target)}
    if target.kind is TaskKind.IMAGE:
        result["ssim"] = ssim(recon, target)
    if args.out:
        out = Path(args.out)
        result["artifact"] = _write_recon(out, net, target)
    return result


# --- verification -------------------------------------------------------------


def cmd_gradcheck(args):
    rng = Rng(args.seed).spawn(100)
    cfg = NetworkConfig(args.input_dim, 1, [args.width] * args.depth, activation=args.activation,
                        tau=args.tau, seed=args.seed, sharing=args.sharing)
    net = build_network(cfg)
    x = rng.random((args.n_inputs, args.input_dim)) * 2.0 - 1.0
    y = rng.random((args.n_inputs, 1))
    rep = grad_check(net, x, y, h=args.h, tol=args.tol)
    return {"command": "gradcheck", "seed": args.seed, **rep.as_dict()}, rep.passed


def cmd_verify_init(args):
    cfg = InitConfig(omega0=args.omega0, scheme=args.scheme)
    rng = Rng(args.seed)
    amps = sample_amplitudes(rng.spawn(1), args.tau, cfg, args.samples)[:, 0]
    amp_rows = []
    ok = True
    for j in (1, 2, 3):
        st = summarize_samples(amps ** (2 * j))
        want = amplitude_moment_oracle(j, args.tau)
        z = abs(st.mean - want) / st.se_mean
        amp_rows.append({"j": j, "estimate": st.mean, "expected": want, "stderr": st.se_mean, "z": z})
        ok &= bool(z <= args.z_max)
    rep = verify_init_statistics(args.input_dim, [args.width] * args.depth, args.tau, rng.spawn(2), args.samples, cfg)
    layers = []
    for st in rep.layers:
        zs = {
            "mean": abs(st.mean) / st.se_mean,
            "var": abs(st.var - 1.0) / st.se_var,
            "kurtosis": abs(st.kurtosis - 3.0) / st.se_kurtosis,
        }
        row = st.as_dict()
        row["z"] = zs
        layers.append(row)
        if args.scheme == "theorem":
            ok &= all(v <= args.z_max for v in zs.values())
    return {"command": "verify-init", "tau": args.tau, "scheme": args.scheme, "seed": args.seed,
            "samples": args.samples, "amplitude_moments": amp_rows, "layers": layers, "passed": ok}, ok


def cmd_verify_kronecker(args):
    rng = np.random.default_rng(args.seed)
    widths = [int(v) for v in rng.integers(1, args.max_width + 1, args.L + 1)]
    rep = kronecker.verify_equivalence(widths, args.tau, args.seed, args.n_inputs)
    rep["widths"] = widths
    rep["tol"] = args.tol
    rep["passed"] = bool(rep["max_abs_diff"] < args.tol)
    return {"command": "verify-kronecker", **rep}, rep["passed"]


# --- counting -----------------------------------------------------------------


def cmd_delannoy(args):
    out = {"command": "delannoy", "T": args.T, "K": args.K, "count": kronecker.delannoy_count(args.T, args.K)}
    if args.tau is not None:
        out["tau"] = args.tau
        out["ratio"] = kronecker.tau_expansion_ratio(args.T, args.K, args.tau)
    return out


def cmd_freqset(args):
    if args.model:
        psi = kronecker.first_layer_embedding(fileio.load_checkpoint(args.model))
    else:
        if args.T is None:
            raise UsageError("give --model or --T")
        psi = Rng(args.seed).normal((args.T, args.D))
    fs = kronecker.potential_frequencies(psi, args.K, tol=args.tol)
    return {
        "command": "freqset",
        "T": int(psi.shape[0]),
        "D": int(psi.shape[1]),
        "K": args.K,
        "lattice_size": len(fs.lattice),
        "delannoy": kronecker.delannoy_count(psi.shape[0], args.K),
        "n_distinct": fs.n_distinct,
        "tol": args.tol,
    }


# --- NTK ----------------------------------------------------------------------


def _ntk_net(args):
    cfg = NetworkConfig(1, 1, [args.width] * args.depth, activation=args.activation, tau=args.tau, seed=args.seed)
    return build_network(cfg)


def _grid(n):
    return np.linspace(-1.0, 1.0, n)[:, None]


def cmd_ntk(args):
    if args.analytic:
        p = init_layer_params(Rng(args.seed), args.tau, InitConfig(omega0=args.omega0))
        x = np.array([1.0, 0.0])
        xt = np.array([args.xi, np.sqrt(max(0.0, 1.0 - args.xi**2))])
        sigma, kern = ntk.analytic_ntk(p, args.depth, x, xt, normalize=not args.raw)
        return {"command": "ntk", "mode": "analytic", "xi": args.xi, "depth": args.depth, "seed": args.seed,
                "sigma": sigma, "kernel": kern}
    k = ntk.empirical_ntk(_ntk_net(args), _grid(args.n), include_activation=args.include_activation)
    eig = ntk.ntk_spectrum(k)
    w = eig.eigenvalues
    out = {"command": "ntk", "mode": "empirical", "activation": args.activation, "seed": args.seed, "n": args.n,
           "lambda_max": float(w[0]), "lambda_min": float(w[-1]), "psd": ntk.is_psd(w),
           "n_significant": ntk.count_significant(w, args.rel), "rel": args.rel}
    if args.out:
        out_dir = Path(args.out)
        fileio.atomic_write_bytes(out_dir / "kernel.f64", np.ascontiguousarray(k.matrix, dtype="<f8").tobytes())
    return out


def cmd_spectrum(args):
    k = ntk.empirical_ntk(_ntk_net(args), _grid(args.n), include_activation=args.include_activation)
    eig = ntk.ntk_spectrum(k)
    meta = {"activation": args.activation, "seed": args.seed, "width": args.width, "depth": args.depth}
    fileio.write_spectrum(args.out, eig, _grid(args.n).ravel(), meta)
    w = eig.eigenvalues
    return {"command": "spectrum", **meta, "n": args.n, "n_significant": ntk.count_significant(w, args.rel),
            "artifacts": ["eigenvalues.csv", "eigenfunctions.f64", "eigenfunctions.json"]}


# --- parser -------------------------------------------------------------------


def _positive_int(v):
    n = int(v)
    if n < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return n


def _nonneg_int(v):
    n = int(v)
    if n < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {v}")
    return n


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="stafnet", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    f = sub.add_parser("fit", help="fit a network to an image or audio clip")
    f.add_argument("--image")
    f.add_argument("--audio")
    f.add_argument("--out", required=True)
    f.add_argument("--config", help="key = value file; flags override it")
    f.add_argument("--activation", choices=[a.value for a in ActivationKind])
    f.add_argument("--tau", type=_positive_int)
    f.add_argument("--width", type=_positive_int)
    f.add_argument("--depth", type=_positive_int)
    f.add_argument("--omega0", type=float)
    f.add_argument("--lr", type=float)
    f.add_argument("--iters", type=_positive_int)
    f.add_argument("--seed", type=_nonneg_int)
    f.add_argument("--sharing", choices=[m.value for m in SharingMode])
    f.add_argument("--scheme", choices=[s.value for s in InitScheme])
    f.add_argument("--log-every", dest="log_every", type=_positive_int)
    f.add_argument("--noise-poisson", dest="noise_poisson", type=float, help="mean photon count")
    f.add_argument("--noise-gaussian", dest="noise_gaussian", type=float, help="noise standard deviation")
    f.set_defaults(func=cmd_fit)

    e = sub.add_parser("eval", help="score a checkpoint against a target")
    e.add_argument("--model", required=True)
    e.add_argument("--image")
    e.add_argument("--audio")
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("gradcheck", help="analytic vs finite-difference gradients on a random net")
    g.add_argument("--seed", type=_nonneg_int, default=0)
    g.add_argument("--activation", choices=[a.value for a in ActivationKind], default="staf")
    g.add_argument("--sharing", choices=[m.value for m in SharingMode], default="per-layer")
    g.add_argument("--tau", type=_positive_int, default=3)
    g.add_argument("--width", type=_positive_int, default=16)
    g.add_argument("--depth", type=_positive_int, default=3)
    g.add_argument("--input-dim", dest="input_dim", type=_positive_int, default=2)
    g.add_argument("--n-inputs", dest="n_inputs", type=_positive_int, default=8)
    g.add_argument("--h", type=float, default=1e-6)
    g.add_argument("--tol", type=float, default=1e-5)
    g.set_defaults(func=cmd_gradcheck)

    v = sub.add_parser("verify-init", help="moment checks of the initialisation")
    v.add_argument("--tau", type=_positive_int, default=5)
    v.add_argument("--samples", type=_positive_int, default=100_000)
    v.add_argument("--seed", type=_nonneg_int, default=0)
    v.add_argument("--scheme", choices=[s.value for s in InitScheme], default="theorem")
    v.add_argument("--omega0", type=float, default=30.0)
    v.add_argument("--width", type=_positive_int, default=64)
    v.add_argument("--depth", type=_positive_int, default=3)
    v.add_argument("--input-dim", dest="input_dim", type=_positive_int, default=2)
    v.add_argument("--z-max", dest="z_max", type=float, default=4.0)
    v.set_defaults(func=cmd_verify_init)

    k = sub.add_parser("verify-kronecker", help="compare a STAF net with its Kronecker-equivalent sine net")
    k.add_argument("--seed", type=_nonneg_int, default=0)
    k.add_argument("--L", type=_positive_int, default=2)
    k.add_argument("--tau", type=_positive_int, default=2)
    k.add_argument("--max-width", dest="max_width", type=_positive_int, default=6)
    k.add_argument("--n-inputs", dest="n_inputs", type=_positive_int, default=100)
    k.add_argument("--tol", type=float, default=1e-9)
    k.set_defaults(func=cmd_verify_kronecker)

    d = sub.add_parser("delannoy", help="lattice-point count |V(T, K)|")
    d.add_argument("--T", type=_nonneg_int, required=True)
    d.add_argument("--K", type=_nonneg_int, required=True)
    d.add_argument("--tau", type=_positive_int)
    d.set_defaults(func=cmd_delannoy)

    q = sub.add_parser("freqset", help="potential frequency set of an embedding")
    q.add_argument("--model", help="checkpoint whose first layer gives the embedding")
    q.add_argument("--T", type=_nonneg_int)
    q.add_argument("--D", type=_positive_int, default=2)
    q.add_argument("--K", type=_nonneg_int, required=True)
    q.add_argument("--seed", type=_nonneg_int, default=0)
    q.add_argument("--tol", type=float, default=0.0)
    q.set_defaults(func=cmd_freqset)

    for name, func, help_ in (("ntk", cmd_ntk, "empirical or analytic NTK summary"),
                              ("spectrum", cmd_spectrum, "NTK eigenvalues and eigenfunctions")):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--activation", choices=[a.value for a in ActivationKind], default="staf")
        s.add_argument("--seed", type=_nonneg_int, default=0)
        s.add_argument("--tau", type=_positive_int, default=5)
        s.add_argument("--width", type=_positive_int, default=32)
        s.add_argument("--depth", type=_positive_int, default=3)
        s.add_argument("--n", type=_positive_int, default=64)
        s.add_argument("--rel", type=float, default=1e-6)
        s.add_argument("--include-activation", dest="include_activation", action="store_true")
        s.add_argument("--out", required=name == "spectrum")
        if name == "ntk":
            s.add_argument("--analytic", action="store_true")
            s.add_argument("--xi", type=float, default=0.5)
            s.add_argument("--omega0", type=float, default=3.0)
            s.add_argument("--raw", action="store_true", help="skip the rho-check(1) = 1 normalisation")
        s.set_defaults(func=func)
    return p


def _emit_error(kind: str, message: str):
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        result = args.func(args)
    except UsageError as exc:
        _emit_error(exc.kind, str(exc))
        return EXIT_USAGE
    except FileNotFoundError as exc:
        _emit_error("missing_file", str(exc))
        return EXIT_USAGE
    except StafError as exc:
        _emit_error(exc.kind, str(exc))
        return EXIT_USAGE
    passed = True
    if isinstance(result, tuple):
        result, passed = result
    sys.stdout.write(json.dumps(result, sort_keys=True, default=_json_default) + "\n")
    return 0 if passed else EXIT_GATE


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def main_exit():
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
