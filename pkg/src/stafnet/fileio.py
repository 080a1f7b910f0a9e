"""Binary PGM/PPM images, PCM16 WAV audio, checkpoints, key=value config files, spectrum dumps.

Every writer goes through :func:`atomic_write_bytes` (temp file in the target
directory, fsync, rename), so a crashed run never leaves a half-written file
under the final name.
"""

import hashlib
import json
import os
import struct
import tempfile
import wave
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from .activation import ActivationParams
from .core_math import EigenResult
from .errors import IntegrityError, ParseError, ShapeError, UnsupportedFormatError, ValidationError
from .network import Network, NetworkConfig
from .trainer import SignalBuffer, TaskKind

CHECKPOINT_MAGIC = b"STAF"
CHECKPOINT_VERSION = 1
_DIGEST = 32  # sha256


def _umask() -> int:
    mask = os.umask(0)
    os.umask(mask)
    return mask


def atomic_write_bytes(path, data: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fchmod(fh.fileno(), 0o666 & ~_umask())  # mkstemp creates 0600
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str):
    atomic_write_bytes(path, text.encode("utf-8"))


# --- images -----------------------------------------------------------------


class _HeaderReader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def _skip_space(self):
        d = self.data
        while self.pos < len(d):
            ch = d[self.pos : self.pos + 1]
            if ch == b"#":
                end = d.find(b"\n", self.pos)
                self.pos = len(d) if end < 0 else end + 1
            elif ch.isspace():
                self.pos += 1
            else:
                break

    def token(self) -> bytes:
        self._skip_space()
        start = self.pos
        d = self.data
        while self.pos < len(d) and not d[self.pos : self.pos + 1].isspace() and d[self.pos : self.pos + 1] != b"#":
            self.pos += 1
        if start == self.pos:
            raise ParseError("unexpected end of header", start)
        return d[start : self.pos]

    def integer(self, what: str) -> int:
        start = self.pos
        tok = self.token()
        if not tok.isdigit():
            raise ParseError(f"bad {what} {tok[:16]!r}", start)
        return int(tok)


def decode_image(data: bytes) -> SignalBuffer:
    r = _HeaderReader(data)
    magic = r.token() if data[:1] == b"P" else None
    if magic not in (b"P5", b"P6"):
        if magic in (b"P1", b"P2", b"P3", b"P4"):
            raise UnsupportedFormatError(f"only binary P5/P6 files are supported, got {magic.decode()}")
        raise ParseError("missing P5/P6 magic number", 0)
    channels = 1 if magic == b"P5" else 3
    width = r.integer("width")
    height = r.integer("height")
    maxval_at = r.pos
    maxval = r.integer("maxval")
    if width < 1 or height < 1:
        raise ParseError(f"image dimensions must be positive, got {width}x{height}", maxval_at)
    if maxval != 255:
        raise UnsupportedFormatError(f"only 8-bit files with maxval 255 are supported, got {maxval}")
    if r.pos >= len(data) or not data[r.pos : r.pos + 1].isspace():
        raise ParseError("expected a single whitespace byte after maxval", r.pos)
    start = r.pos + 1
    need = width * height * channels
    if len(data) - start < need:
        raise ParseError(f"truncated pixel data: need {need} bytes, found {len(data) - start}", len(data))
    px = np.frombuffer(data, dtype=np.uint8, count=need, offset=start)
    return SignalBuffer(px.reshape(height, width, channels) / 255.0, TaskKind.IMAGE)


def load_image(path) -> SignalBuffer:
    return decode_image(Path(path).read_bytes())


def quantize_image(buf: SignalBuffer) -> np.ndarray:
    """Clamp to [0, 1] and round to 8-bit."""
    return np.round(np.clip(buf.samples, 0.0, 1.0) * 255.0).astype(np.uint8)


def encode_image(buf: SignalBuffer) -> bytes:
    if buf.samples.ndim != 3 or buf.channels not in (1, 3):
        raise ShapeError(f"images need 1 or 3 channels, got shape {buf.samples.shape}")
    h, w, c = buf.samples.shape
    magic = b"P5" if c == 1 else b"P6"
    return magic + f"\n{w} {h}\n255\n".encode("ascii") + quantize_image(buf).tobytes()


def save_image(path, buf: SignalBuffer):
    atomic_write_bytes(path, encode_image(buf))


# --- audio ------------------------------------------------------------------


def load_wav(path) -> SignalBuffer:
    try:
        with wave.open(str(path), "rb") as wf:
            if wf.getcomptype() != "NONE":
                raise UnsupportedFormatError(f"compressed WAV ({wf.getcomptype()}) is not supported")
            if wf.getsampwidth() != 2:
                raise UnsupportedFormatError(f"only 16-bit PCM is supported, got {8 * wf.getsampwidth()}-bit")
            if wf.getnchannels() != 1:
                raise UnsupportedFormatError(f"only mono audio is supported, got {wf.getnchannels()} channels")
            rate = wf.getframerate()
            n = wf.getnframes()
            raw = wf.readframes(n)
    except (wave.Error, EOFError) as exc:
        raise ParseError(f"malformed WAV file: {exc}") from exc
    if len(raw) != 2 * n:
        raise ParseError(f"truncated WAV data: header says {n} frames, found {len(raw) // 2}", 44 + len(raw))
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return SignalBuffer(samples, TaskKind.AUDIO, sample_rate=rate)


def encode_wav(buf: SignalBuffer, sample_rate=None) -> bytes:
    import io

    rate = sample_rate or buf.sample_rate or 44100
    if buf.channels != 1:
        raise ShapeError(f"only mono audio can be written, got {buf.channels} channels")
    pcm = np.clip(np.round(buf.samples.ravel() * 32768.0), -32768, 32767).astype("<i2")
    out = io.BytesIO()
    with wave.open(out, "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(int(rate))
        wf.writeframes(pcm.tobytes())
    return out.getvalue()


def save_wav(path, buf: SignalBuffer, sample_rate=None):
    atomic_write_bytes(path, encode_wav(buf, sample_rate))


# --- checkpoints ------------------------------------------------------------


def _config_dict(cfg: NetworkConfig) -> dict:
    out = {}
    for k, v in asdict(cfg).items():
        out[k] = v.value if hasattr(v, "value") else v
    return out


def encode_checkpoint(net: Network) -> bytes:
    """``STAF`` | u32 version | u32 len + JSON config | u32 count + arrays | sha256 of all prior bytes.

    Each array is u32 ndim, u64 dims, then little-endian float64 data.
    """
    cfg = json.dumps(_config_dict(net.config), sort_keys=True).encode("utf-8")
    arrays = net.parameters()
    parts = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(cfg)), cfg, struct.pack("<I", len(arrays))]
    for a in arrays:
        a = np.asarray(a, dtype="<f8")
        parts.append(struct.pack("<I", a.ndim) + struct.pack(f"<{a.ndim}Q", *a.shape))
        parts.append(np.ascontiguousarray(a).tobytes())
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


def decode_checkpoint(data: bytes) -> Network:
    if len(data) < 12 + _DIGEST or data[:4] != CHECKPOINT_MAGIC:
        raise IntegrityError("not a checkpoint file (bad magic or too short)")
    version = struct.unpack_from("<I", data, 4)[0]
    if version != CHECKPOINT_VERSION:
        raise IntegrityError(f"checkpoint version {version} is not supported (this build reads version {CHECKPOINT_VERSION})")
    body, digest = data[:-_DIGEST], data[-_DIGEST:]
    if hashlib.sha256(body).digest() != digest:
        raise IntegrityError("checkpoint checksum mismatch (file is corrupted)")
    try:
        pos = 8
        (cfg_len,) = struct.unpack_from("<I", body, pos)
        pos += 4
        raw_cfg = json.loads(body[pos : pos + cfg_len].decode("utf-8"))
        pos += cfg_len
        known = {f.name for f in fields(NetworkConfig)}
        config = NetworkConfig(**{k: v for k, v in raw_cfg.items() if k in known})
        (count,) = struct.unpack_from("<I", body, pos)
        pos += 4
        arrays = []
        for _ in range(count):
            (ndim,) = struct.unpack_from("<I", body, pos)
            pos += 4
            shape = struct.unpack_from(f"<{ndim}Q", body, pos)
            pos += 8 * ndim
            n = int(np.prod(shape, dtype=np.int64))
            if pos + 8 * n > len(body):
                raise IntegrityError("checkpoint array data is truncated")
            arrays.append(np.frombuffer(body, dtype="<f8", count=n, offset=pos).reshape(shape).astype(np.float64))
            pos += 8 * n
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError, TypeError, ValueError) as exc:
        raise IntegrityError(f"checkpoint payload is malformed: {exc}") from exc
    if pos != len(body):
        raise IntegrityError("trailing bytes after checkpoint arrays")
    depth = config.depth
    if len(arrays) < 2 * depth or (len(arrays) - 2 * depth) % 3:
        raise IntegrityError(f"checkpoint holds {len(arrays)} arrays, inconsistent with depth {depth}")
    weights = arrays[0 : 2 * depth : 2]
    biases = arrays[1 : 2 * depth : 2]
    rest = arrays[2 * depth :]
    acts = [ActivationParams(*rest[i : i + 3]) for i in range(0, len(rest), 3)]
    return Network(config, weights, biases, acts)


def save_checkpoint(net: Network, path):
    atomic_write_bytes(path, encode_checkpoint(net))


def load_checkpoint(path) -> Network:
    return decode_checkpoint(Path(path).read_bytes())


# --- key = value configuration ---------------------------------------------


def parse_config(text: str) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment; keys may not repeat."""
    out = {}
    offset = 0
    for line in text.splitlines(keepends=True):
        body = line.split("#", 1)[0].strip()
        if body:
            if "=" not in body:
                raise ParseError(f"expected key = value, got {body[:40]!r}", offset)
            key, value = (s.strip() for s in body.split("=", 1))
            if not key:
                raise ParseError("empty key", offset)
            key = key.replace("-", "_")
            if key in out:
                raise ParseError(f"duplicate key {key!r}", offset)
            out[key] = value
        offset += len(line.encode("utf-8"))
    return out


def load_config(path) -> dict:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def _coerce(key, raw, like):
    if isinstance(raw, str) and like is not None and not isinstance(like, str):
        try:
            if isinstance(like, bool):
                low = raw.lower()
                if low not in ("1", "0", "true", "false", "yes", "no"):
                    raise ValueError(raw)
                return low in ("1", "true", "yes")
            if isinstance(like, int):
                return int(raw)
            if isinstance(like, float):
                return float(raw)
            if isinstance(like, list):
                return [int(v) for v in raw.replace(",", " ").split()]
        except ValueError as exc:
            raise ValidationError(f"config key {key!r}: cannot read {raw!r} as {type(like).__name__}") from exc
    return raw


def merge_settings(defaults: dict, file_values: dict, flags: dict) -> dict:
    """Command-line flags override config-file keys, which override built-in defaults."""
    unknown = set(file_values) - set(defaults)
    if unknown:
        raise ValidationError(f"unknown config keys: {sorted(unknown)}")
    out = dict(defaults)
    for k, v in file_values.items():
        out[k] = _coerce(k, v, defaults.get(k))
    for k, v in flags.items():
        if v is not None:
            out[k] = v
    return out


# --- spectra ----------------------------------------------------------------


def write_spectrum(outdir, eig: EigenResult, inputs, meta=None) -> dict:
    """eigenvalues.csv, eigenfunctions.f64 (row-major, little-endian) and eigenfunctions.json."""
    outdir = Path(outdir)
    lines = ["index,eigenvalue"] + [f"{i},{v!r}" for i, v in enumerate(map(float, eig.eigenvalues))]
    atomic_write_text(outdir / "eigenvalues.csv", "\n".join(lines) + "\n")
    vecs = np.ascontiguousarray(eig.eigenvectors, dtype="<f8")
    atomic_write_bytes(outdir / "eigenfunctions.f64", vecs.tobytes())
    info = {
        "file": "eigenfunctions.f64",
        "dtype": "<f8",
        "order": "C",
        "rows": int(vecs.shape[0]),
        "cols": int(vecs.shape[1]),
        "layout": "column k is the eigenfunction of eigenvalue k sampled at the inputs",
        "inputs": np.asarray(inputs, dtype=np.float64).tolist(),
    }
    if meta:
        info.update(meta)
    atomic_write_text(outdir / "eigenfunctions.json", json.dumps(info, indent=2, sort_keys=True))
    return info
