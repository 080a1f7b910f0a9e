import json
import os
import stat

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stafnet.core_math import sym_eig
from stafnet.errors import IntegrityError, ParseError, ShapeError, UnsupportedFormatError, ValidationError
from stafnet.fileio import (
    atomic_write_bytes,
    decode_checkpoint,
    decode_image,
    encode_checkpoint,
    encode_image,
    load_checkpoint,
    load_image,
    load_wav,
    merge_settings,
    parse_config,
    save_checkpoint,
    save_image,
    save_wav,
    write_spectrum,
)
from stafnet.network import NetworkConfig, build_network
from stafnet.trainer import SignalBuffer, TaskKind


class TestImages:
    def test_fixture(self, cameraman):
        assert cameraman.dims == (64, 64, 1)
        assert 0.0 <= cameraman.samples.min() and cameraman.samples.max() <= 1.0

    def test_two_by_two(self):
        buf = decode_image(b"P5\n2 2\n255\n" + bytes([0, 255, 128, 64]))
        np.testing.assert_array_equal(buf.samples.ravel(), [0, 1, 128 / 255, 64 / 255])

    def test_header_comments(self):
        buf = decode_image(b"P5 # c\n2 # w\n1\n255\n" + bytes([0, 255]))
        np.testing.assert_array_equal(buf.samples.ravel(), [0.0, 1.0])

    def test_color(self):
        buf = decode_image(b"P6\n1 1\n255\n" + bytes([255, 0, 51]))
        np.testing.assert_allclose(buf.samples.ravel(), [1.0, 0.0, 0.2])

    @pytest.mark.parametrize(
        "data,err",
        [
            (b"P2\n1 1\n255\n0", UnsupportedFormatError),
            (b"P5\n1 1\n65535\n\0\0", UnsupportedFormatError),
            (b"JUNK", ParseError),
            (b"P5\nx 1\n255\n\0", ParseError),
            (b"P5\n2 2\n255\n\0", ParseError),
            (b"P5\n0 2\n255\n", ParseError),
        ],
    )
    def test_rejects(self, data, err):
        with pytest.raises(err):
            decode_image(data)

    def test_truncation_offset(self):
        with pytest.raises(ParseError) as info:
            decode_image(b"P5\n4 4\n255\n" + bytes(3))
        assert info.value.offset == 14

    @given(st.integers(1, 6), st.integers(1, 6), st.sampled_from([1, 3]), st.integers(0, 2**32 - 1))
    def test_round_trip(self, h, w, c, seed):
        px = np.random.default_rng(seed).integers(0, 256, (h, w, c))
        buf = SignalBuffer(px / 255.0)
        back = decode_image(encode_image(buf))
        np.testing.assert_array_equal(back.samples, buf.samples)

    def test_clamps_out_of_range(self):
        back = decode_image(encode_image(SignalBuffer(np.array([[-0.5, 1.5]]))))
        np.testing.assert_array_equal(back.samples.ravel(), [0.0, 1.0])

    def test_two_channel_rejected(self):
        with pytest.raises(ShapeError):
            encode_image(SignalBuffer(np.zeros((2, 2, 2))))

    def test_file_round_trip(self, tmp_path, cameraman):
        save_image(tmp_path / "a.pgm", cameraman)
        np.testing.assert_array_equal(load_image(tmp_path / "a.pgm").samples, cameraman.samples)


class TestWav:
    @given(st.lists(st.integers(-32768, 32767), min_size=1, max_size=50))
    def test_round_trip(self, ints):
        import tempfile

        buf = SignalBuffer(np.array(ints) / 32768.0, TaskKind.AUDIO, sample_rate=8000)
        with tempfile.TemporaryDirectory() as d:
            save_wav(os.path.join(d, "a.wav"), buf)
            back = load_wav(os.path.join(d, "a.wav"))
        np.testing.assert_array_equal(back.samples, buf.samples)
        assert back.sample_rate == 8000

    def test_silence_and_full_scale(self, tmp_path):
        save_wav(tmp_path / "z.wav", SignalBuffer(np.zeros(10), TaskKind.AUDIO))
        assert not load_wav(tmp_path / "z.wav").samples.any()
        save_wav(tmp_path / "f.wav", SignalBuffer(np.array([32767 / 32768, 1.0]), TaskKind.AUDIO))
        np.testing.assert_array_equal(load_wav(tmp_path / "f.wav").samples.ravel(), [32767 / 32768] * 2)

    @given(st.lists(st.floats(-1, 32767 / 32768), min_size=1, max_size=50))
    def test_float_error_within_one_lsb(self, vals):
        import tempfile

        buf = SignalBuffer(np.array(vals), TaskKind.AUDIO)
        with tempfile.TemporaryDirectory() as d:
            save_wav(os.path.join(d, "a.wav"), buf)
            back = load_wav(os.path.join(d, "a.wav"))
        assert back.samples.shape == buf.samples.shape
        assert np.max(np.abs(back.samples - buf.samples)) <= 1 / 32768

    def test_stereo_rejected(self, tmp_path):
        import wave

        with wave.open(str(tmp_path / "s.wav"), "wb") as wf:
            wf.setnchannels(2)
            wf.setsampwidth(2)
            wf.setframerate(8000)
            wf.writeframes(bytes(8))
        with pytest.raises(UnsupportedFormatError, match="mono"):
            load_wav(tmp_path / "s.wav")

    def test_garbage(self, tmp_path):
        (tmp_path / "g.wav").write_bytes(b"RIFF0000WAVEjunk")
        with pytest.raises(ParseError):
            load_wav(tmp_path / "g.wav")


def nets():
    yield build_network(NetworkConfig(2, 1, [4, 3], seed=1))
    yield build_network(NetworkConfig(3, 2, [5], sharing="per-neuron", tau=2, seed=2))
    yield build_network(NetworkConfig(1, 1, [4], sharing="per-network", activated_output=True, n_dummy=1))
    yield build_network(NetworkConfig(2, 1, [8], activation="relu", positional_encoding=3))


class TestCheckpoint:
    @pytest.mark.parametrize("net", list(nets()))
    def test_bit_exact(self, net, tmp_path):
        save_checkpoint(net, tmp_path / "m.ckpt")
        back = load_checkpoint(tmp_path / "m.ckpt")
        assert back.config == net.config
        for a, b in zip(net.parameters(), back.parameters()):
            assert a.tobytes() == b.tobytes()
        x = np.random.default_rng(0).uniform(-1, 1, (7, net.config.input_dim))
        np.testing.assert_array_equal(back(x), net(x))

    def test_every_flipped_byte_detected(self):
        data = bytearray(encode_checkpoint(build_network(NetworkConfig(1, 1, [2], tau=1))))
        for i in range(0, len(data), 7):
            bad = bytearray(data)
            bad[i] ^= 0x01
            with pytest.raises(IntegrityError):
                decode_checkpoint(bytes(bad))

    def test_truncated_and_magic(self):
        data = encode_checkpoint(build_network(NetworkConfig(1, 1, [2])))
        with pytest.raises(IntegrityError):
            decode_checkpoint(data[:-5])
        with pytest.raises(IntegrityError, match="magic"):
            decode_checkpoint(b"NOPE" + data[4:])

    def test_version(self):
        data = bytearray(encode_checkpoint(build_network(NetworkConfig(1, 1, [2]))))
        data[4] = 9
        with pytest.raises(IntegrityError, match="version 9"):
            decode_checkpoint(bytes(data))


class TestConfig:
    def test_parse(self):
        cfg = parse_config("# top\nlr = 0.01  # trailing\n\nhidden-width=64\n")
        assert cfg == {"lr": "0.01", "hidden_width": "64"}

    def test_errors_carry_offset(self):
        with pytest.raises(ParseError) as info:
            parse_config("a = 1\nbroken\n")
        assert info.value.offset == 6
        with pytest.raises(ParseError, match="duplicate"):
            parse_config("a=1\na=2\n")

    def test_precedence(self):
        defaults = {"lr": 1e-3, "iters": 500, "name": "x", "flag": False, "widths": [1]}
        merged = merge_settings(
            defaults, {"lr": "0.5", "iters": "7", "flag": "yes", "widths": "3, 4"}, {"iters": 9, "name": None}
        )
        assert merged == {"lr": 0.5, "iters": 9, "name": "x", "flag": True, "widths": [3, 4]}

    def test_unknown_and_bad_values(self):
        with pytest.raises(ValidationError, match="unknown"):
            merge_settings({"a": 1}, {"b": "2"}, {})
        with pytest.raises(ValidationError, match="'a'"):
            merge_settings({"a": 1}, {"a": "one"}, {})


class TestAtomicWrite:
    def test_permissions_follow_umask(self, tmp_path):
        atomic_write_bytes(tmp_path / "f", b"x")
        mode = stat.S_IMODE(os.stat(tmp_path / "f").st_mode)
        mask = os.umask(0)
        os.umask(mask)
        assert mode == 0o666 & ~mask

    def test_no_temp_left_on_failure(self, tmp_path):
        (tmp_path / "f").write_bytes(b"old")

        with pytest.raises(TypeError):
            atomic_write_bytes(tmp_path / "f", object())
        assert (tmp_path / "f").read_bytes() == b"old"
        assert os.listdir(tmp_path) == ["f"]


class TestSpectrum:
    def test_files(self, tmp_path):
        m = np.array([[2.0, 1.0], [1.0, 2.0]])
        eig = sym_eig(m)
        info = write_spectrum(tmp_path, eig, [[0.0], [1.0]], {"source": "test"})
        lines = (tmp_path / "eigenvalues.csv").read_text().splitlines()
        assert lines[0] == "index,eigenvalue" and float(lines[1].split(",")[1]) == pytest.approx(3.0)
        vecs = np.fromfile(tmp_path / "eigenfunctions.f64", dtype="<f8").reshape(info["rows"], info["cols"])
        np.testing.assert_array_equal(vecs, eig.eigenvectors)
        meta = json.loads((tmp_path / "eigenfunctions.json").read_text())
        assert meta["source"] == "test" and meta["inputs"] == [[0.0], [1.0]]
