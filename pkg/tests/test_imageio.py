import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from PIL import Image

from anisotilt.errors import ConfigError, DataError
from anisotilt.imageio import (ImageBuffer, dump_config, is_close_config, list_sequence,
                               load_config, parse_config_text, quantize, read_image,
                               read_sequence, table1_text, write_image, write_sequence)
from anisotilt.stats import Cn2Profile, table1_config


def test_pgm_roundtrip_small(tmp_path):
    a = np.arange(64.0).reshape(8, 8) * 3
    p = write_image(ImageBuffer(a), tmp_path / "a.pgm")
    b = read_image(p)
    np.testing.assert_array_equal(b.data, a)
    assert b.bit_depth == 8


def test_pgm_header_comments_and_16bit(tmp_path):
    a = np.arange(80, dtype=np.uint16).reshape(8, 10) * 800
    p = tmp_path / "c.pgm"
    p.write_bytes(b"P5\n# comment\n10 8\n# another\n65535\n" + a.astype(">u2").tobytes())
    b = read_image(p)
    np.testing.assert_array_equal(b.data, a)
    assert b.bit_depth == 16


@pytest.mark.parametrize("raw", [b"P5\n10 8\n255\n" + b"\0" * 10, b"P5\nx 8\n255\n", b"P2\n1 1\n"])
def test_pgm_malformed(tmp_path, raw):
    p = tmp_path / "bad.pgm"
    p.write_bytes(raw)
    with pytest.raises(DataError):
        read_image(p)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.sampled_from([8, 16]), st.sampled_from([".png", ".pgm"]))
def test_roundtrip_property(tmp_path_factory, seed, depth, ext):
    peak = 255 if depth == 8 else 65535
    a = np.random.default_rng(seed).integers(0, peak + 1, (9, 12)).astype(float)
    p = write_image(a, tmp_path_factory.mktemp("rt") / f"x{ext}", depth)
    b = read_image(p)
    np.testing.assert_array_equal(b.data, a)
    assert b.bit_depth == depth


def test_rgb_rejected(tmp_path):
    p = tmp_path / "rgb.png"
    Image.new("RGB", (10, 10)).save(p)
    with pytest.raises(DataError):
        read_image(p)


def test_unknown_and_missing(tmp_path):
    p = tmp_path / "x.bin"
    p.write_bytes(b"hello world")
    with pytest.raises(DataError):
        read_image(p)
    with pytest.raises(DataError):
        read_image(tmp_path / "nope.png")


def test_buffer_validation():
    with pytest.raises(DataError):
        ImageBuffer(np.zeros((4, 4)))
    with pytest.raises(DataError):
        ImageBuffer(np.zeros((8, 8, 3)))
    with pytest.raises(DataError):
        ImageBuffer(np.full((8, 8), np.inf))


def test_quantize_rounding_and_clamp():
    assert quantize(np.array([255.6, 254.5, 300.0]))[0] == 255
    assert list(quantize(np.array([254.5, 253.5, 300.0]))) == [254, 254, 255]
    with pytest.warns(RuntimeWarning, match="negative"):
        assert quantize(np.array([-3.0]))[0] == 0


def test_sequence_roundtrip(tmp_path):
    frames = np.random.default_rng(0).integers(0, 60000, (3, 10, 12)).astype(float)
    write_sequence(frames, tmp_path / "seq")
    assert len(list_sequence(tmp_path / "seq")) == 3
    np.testing.assert_array_equal(read_sequence(tmp_path / "seq"), frames)
    np.testing.assert_array_equal(read_sequence(str(tmp_path / "seq" / "frame_*.png"), threads=2),
                                  frames)
    np.save(tmp_path / "s.npy", frames)
    np.testing.assert_array_equal(read_sequence(tmp_path / "s.npy"), frames)
    with pytest.raises(DataError):
        read_sequence(tmp_path / "empty*")


def test_sequence_size_mismatch(tmp_path):
    write_image(np.zeros((8, 8)), tmp_path / "a.png")
    write_image(np.zeros((8, 9)), tmp_path / "b.png")
    with pytest.raises(DataError):
        read_sequence(tmp_path)


def test_config_fixpoint(tmp_path):
    cfg = table1_config()
    for prof in (None, Cn2Profile.constant(5e-16), Cn2Profile.linear(1e-16, 2e-15)):
        text = dump_config(cfg, prof, {"M": 10})
        cfg2, prof2, opts = parse_config_text(text)
        assert is_close_config(cfg, cfg2)
        assert prof2 == prof
        assert opts == {"M": 10}
        assert dump_config(cfg2, prof2, opts) == text
    p = tmp_path / "t1.cfg"
    p.write_text(table1_text())
    assert is_close_config(load_config(p)[0], cfg)


BASE = table1_text()


@pytest.mark.parametrize("text", [
    BASE.replace("path_length", "# path_length"),
    BASE + "colour = 3\n",
    BASE + "wavelength = 5e-7\n",
    BASE + "f_number = 9.0\n",
    BASE + "cn2_level = 7\n",
    BASE + "cn2 = 1e-15\ncn2_level = 2\n",
    BASE + "cn2_source = 1e-15\n",
    BASE + "no equals sign\n",
    BASE.replace("0.525e-06", "abc").replace("5.25e-07", "abc"),
])
def test_config_errors(text):
    with pytest.raises(ConfigError):
        parse_config_text(text)


def test_config_levels_and_checks():
    _, prof, _ = parse_config_text(BASE + "cn2_level = 4\nf_number = 5.9\n")
    assert prof == Cn2Profile.constant(1e-15)
    with pytest.raises(ConfigError):
        load_config("/nonexistent/cfg")
