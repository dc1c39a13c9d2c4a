import gzip
import json
import struct
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fpld_onn.dataio import (
    IMAGE_MAGIC,
    LABEL_MAGIC,
    RunConfig,
    convert_fashion_json,
    load_dataset,
    load_idx,
    load_run_config,
    parse_config_text,
    parse_idx,
    write_idx,
)
from fpld_onn.errors import IdxParseError, ParameterError

MNIST = Path(__file__).resolve().parents[1] / "data" / "mnist"


def _pair(tmp_path, images, labels, gz=False):
    ext = ".gz" if gz else ""
    ip, lp = tmp_path / f"img{ext}", tmp_path / f"lab{ext}"
    write_idx(ip, images)
    write_idx(lp, labels)
    return ip, lp


def test_empty_file_fails_at_offset_zero(tmp_path):
    (tmp_path / "e").write_bytes(b"")
    with pytest.raises(IdxParseError) as exc:
        load_idx(tmp_path / "e", tmp_path / "e")
    assert exc.value.offset == 0
    assert "offset 0" in str(exc.value)


def test_bad_magic():
    raw = struct.pack(">IIII", 0x00000802, 1, 1, 1) + b"\0"
    with pytest.raises(IdxParseError) as exc:
        parse_idx(raw, IMAGE_MAGIC)
    assert exc.value.offset == 0


@pytest.mark.parametrize("cut", [6, 12, 20])
def test_truncated_file(cut):
    raw = struct.pack(">IIII", IMAGE_MAGIC, 2, 2, 2) + bytes(8)
    with pytest.raises(IdxParseError) as exc:
        parse_idx(raw[:cut], IMAGE_MAGIC)
    assert exc.value.offset == cut


def test_trailing_bytes():
    raw = struct.pack(">II", LABEL_MAGIC, 2) + bytes(3)
    with pytest.raises(IdxParseError) as exc:
        parse_idx(raw, LABEL_MAGIC)
    assert exc.value.offset == 10


def test_three_zero_images(tmp_path):
    x, y = load_idx(*_pair(tmp_path, np.zeros((3, 28, 28)), np.zeros(3)))
    assert x.shape == (3, 784) and not x.any()
    assert y.tolist() == [0, 0, 0]


def test_count_mismatch_and_bad_label(tmp_path):
    with pytest.raises(IdxParseError, match="count mismatch"):
        load_idx(*_pair(tmp_path, np.zeros((3, 28, 28)), np.zeros(2)))
    with pytest.raises(IdxParseError, match="out of range") as exc:
        load_idx(*_pair(tmp_path, np.zeros((3, 28, 28)), np.array([1, 12, 3])))
    assert exc.value.offset == 9


def test_gzip_is_transparent(tmp_path):
    rng = np.random.default_rng(0)
    imgs = rng.integers(0, 256, (5, 28, 28))
    labs = rng.integers(0, 10, 5)
    plain = load_idx(*_pair(tmp_path, imgs, labs))
    (tmp_path / "z").mkdir()
    packed = load_idx(*_pair(tmp_path / "z", imgs, labs, gz=True))
    assert gzip.decompress((tmp_path / "z" / "img.gz").read_bytes())[:4] == b"\0\0\x08\x03"
    assert np.array_equal(plain[0], packed[0]) and np.array_equal(plain[1], packed[1])


@settings(max_examples=25, deadline=None)
@given(n=st.integers(0, 4), seed=st.integers(0, 1000))
def test_idx_round_trip(tmp_path_factory, n, seed):
    d = tmp_path_factory.mktemp("idx")
    imgs = np.random.default_rng(seed).integers(0, 256, (n, 28, 28), dtype=np.uint8)
    labs = np.random.default_rng(seed + 1).integers(0, 10, n, dtype=np.uint8)
    x, y = load_idx(*_pair(d, imgs, labs))
    assert np.array_equal(np.round(x * 255).astype(np.uint8).reshape(n, 28, 28), imgs)
    assert np.array_equal(y, labs)
    assert x.dtype == np.float32 and (x.size == 0 or (x.min() >= 0 and x.max() <= 1))


@pytest.mark.skipif(not MNIST.exists(), reason="MNIST files not present")
def test_official_mnist():
    d = load_dataset("mnist", MNIST)
    assert d.train_x.shape == (60000, 784) and d.test_x.shape == (10000, 784)
    assert d.train_y[0] == 5
    assert d.train_x.max() == 1.0 and d.train_x.min() == 0.0


def test_config_parsing(tmp_path):
    text = "# comment\nhidden = 25\ndetunings1 = -20, -30 ; -35\n\nl2 = 0  # inline\n"
    path = tmp_path / "run.cfg"
    path.write_text(text)
    cfg = load_run_config(path, {"seed": "7"})
    assert cfg.hidden == 25 and cfg.seed == 7 and cfg.l2 == 0.0
    assert cfg.detunings1 == (-20.0, -30.0, -35.0)
    assert cfg.fwhm1 == 40.0 and cfg.fwhm2 == 45.0
    # the text form parses back to the same configuration
    path.write_text(cfg.to_text())
    assert load_run_config(path) == cfg


@pytest.mark.parametrize("pairs", [
    {"hiden": "3"}, {"hidden": "x"}, {"detunings1": "-3, 4"}, {"dropout": "1"},
    {"dataset": "cifar"}, {"laser_params": "/no/such/file"}, {"epochs": "0"},
])
def test_invalid_config(pairs):
    with pytest.raises(ParameterError):
        load_run_config(None, pairs)


def test_config_line_without_equals():
    with pytest.raises(ParameterError, match=":2:"):
        parse_config_text("a = 1\nbroken\n")


def test_defaults_validate():
    assert RunConfig().validate().dataset == "mnist"


def test_fashion_converter(tmp_path):
    src, dst = tmp_path / "json", tmp_path / "idx"
    src.mkdir()
    rng = np.random.default_rng(2)
    for k in range(10):
        rows = rng.integers(0, 256, (5, 784)).tolist() + [[]]
        (src / f"{k}.json").write_text(json.dumps({"data": rows}))
    convert_fashion_json(src, dst, n_test_per_class=2)
    d = load_dataset("fashion-mnist", dst)
    assert d.train_x.shape == (30, 784) and d.test_x.shape == (20, 784)
    assert np.bincount(d.test_y).tolist() == [2] * 10
    convert_fashion_json(src, tmp_path / "again", n_test_per_class=2)
    for f in dst.iterdir():
        assert f.read_bytes() == (tmp_path / "again" / f.name).read_bytes()
