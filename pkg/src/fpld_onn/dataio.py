"""Dataset ingestion (IDX files) and flat key-value run configuration."""

from __future__ import annotations

import dataclasses
import gzip
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import IdxParseError, ParameterError

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

SPLIT_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def _read_bytes(path) -> bytes:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def parse_idx(raw: bytes, expected_magic: int) -> np.ndarray:
    """Decode an unsigned-byte IDX container into an array of its dims."""
    if len(raw) < 4:
        raise IdxParseError(f"file too short for the magic number ({len(raw)} bytes)", len(raw))
    magic = struct.unpack(">I", raw[:4])[0]
    if magic != expected_magic:
        raise IdxParseError(f"bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}", 0)
    ndim = raw[3]
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IdxParseError(f"truncated header: need {header} bytes, have {len(raw)}", len(raw))
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    size = int(np.prod(dims, dtype=np.int64))
    if len(raw) < header + size:
        raise IdxParseError(f"truncated data: need {size} bytes after header, have "
                            f"{len(raw) - header}", len(raw))
    if len(raw) > header + size:
        raise IdxParseError(f"{len(raw) - header - size} trailing bytes after data",
                            header + size)
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=header).reshape(dims)


def load_idx(images_path, labels_path) -> tuple[np.ndarray, np.ndarray]:
    """Images as float32 rows in [0, 1] (n x 784) and uint8 labels."""
    imgs = parse_idx(_read_bytes(images_path), IMAGE_MAGIC)
    labels = parse_idx(_read_bytes(labels_path), LABEL_MAGIC)
    if imgs.ndim != 3:
        raise IdxParseError(f"image file must have 3 dims, got {imgs.ndim}", 3)
    if labels.ndim != 1:
        raise IdxParseError(f"label file must have 1 dim, got {labels.ndim}", 3)
    if imgs.shape[0] != labels.shape[0]:
        raise IdxParseError(f"count mismatch: {imgs.shape[0]} images vs "
                            f"{labels.shape[0]} labels", 4)
    if labels.size and labels.max() > 9:
        i = int(np.argmax(labels > 9))
        raise IdxParseError(f"label {labels[i]} out of range 0..9", 8 + i)
    x = imgs.reshape(imgs.shape[0], imgs.shape[1] * imgs.shape[2]).astype(np.float32) / np.float32(255.0)
    return x, labels.copy()


def write_idx(path, array: np.ndarray) -> None:
    a = np.ascontiguousarray(array, dtype=np.uint8)
    magic = IMAGE_MAGIC if a.ndim == 3 else LABEL_MAGIC if a.ndim == 1 else 0x800 | a.ndim
    data = struct.pack(">I", magic) + struct.pack(f">{a.ndim}I", *a.shape) + a.tobytes()
    if str(path).endswith(".gz"):
        data = gzip.compress(data, mtime=0)
    Path(path).write_bytes(data)


@dataclass
class Dataset:
    name: str
    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray

    def subset(self, n_train=None, n_test=None) -> "Dataset":
        return Dataset(self.name, self.train_x[:n_train], self.train_y[:n_train],
                       self.test_x[:n_test], self.test_y[:n_test])


def _find(directory: Path, stem: str) -> Path:
    for cand in (stem, stem + ".gz", stem.replace("-idx", ".idx"),
                 stem.replace("-idx", ".idx") + ".gz"):
        if (directory / cand).exists():
            return directory / cand
    raise FileNotFoundError(f"no {stem}[.gz] in {directory}")


def load_dataset(name: str, directory) -> Dataset:
    """Load both splits from a directory holding the four standard files."""
    if name not in ("mnist", "fashion-mnist"):
        raise ParameterError(f"unknown dataset {name!r}")
    d = Path(directory)
    parts = []
    for split in ("train", "test"):
        img, lab = SPLIT_FILES[split]
        parts += list(load_idx(_find(d, img), _find(d, lab)))
    return Dataset(name, *parts)


# -- run configuration -------------------------------------------------------

def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.replace(";", ",").split(",") if v.strip())


@dataclass
class RunConfig:
    """Everything one CLI invocation needs; detunings are in units of Omega."""

    laser_params: str = ""
    bias_ma: float = 7.6
    mode_index: int = -9
    detunings1: tuple = (-26.0, -29.0, -32.0)
    detunings2: tuple = (-26.0, -29.0, -32.0)
    family_detunings: tuple = tuple(float(-k) for k in range(15, 41))
    fwhm1: float = 40.0
    fwhm2: float = 45.0
    p_max: float = 150.0
    grid_points: int = 41
    fit_restarts: int = 8
    hidden: int = 10
    learning_rate: float = 1e-3
    batch_size: int = 256
    epochs: int = 100
    l2: float = 0.02
    dropout: float = 0.1
    runs: int = 10
    seed: int = 0
    dataset: str = "mnist"
    data_dir: str = "data/mnist"
    output_dir: str = "out"
    cache_dir: str = ""
    physical_images: int = 1000
    jobs: int = 1

    def validate(self) -> "RunConfig":
        if self.laser_params and not Path(self.laser_params).exists():
            raise ParameterError(f"laser parameter file {self.laser_params} does not exist")
        for name in ("detunings1", "detunings2", "family_detunings"):
            vals = getattr(self, name)
            if not vals or any(not (v < 0 and math.isfinite(v)) for v in vals):
                raise ParameterError(f"{name} must be a non-empty list of negative detunings")
        if self.dataset not in ("mnist", "fashion-mnist"):
            raise ParameterError(f"dataset must be mnist or fashion-mnist, got {self.dataset!r}")
        for name in ("fwhm1", "fwhm2", "p_max", "bias_ma", "learning_rate"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be > 0")
        for name in ("grid_points", "hidden", "batch_size", "epochs", "runs", "jobs",
                     "fit_restarts", "physical_images"):
            if getattr(self, name) < 1:
                raise ParameterError(f"{name} must be >= 1")
        if not 0 <= self.dropout < 1:
            raise ParameterError("dropout must be in [0, 1)")
        if self.l2 < 0:
            raise ParameterError("l2 must be >= 0")
        return self

    @property
    def cache_path(self) -> Path:
        return Path(self.cache_dir) if self.cache_dir else Path(self.output_dir) / "cache"

    def with_overrides(self, pairs: dict) -> "RunConfig":
        return dataclasses.replace(self, **_coerce(pairs))

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ", ".join(repr(x) for x in v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"


def _coerce(pairs: dict) -> dict:
    fields = {f.name: f for f in dataclasses.fields(RunConfig)}
    out = {}
    for key, raw in pairs.items():
        if key not in fields:
            raise ParameterError(f"unknown config key {key!r}")
        default = fields[key].default
        raw = str(raw).strip()
        try:
            if isinstance(default, tuple):
                out[key] = _floats(raw)
            elif isinstance(default, bool):
                out[key] = raw.lower() in ("1", "true", "yes")
            elif isinstance(default, int):
                out[key] = int(raw)
            elif isinstance(default, float):
                out[key] = float(raw)
            else:
                out[key] = raw
        except ValueError as exc:
            raise ParameterError(f"bad value for {key}: {raw!r}") from exc
    return out


def parse_config_text(text: str, origin: str = "<config>") -> dict:
    pairs = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParameterError(f"{origin}:{lineno}: expected key = value")
        k, v = line.split("=", 1)
        pairs[k.strip()] = v.strip()
    return pairs


def load_run_config(path=None, overrides: dict | None = None) -> RunConfig:
    pairs = parse_config_text(Path(path).read_text(), str(path)) if path else {}
    pairs.update(overrides or {})
    return RunConfig().with_overrides(pairs).validate()


def convert_fashion_json(src_dir, dst_dir, n_test_per_class: int = 1000) -> None:
    """Convert per-class JSON pixel lists into the four standard IDX files.

    For each class the last ``n_test_per_class`` samples form the test split.
    Rows that are not 784 pixels long are skipped.
    """
    src, dst = Path(src_dir), Path(dst_dir)
    dst.mkdir(parents=True, exist_ok=True)
    tr_x, tr_y, te_x, te_y = [], [], [], []
    for label in range(10):
        data = json.loads((src / f"{label}.json").read_text())["data"]
        # a few source files carry empty placeholder rows
        rows = np.asarray([r for r in data if len(r) == 784], dtype=np.uint8).reshape(-1, 28, 28)
        cut = rows.shape[0] - n_test_per_class
        tr_x.append(rows[:cut])
        te_x.append(rows[cut:])
        tr_y.append(np.full(cut, label, np.uint8))
        te_y.append(np.full(n_test_per_class, label, np.uint8))
    rng = np.random.default_rng(0)
    for split, xs, ys in (("train", tr_x, tr_y), ("test", te_x, te_y)):
        x = np.concatenate(xs)
        y = np.concatenate(ys)
        order = rng.permutation(y.size)
        img, lab = SPLIT_FILES[split]
        write_idx(dst / img, x[order])
        write_idx(dst / lab, y[order])
