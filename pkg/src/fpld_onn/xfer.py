"""Peak-power transfer functions of the injected FP-LD.

A transfer curve maps the peak power of an injected Gaussian pulse to the
peak power emitted at the injection wavelength.  Curves for a range of
detunings form the family of reconfigurable activations; they are cached on
disk as CSV files keyed by everything that determines their content.
"""

from __future__ import annotations

import hashlib
import logging
import math
import os
import tempfile
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FpldError, NoThresholdError, NumericalDomainError

log = logging.getLogger(__name__)

#: Sampling of the pulse simulations used for transfer curves.
SIM_DT = 0.05e-12
#: Window around each pulse, in multiples of its FWHM (and at least 400 ps).
WINDOW_FWHMS = 10.0


@dataclass
class TransferCurve:
    """Sampled map P_out = Phi(P_in) of pulse peak powers (mW)."""

    points: np.ndarray
    detuning: float
    pulse_fwhm: float
    bias: float
    mode_index: int = -9
    params_hash: str = ""

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise NumericalDomainError("points must be an (n, 2) array")
        self.points = pts

    @property
    def p_in(self) -> np.ndarray:
        return self.points[:, 0]

    @property
    def p_out(self) -> np.ndarray:
        return self.points[:, 1]

    def validate(self, min_points: int = 8):
        if self.points.shape[0] < min_points:
            raise NumericalDomainError(f"transfer curve needs >= {min_points} points")
        if np.any(np.diff(self.p_in) <= 0):
            raise NumericalDomainError("P_in must be strictly increasing")
        if np.any(self.points < 0) or not np.all(np.isfinite(self.points)):
            raise NumericalDomainError("powers must be finite and >= 0")
        if not math.isfinite(self.detuning):
            raise NumericalDomainError("detuning must be finite")
        return self

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.points).tobytes())
        h.update(repr((self.detuning, self.pulse_fwhm, self.bias, self.mode_index,
                       self.params_hash)).encode())
        return h.hexdigest()[:16]


def default_grid(p_max: float = 150.0, n: int = 41) -> np.ndarray:
    """Uniform P_in grid (mW) used for the activation family."""
    return np.linspace(0.0, p_max, n)


def _pulse_window(fwhm: float) -> float:
    return max(400e-12, WINDOW_FWHMS * fwhm)


def _peaks(params, bias, mode_index, detuning, fwhm, p_values):
    from .laser import gaussian_waveform, simulate_pulse_responses

    window = _pulse_window(fwhm)
    drives = [gaussian_waveform(float(p), fwhm, SIM_DT, window) for p in p_values]
    outs = simulate_pulse_responses(params, bias, mode_index, detuning, drives)
    return np.array([o.samples.max() for o in outs])


def extract_transfer_curve(params, bias: float, mode_index: int, detuning: float,
                           fwhm_ps: float, p_grid) -> TransferCurve:
    """Peak output power for a Gaussian pulse of each peak power in ``p_grid``.

    ``detuning`` is in rad/s, ``fwhm_ps`` in picoseconds, powers in mW.
    """
    grid = np.asarray(p_grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise NumericalDomainError("p_grid must be a non-empty 1-D sequence")
    if np.any(grid < 0) or np.any(np.diff(grid) < 0):
        raise NumericalDomainError("p_grid must be sorted ascending and non-negative")
    if not fwhm_ps > 0:
        raise NumericalDomainError(f"pulse FWHM must be > 0, got {fwhm_ps}")
    try:
        peaks = _peaks(params, bias, mode_index, detuning, fwhm_ps * 1e-12, grid)
    except FpldError as exc:
        # re-run point by point to find the failing input power
        for p in grid:
            try:
                _peaks(params, bias, mode_index, detuning, fwhm_ps * 1e-12, [p])
            except FpldError as inner:
                raise type(exc)(f"{inner} (P_in = {p} mW)") from inner
        raise
    return TransferCurve(np.column_stack([grid, peaks]), detuning, fwhm_ps, bias,
                         mode_index, params.content_hash())


def threshold_point(curve: TransferCurve) -> float:
    """P_in of maximum discrete slope (central differences; first on ties)."""
    p_in, p_out = curve.p_in, curve.p_out
    if p_in.size < 3:
        raise NoThresholdError("need at least 3 points to locate a threshold")
    floor = p_out[0]
    if not p_out.max() > 2.0 * floor:
        raise NoThresholdError(
            f"curve has no rising region (max {p_out.max():.4g} <= 2 x floor {floor:.4g})")
    slope = np.gradient(p_out, p_in)
    return float(p_in[int(np.argmax(slope))])


def saturation_variation(curve: TransferCurve, top_fraction: float = 0.2) -> float:
    """Relative P_out variation over the top ``top_fraction`` of the P_in range."""
    p_in, p_out = curve.p_in, curve.p_out
    lo = p_in[-1] - top_fraction * (p_in[-1] - p_in[0])
    top = p_out[p_in >= lo - 1e-12]
    return float((top.max() - top.min()) / top.max())


def refine_curve(params, curve: TransferCurve, step: float = 1.0,
                 span: int = 2) -> TransferCurve:
    """One refinement pass: add ``step``-spaced points within ``span`` coarse
    intervals of the maximum-slope point."""
    p_in = curve.p_in
    slope = np.gradient(curve.p_out, p_in)
    i = int(np.argmax(slope))
    lo = p_in[max(0, i - span)]
    hi = p_in[min(p_in.size - 1, i + span)]
    extra = np.arange(lo, hi + step / 2, step)
    extra = extra[~np.isin(np.round(extra, 9), np.round(p_in, 9))]
    if extra.size == 0:
        return curve
    peaks = _peaks(params, curve.bias, curve.mode_index, curve.detuning,
                   curve.pulse_fwhm * 1e-12, extra)
    pts = np.vstack([curve.points, np.column_stack([extra, peaks])])
    pts = pts[np.argsort(pts[:, 0], kind="stable")]
    return TransferCurve(pts, curve.detuning, curve.pulse_fwhm, curve.bias,
                         curve.mode_index, curve.params_hash)


# -- on-disk cache -----------------------------------------------------------

def _grid_hash(grid) -> str:
    return hashlib.sha256(np.ascontiguousarray(grid, dtype=float).tobytes()).hexdigest()[:16]


def cache_key(params_hash, bias, mode_index, detuning, fwhm_ps, grid, refine) -> str:
    blob = repr((params_hash, float(bias), int(mode_index), float(detuning),
                 float(fwhm_ps), _grid_hash(grid), bool(refine)))
    return hashlib.sha256(blob.encode()).hexdigest()[:24]


def write_curve_csv(curve: TransferCurve, path, extra_meta: dict | None = None) -> None:
    """Write a curve as CSV with ``#``-prefixed metadata; atomic replace."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {
        "detuning_rad_s": repr(float(curve.detuning)),
        "pulse_fwhm_ps": repr(float(curve.pulse_fwhm)),
        "bias_mA": repr(float(curve.bias)),
        "mode_index": str(int(curve.mode_index)),
        "params_hash": curve.params_hash,
    }
    meta.update(extra_meta or {})
    lines = [f"# {k}: {v}" for k, v in meta.items()]
    lines.append("p_in_mW,p_out_mW")
    lines += [f"{a!r},{b!r}" for a, b in curve.points.tolist()]
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_curve_csv(path) -> TransferCurve:
    meta = {}
    rows = []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            k, _, v = line[1:].partition(":")
            meta[k.strip()] = v.strip()
        elif line.startswith("p_in"):
            continue
        elif line.strip():
            a, b = line.split(",")
            rows.append((float(a), float(b)))
    try:
        curve = TransferCurve(
            np.array(rows, dtype=float).reshape(-1, 2),
            float(meta["detuning_rad_s"]), float(meta["pulse_fwhm_ps"]),
            float(meta["bias_mA"]), int(meta["mode_index"]), meta.get("params_hash", ""))
    except (KeyError, ValueError) as exc:
        raise NumericalDomainError(f"corrupt curve file {path}: {exc}") from exc
    return curve


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class CurveCache:
    """Content-addressed directory of transfer-curve CSV files.

    ``warnings_seen`` records keys whose entries were corrupt and recomputed.
    """

    def __init__(self, root):
        self.root = Path(root)
        self.warnings_seen: list[str] = []

    def path(self, params_hash: str, key: str) -> Path:
        return self.root / params_hash / f"{key}.csv"

    def load(self, params_hash, key) -> TransferCurve | None:
        p = self.path(params_hash, key)
        if not p.exists():
            return None
        try:
            return read_curve_csv(p).validate(min_points=2)
        except (NumericalDomainError, ValueError, OSError) as exc:
            msg = f"corrupt cache entry {p.name}: {exc}; recomputing"
            warnings.warn(msg, RuntimeWarning, stacklevel=3)
            log.warning(msg)
            self.warnings_seen.append(key)
            return None

    def store(self, curve: TransferCurve, key: str) -> None:
        try:
            write_curve_csv(curve, self.path(curve.params_hash, key), {"cache_key": key})
        except OSError as exc:
            raise OSError(f"cannot write transfer-curve cache entry {key}: {exc}") from exc


def _family_member(args):
    params, bias, mode_index, det, fwhm_ps, grid, refine = args
    curve = extract_transfer_curve(params, bias, mode_index, det, fwhm_ps, grid)
    if refine:
        curve = refine_curve(params, curve)
    return curve


def generate_family(params, bias: float, mode_index: int, detunings, fwhm_ps: float,
                    p_grid=None, cache_dir=None, refine: bool = True,
                    jobs: int = 1) -> list[TransferCurve]:
    """One transfer curve per (negative) detuning, cached under ``cache_dir``."""
    detunings = [float(d) for d in detunings]
    if not detunings:
        raise NumericalDomainError("detuning list is empty")
    if any(d >= 0 for d in detunings):
        raise NumericalDomainError("family detunings must all be negative")
    grid = default_grid() if p_grid is None else np.asarray(p_grid, dtype=float)
    cache = CurveCache(cache_dir) if cache_dir is not None else None
    ph = params.content_hash()
    keys = [cache_key(ph, bias, mode_index, d, fwhm_ps, grid, refine) for d in detunings]
    curves: list[TransferCurve | None] = [None] * len(detunings)
    todo = []
    for i, key in enumerate(keys):
        if cache is not None:
            curves[i] = cache.load(ph, key)
        if curves[i] is None:
            todo.append(i)
    tasks = [(params, bias, mode_index, detunings[i], fwhm_ps, grid, refine) for i in todo]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_family_member, tasks))
    else:
        results = [_family_member(t) for t in tasks]
    for i, curve in zip(todo, results):
        curves[i] = curve
        if cache is not None:
            cache.store(curve, keys[i])
    return curves
