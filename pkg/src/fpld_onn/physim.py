"""Waveform-level inference through simulated laser neurons.

Pixels become Gaussian pulses whose peak power is the pixel value (mW).  An
ideal multiply-accumulate stage adds weighted pulse powers; each neuron is a
rate-equation simulation of the injected laser, and the next layer sums the
emitted waveforms.  The predicted label is the output neuron with the
largest peak power.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FpldError, NumericalDomainError, ParameterError
from .laser import DT_MAX, PS, LaserParams, Waveform, simulate_pulse_responses

#: Largest tolerated fraction of images that fail to simulate.
MAX_FAILURE_FRACTION = 1e-3


@dataclass(frozen=True)
class PulseGrid:
    """Shared time base of one layer: [0, window] sampled every dt (s)."""

    window: float = 400 * PS
    dt: float = DT_MAX

    @property
    def n(self) -> int:
        return int(round(self.window / self.dt)) + 1

    @property
    def center(self) -> float:
        return self.dt * (self.n // 2)

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n)

    def check(self, fwhm_ps: float):
        if self.window < 6 * fwhm_ps * PS:
            raise ParameterError(f"window {self.window / PS:g} ps shorter than 6 x FWHM")
        if self.dt > DT_MAX * (1 + 1e-12):
            raise ParameterError("grid dt exceeds the integrator step limit")

    def unit_pulse(self, fwhm_ps: float) -> np.ndarray:
        """Unit-peak Gaussian centred on a grid point."""
        sigma = fwhm_ps * PS / (2.0 * math.sqrt(2.0 * math.log(2.0)))
        return np.exp(-0.5 * ((self.times - self.center) / sigma) ** 2)


@dataclass(frozen=True)
class LaserConfig:
    """Laser operating point shared by every neuron."""

    params: LaserParams = field(default_factory=LaserParams)
    bias: float = 7.6
    mode_index: int = -9


def encode_pixel(value: float, fwhm_ps: float = 40.0, grid: PulseGrid = PulseGrid()) -> Waveform:
    """Gaussian pulse with peak power ``value`` mW (value in [0, 1])."""
    if not (0.0 <= value <= 1.0):
        raise NumericalDomainError(f"pixel value must be in [0, 1], got {value}")
    grid.check(fwhm_ps)
    return Waveform(0.0, grid.dt, value * grid.unit_pulse(fwhm_ps))


def weighted_sum(waveforms, weights, intercept: float = 0.0, fwhm_ps: float = 40.0) -> Waveform:
    """Ideal power-domain multiply-accumulate of pulses on one grid.

    A non-zero ``intercept`` adds a bias pulse: a unit-peak Gaussian of width
    ``fwhm_ps`` at the grid centre scaled by the intercept.
    """
    waveforms = list(waveforms)
    w = np.asarray(weights, dtype=float)
    if len(waveforms) != w.size:
        raise NumericalDomainError(f"{len(waveforms)} waveforms but {w.size} weights")
    if np.any(w < 0) or intercept < 0:
        raise NumericalDomainError("weights and intercept must be >= 0")
    if not waveforms:
        raise NumericalDomainError("nothing to sum")
    ref = waveforms[0]
    for wf in waveforms[1:]:
        if not wf.same_grid(ref):
            raise NumericalDomainError("waveforms must share one time grid")
    total = w @ np.stack([wf.samples for wf in waveforms])
    if intercept:
        grid = PulseGrid(ref.duration, ref.dt)
        total = total + intercept * grid.unit_pulse(fwhm_ps)
    return Waveform(ref.t0, ref.dt, total)


def neuron_responses(laser: LaserConfig, detuning: float, inputs) -> list[Waveform]:
    """Emitted waveforms of one neuron type for a batch of drive waveforms."""
    return simulate_pulse_responses(laser.params, laser.bias, laser.mode_index, detuning,
                                    inputs, tail=0.0)


def neuron_response(laser: LaserConfig, detuning: float, wf: Waveform) -> Waveform:
    """Output of the injected laser for drive ``wf`` (same time grid)."""
    return neuron_responses(laser, detuning, [wf])[0]


def measure_peak_fwhm(w: Waveform) -> tuple[float, float]:
    """Peak power (mW) and full width at half maximum (ps) above the floor.

    The floor is the median of the first 10% of samples; the half-level
    crossings are linearly interpolated.
    """
    s = w.samples
    if s.size < 3:
        raise NumericalDomainError("need at least 3 samples to measure a width")
    k = int(np.argmax(s))
    peak = float(s[k])
    floor = float(np.median(s[: max(1, s.size // 10)]))
    if not peak > floor:
        raise NumericalDomainError("flat waveform: FWHM undefined")
    half = floor + 0.5 * (peak - floor)
    left = np.nonzero(s[:k] < half)[0]
    right = np.nonzero(s[k:] < half)[0]
    if left.size == 0 or right.size == 0:
        raise NumericalDomainError("pulse not contained in the window: FWHM undefined")
    i = left[-1]
    t_left = i + (half - s[i]) / (s[i + 1] - s[i])
    j = k + right[0]
    t_right = j - 1 + (s[j - 1] - half) / (s[j - 1] - s[j])
    return peak, float((t_right - t_left) * w.dt / PS)


@dataclass
class NeuronRecord:
    image: int
    layer: int
    neuron: int
    pre_peak: float
    post_peak: float
    post_fwhm: float


SCATTER_COLUMNS = ["image", "layer", "neuron", "pre_peak_mW", "post_peak_mW", "post_fwhm_ps"]


def _fwhm_or_nan(w: Waveform) -> float:
    try:
        return measure_peak_fwhm(w)[1]
    except NumericalDomainError:
        return math.nan


def infer_batch(model, laser: LaserConfig, images, indices=None, grid: PulseGrid = PulseGrid(),
                fwhm1: float = 40.0, fwhm2: float = 45.0):
    """Physical inference for several images; returns (labels, records).

    Ties between output peaks go to the lowest label index.
    """
    images = np.atleast_2d(np.asarray(images, dtype=float))
    n_img = images.shape[0]
    indices = list(range(n_img)) if indices is None else list(indices)
    grid.check(max(fwhm1, fwhm2))
    if np.any(images < 0) or np.any(images > 1):
        raise NumericalDomainError("pixel values must be in [0, 1]")
    unit1 = grid.unit_pulse(fwhm1)
    unit2 = grid.unit_pulse(fwhm2)
    h, n_out = model.w1.shape[0], model.w2.shape[0]
    records = []
    # layer 1: every pixel pulse has the same shape, so the weighted sum of
    # pixel waveforms is a sum over scaled copies of the unit pulse
    drives1 = []
    for img in images:
        pix = img[:, None] * unit1[None, :]
        total = model.w1 @ pix + model.c1[:, None] * unit1[None, :]
        drives1 += [Waveform(0.0, grid.dt, np.maximum(row, 0.0)) for row in total]
    det1 = model.act1.detuning
    det2 = model.act2.detuning
    out1 = neuron_responses(laser, det1, drives1)
    drives2 = []
    for b in range(n_img):
        hidden = out1[b * h:(b + 1) * h]
        drives2.append(weighted_sum_rows(hidden, model.w2, model.c2, unit2))
    flat2 = [wf for group in drives2 for wf in group]
    out2 = neuron_responses(laser, det2, flat2)
    labels = np.empty(n_img, dtype=int)
    for b in range(n_img):
        peaks = np.array([o.samples.max() for o in out2[b * n_out:(b + 1) * n_out]])
        labels[b] = int(np.argmax(peaks))
        for j in range(h):
            d, o = drives1[b * h + j], out1[b * h + j]
            records.append(NeuronRecord(indices[b], 1, j, float(d.samples.max()),
                                        float(o.samples.max()), _fwhm_or_nan(o)))
        for j in range(n_out):
            d, o = flat2[b * n_out + j], out2[b * n_out + j]
            records.append(NeuronRecord(indices[b], 2, j, float(d.samples.max()),
                                        float(o.samples.max()), _fwhm_or_nan(o)))
    return labels, records


def weighted_sum_rows(waves, weights, intercepts, unit) -> list[Waveform]:
    """Every row of ``weights`` applied to the same list of waveforms."""
    stack = np.stack([w.samples for w in waves])
    total = np.asarray(weights) @ stack + np.asarray(intercepts)[:, None] * unit[None, :]
    ref = waves[0]
    return [Waveform(ref.t0, ref.dt, np.maximum(row, 0.0)) for row in total]


def infer_image(model, laser: LaserConfig, image, grid: PulseGrid = PulseGrid(),
                fwhm1: float = 40.0, fwhm2: float = 45.0):
    """Predicted label and per-neuron (pre, post) peak records for one image."""
    labels, records = infer_batch(model, laser, [image], None, grid, fwhm1, fwhm2)
    return int(labels[0]), records


@dataclass
class PhysicalResult:
    accuracy: float
    per_label: np.ndarray
    counts: np.ndarray
    predictions: np.ndarray
    indices: np.ndarray
    records: list
    failures: list


def seeded_subset(n_total: int, n: int, seed: int = 0) -> np.ndarray:
    """Sorted random sample of ``n`` test indices."""
    if n >= n_total:
        return np.arange(n_total)
    return np.sort(np.random.default_rng(seed).choice(n_total, n, replace=False))


def evaluate_physical(model, laser: LaserConfig, images, labels, indices=None,
                      chunk: int = 20, grid: PulseGrid = PulseGrid(), progress=None):
    """Physical-layer accuracy over a set of images.

    Images that fail to simulate are skipped and listed in ``failures``; more
    than 0.1% failures raises.
    """
    images = np.asarray(images)
    labels = np.asarray(labels)
    if images.shape[0] == 0:
        raise NumericalDomainError("empty test subset")
    indices = np.arange(images.shape[0]) if indices is None else np.asarray(indices)
    preds, kept, records, failures = [], [], [], []
    for s in range(0, images.shape[0], chunk):
        sl = slice(s, s + chunk)
        try:
            p, r = infer_batch(model, laser, images[sl], indices[sl], grid)
            preds += list(p)
            kept += list(range(s, min(s + chunk, images.shape[0])))
            records += r
        except FpldError:
            for k in range(s, min(s + chunk, images.shape[0])):
                try:
                    p, r = infer_batch(model, laser, images[k:k + 1], indices[k:k + 1], grid)
                except FpldError as exc:
                    failures.append((int(indices[k]), str(exc)))
                    continue
                preds.append(p[0])
                kept.append(k)
                records += r
        if progress is not None:
            progress(min(s + chunk, images.shape[0]), images.shape[0])
    if len(failures) > MAX_FAILURE_FRACTION * images.shape[0]:
        raise FpldError(f"{len(failures)} of {images.shape[0]} images failed to simulate; "
                        f"first: {failures[0][1]}")
    kept = np.array(kept, dtype=int)
    preds = np.array(preds, dtype=int)
    y = labels[kept].astype(int)
    correct = preds == y
    counts = np.bincount(y, minlength=10)
    hits = np.bincount(y, weights=correct, minlength=10)
    per_label = np.where(counts > 0, hits / np.maximum(counts, 1), np.nan)
    return PhysicalResult(float(correct.mean()), per_label, counts, preds, indices[kept],
                          records, failures)


def write_scatter_csv(path, records) -> None:
    from .xfer import atomic_write_text
    lines = [",".join(SCATTER_COLUMNS)]
    for r in records:
        lines.append(f"{r.image},{r.layer},{r.neuron},{float(r.pre_peak)!r},{float(r.post_peak)!r},"
                     f"{float(r.post_fwhm)!r}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_label_table(path, analytic_per_label, physical_per_label, counts) -> None:
    """Per-label accuracies (percent) of both testing modes."""
    from .xfer import atomic_write_text
    lines = ["label,count,analytic_accuracy_pct,physical_accuracy_pct,delta_pct"]
    for k in range(10):
        a, p = 100 * analytic_per_label[k], 100 * physical_per_label[k]
        lines.append(f"{k},{int(counts[k])},{a:.2f},{p:.2f},{p - a:+.2f}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def dump_waveform(path, w: Waveform) -> None:
    """Two-column CSV (time ps, power mW) of one signal."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["time_ps", "power_mW"])
        for t, p in zip(w.times / PS, w.samples):
            wr.writerow([f"{t:.4f}", repr(float(p))])
