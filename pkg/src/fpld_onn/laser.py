"""Multimode rate-equation model of a Fabry-Perot laser diode under
intramodal optical injection.

Carrier density ``N``, per-mode photon densities ``S_m`` and the complex
field ``E`` of the injected mode (frame rotating at the injection frequency,
``|E|^2`` in photon-density units) obey::

    dN/dt = I/(qV) - (A N + B N^2 + C N^3) - sum_m v_g g_m S_m
    g_m   = a (N - N_tr) (1 - delta_g m^2) / (1 + eps sum_m S_m)
    dS_m/dt = (Gamma v_g g_m - 1/tau_p) S_m + Gamma beta B N^2
    dE/dt = (1 + i alpha)/2 (Gamma v_g g_inj - 1/tau_p) E - i dw E
            + k_c sqrt(S_inj(t)) + Gamma beta B N^2 / (2 |E|^2) E

with ``S_inj = eta_in P_drive tau_p / (E_ph V)`` the photon density the
drive alone would sustain in the passive cavity.  Integration is a fixed-step
classical RK4 compiled with numba.
"""

from __future__ import annotations

import csv
import dataclasses
import functools
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import constants

from . import _kernels as K
from .errors import (
    ConvergenceError,
    IntegrationBlowupError,
    NumericalDomainError,
    ParameterError,
)

#: Detuning unit used throughout (rad/s).
OMEGA = 1e10
PS = 1e-12
NS = 1e-9

DT_MAX = 0.05 * PS


@dataclass(frozen=True)
class LaserParams:
    """Physical constants of the FP-LD (SI units unless noted).

    ``input_coupling`` is dimensionless; ``output_coupling`` converts photon
    density (m^-3) to emitted power in mW.
    """

    mode_count: int = 19
    active_volume: float = 5e-17
    confinement: float = 0.3
    group_velocity: float = constants.c / 3.7
    differential_gain: float = 5e-20
    transparency_density: float = 1.5e24
    gain_rolloff: float = 1e-3
    gain_compression: float = 2e-22
    photon_lifetime: float = 2e-12
    recomb_a: float = 1e8
    recomb_b: float = 1e-16
    recomb_c: float = 3e-41
    spont_factor: float = 1e-4
    linewidth_enhancement: float = 3.0
    injection_coupling: float = 1.1e11
    input_coupling: float = 0.5
    output_coupling: float = 2e-20
    wavelength: float = 1.55e-6
    seed_floor: float = 1e6

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.mode_count < 1 or self.mode_count % 2 != 1:
            raise ParameterError(f"mode_count must be odd and positive, got {self.mode_count}")
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if f.name == "mode_count":
                continue
            if not (math.isfinite(v) and v > 0):
                raise ParameterError(f"{f.name} must be finite and > 0, got {v!r}")
        half = (self.mode_count - 1) // 2
        if self.gain_rolloff * half * half >= 1:
            raise ParameterError("gain_rolloff too large: outermost modes would have no gain")

    @property
    def half_span(self) -> int:
        return (self.mode_count - 1) // 2

    @property
    def mode_numbers(self) -> np.ndarray:
        h = self.half_span
        return np.arange(-h, h + 1)

    @property
    def gain_shape(self) -> np.ndarray:
        m = self.mode_numbers
        return 1.0 - self.gain_rolloff * m.astype(float) ** 2

    @property
    def photon_energy(self) -> float:
        return constants.h * constants.c / self.wavelength

    @property
    def threshold_density(self) -> float:
        """Carrier density at which the central mode reaches net zero gain
        (no compression)."""
        return self.transparency_density + 1.0 / (
            self.confinement * self.group_velocity * self.differential_gain * self.photon_lifetime)

    @property
    def drive_amplitude_scale(self) -> float:
        """k_c * sqrt(S_inj) per sqrt(mW)."""
        s_per_mw = self.input_coupling * self.photon_lifetime * 1e-3 / (
            self.photon_energy * self.active_volume)
        return self.injection_coupling * math.sqrt(s_per_mw)

    def mode_slot(self, mode_index: int) -> int:
        if abs(mode_index) > self.half_span:
            raise ParameterError(f"mode index {mode_index} outside +-{self.half_span}")
        return mode_index + self.half_span

    def bias_rate(self, bias_ma: float) -> float:
        return bias_ma * 1e-3 / (constants.e * self.active_volume)

    def kernel_vector(self) -> np.ndarray:
        return np.array([
            self.confinement, self.group_velocity, self.differential_gain,
            self.transparency_density, self.gain_compression, 1.0 / self.photon_lifetime,
            self.recomb_a, self.recomb_b, self.recomb_c, self.spont_factor,
            self.linewidth_enhancement, self.injection_coupling, self.seed_floor,
        ])

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def content_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=repr)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def replace(self, **changes) -> "LaserParams":
        return dataclasses.replace(self, **changes)


def load_params(path) -> LaserParams:
    """Read a ``key = value`` parameter file (``#`` comments allowed).

    Keys are :class:`LaserParams` field names; values are SI floats.
    """
    names = {f.name: f for f in dataclasses.fields(LaserParams)}
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParameterError(f"{path}:{lineno}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in names:
            raise ParameterError(f"{path}:{lineno}: unknown parameter {key!r}")
        try:
            values[key] = int(val) if key == "mode_count" else float(val)
        except ValueError as exc:
            raise ParameterError(f"{path}:{lineno}: bad value for {key}: {val!r}") from exc
    return LaserParams(**values)


def save_params(params: LaserParams, path) -> None:
    lines = ["# FP-LD parameters (SI units; output_coupling in mW m^3)"]
    for k, v in params.to_dict().items():
        lines.append(f"{k} = {v!r}")
    Path(path).write_text("\n".join(lines) + "\n")


@dataclass(frozen=True)
class Waveform:
    """Uniformly sampled optical power (mW) starting at ``t0`` (s)."""

    t0: float
    dt: float
    samples: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        object.__setattr__(self, "samples", s)
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise NumericalDomainError(f"waveform dt must be > 0, got {self.dt}")
        if s.ndim != 1 or s.size < 2:
            raise NumericalDomainError("waveform needs at least 2 samples")
        if not np.all(np.isfinite(s)) or np.any(s < 0):
            raise NumericalDomainError("waveform samples must be finite and >= 0")

    def __len__(self):
        return self.samples.size

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.samples.size)

    @property
    def duration(self) -> float:
        return self.dt * (self.samples.size - 1)

    def same_grid(self, other: "Waveform") -> bool:
        return (len(self) == len(other) and self.t0 == other.t0 and self.dt == other.dt)

    def power_at(self, t: float) -> float:
        """Cubic-interpolated power at time ``t`` (zero outside support)."""
        x = (t - self.t0) / self.dt
        if x < -1 or x > self.samples.size:
            return 0.0
        k = math.floor(x)
        return float(K._interp(self.samples, k, x - k))


def gaussian_waveform(peak_mw: float, fwhm: float, dt: float, window: float,
                      center: float | None = None, t0: float = 0.0) -> Waveform:
    """Gaussian power pulse sampled on ``[t0, t0 + window]``."""
    n = int(round(window / dt)) + 1
    t = t0 + dt * np.arange(n)
    if center is None:
        center = t0 + dt * (n // 2)
    sigma = fwhm / (2.0 * math.sqrt(2.0 * math.log(2.0)))
    return Waveform(t0, dt, peak_mw * np.exp(-0.5 * ((t - center) / sigma) ** 2))


@dataclass(frozen=True)
class InjectionSpec:
    mode_index: int = -9
    detuning: float = -25 * OMEGA
    drive: Waveform | None = None


@dataclass
class LaserState:
    """Carrier density, per-mode photon densities and injected-mode field.

    ``photon`` has one entry per cavity mode; the entry of ``inj_slot`` is
    unused (zero) because that mode is carried by ``field``.
    """

    carrier: float
    photon: np.ndarray
    field: complex
    t: float = 0.0
    inj_slot: int = 0

    def to_vector(self) -> np.ndarray:
        y = np.empty(self.photon.size + 3)
        y[0] = self.carrier
        y[1:-2] = self.photon
        y[1 + self.inj_slot] = 0.0
        y[-2] = self.field.real
        y[-1] = self.field.imag
        return y

    @classmethod
    def from_vector(cls, y, t, inj_slot) -> "LaserState":
        y = np.asarray(y, dtype=float)
        return cls(float(y[0]), y[1:-2].copy(), complex(y[-2], y[-1]), t, inj_slot)

    @property
    def injected_intensity(self) -> float:
        return abs(self.field) ** 2

    def mode_densities(self) -> np.ndarray:
        """Photon density of every mode, injected one included."""
        s = self.photon.copy()
        s[self.inj_slot] = self.injected_intensity
        return s

    def check(self):
        v = self.to_vector()
        if not np.all(np.isfinite(v)):
            raise NumericalDomainError("state contains non-finite values")
        if self.carrier < 0 or np.any(self.photon < 0):
            raise NumericalDomainError("state has negative densities")


def _component_name(params: LaserParams, idx: int) -> str:
    m = params.mode_count
    if idx == 0:
        return "carrier density N"
    if 1 <= idx <= m:
        return f"photon density S[m={params.mode_numbers[idx - 1]}]"
    return "injected field Re(E)" if idx == m + 1 else "injected field Im(E)"


def _raise_status(params, status, comp, when):
    what = _component_name(params, comp)
    if status == K.NON_FINITE:
        raise IntegrationBlowupError(f"non-finite value in {what} at t={when:.4g} s", what, when)
    raise IntegrationBlowupError(f"large negative excursion in {what} at t={when:.4g} s",
                                 what, when)


def derivatives(state: LaserState, params: LaserParams, inj: InjectionSpec,
                t: float, bias: float = 0.0) -> LaserState:
    """Time derivative of ``state`` (returned as a LaserState of rates)."""
    y = state.to_vector()
    if not np.all(np.isfinite(y)) or not math.isfinite(t):
        raise NumericalDomainError("non-finite state passed to derivatives")
    slot = params.mode_slot(inj.mode_index)
    p_mw = inj.drive.power_at(t) if inj.drive is not None else 0.0
    out = np.empty_like(y)
    K.rhs(y, params.kernel_vector(), params.gain_shape, slot, params.bias_rate(bias),
          inj.detuning, params.drive_amplitude_scale * math.sqrt(p_mw), out)
    return LaserState.from_vector(out, t, slot)


def step(state: LaserState, params: LaserParams, inj: InjectionSpec, dt: float,
         bias: float = 0.0, dt_max: float = DT_MAX) -> LaserState:
    """Advance ``state`` by one RK4 step of length ``dt``."""
    if not (dt > 0) or dt > dt_max * (1 + 1e-12):
        raise NumericalDomainError(f"step size must satisfy 0 < dt <= {dt_max}, got {dt}")
    y = state.to_vector()
    if not np.all(np.isfinite(y)):
        raise NumericalDomainError("non-finite state passed to step")
    slot = params.mode_slot(inj.mode_index)
    scale = params.drive_amplitude_scale
    if inj.drive is None:
        a0 = ah = a1 = 0.0
    else:
        a0, ah, a1 = (scale * math.sqrt(inj.drive.power_at(state.t + f * dt))
                      for f in (0.0, 0.5, 1.0))
    n = y.size
    bufs = [np.empty(n) for _ in range(6)]
    comp, status = K.rk4_step(y, params.kernel_vector(), params.gain_shape, slot,
                              params.bias_rate(bias), inj.detuning, a0, ah, a1, dt, *bufs)
    if status != K.OK:
        _raise_status(params, status, comp, state.t + dt)
    return LaserState.from_vector(bufs[5], state.t + dt, slot)


@functools.lru_cache(maxsize=256)
def _relax_cached(params: LaserParams, bias: float, dt: float, max_time: float,
                  window: float, rtol: float):
    m = params.mode_count
    y = np.zeros(m + 3)
    p = params.kernel_vector()
    shape = params.gain_shape
    rate = params.bias_rate(bias)
    n_win = int(round(window / dt))
    t = 0.0
    while t < max_time:
        y_new, status, comp, i = K.run_constant(y, p, shape, -1, rate, 0.0, 0.0, dt, n_win)
        if status != K.OK:
            _raise_status(params, status, comp, t + i * dt)
        t += n_win * dt
        diff = np.abs(y_new - y)
        ref = np.abs(y)
        change = np.where(diff == 0, 0.0, diff / np.where(ref > 0, ref, 1.0))
        change[(ref == 0) & (diff > 0)] = np.inf
        y = y_new
        if np.all(change[: m + 1] < rtol):
            return y, t
    raise ConvergenceError(f"no steady state within {max_time / NS:.0f} ns at bias {bias} mA")


def relax_to_steady_state(params: LaserParams, bias: float, inj_mode: int = -9,
                          dt: float = DT_MAX, max_time: float = 200 * NS,
                          window: float = 1 * NS, rtol: float = 1e-8) -> LaserState:
    """Free-running steady state reached from a cold start (N = S = 0).

    The mode ``inj_mode`` is returned in field form with real amplitude
    ``sqrt(S)`` so the state can seed an injection run directly.
    """
    if not (bias >= 0 and math.isfinite(bias)):
        raise ParameterError(f"bias current must be >= 0, got {bias}")
    y, t = _relax_cached(params, float(bias), dt, max_time, window, rtol)
    slot = params.mode_slot(inj_mode)
    s = y[1:-2].copy()
    field_amp = math.sqrt(s[slot])
    s[slot] = 0.0
    return LaserState(float(y[0]), s, complex(field_amp, 0.0), t, slot)


def mode_powers(state: LaserState, params: LaserParams) -> np.ndarray:
    """Emitted power (mW) per cavity mode."""
    return params.output_coupling * state.mode_densities()


def li_curve(params: LaserParams, currents) -> tuple[np.ndarray, np.ndarray]:
    """Dominant-mode (m = 0) output power (mW) at each bias current (mA)."""
    currents = np.asarray(currents, dtype=float)
    slot0 = params.mode_slot(0)
    out = np.empty(currents.size)
    for i, c in enumerate(currents):
        st = relax_to_steady_state(params, float(c))
        out[i] = mode_powers(st, params)[slot0]
    return currents, out


def analytic_threshold_estimate(params: LaserParams) -> float:
    """Threshold current (mA) ignoring spontaneous emission and compression."""
    n = params.threshold_density
    r = params.recomb_a * n + params.recomb_b * n ** 2 + params.recomb_c * n ** 3
    return r * constants.e * params.active_volume * 1e3


def compute_threshold_current(params: LaserParams, step_ma: float | None = None,
                              span: float = 2.0) -> float:
    """Threshold current (mA) from the zero-power intercept of the linear
    above-threshold branch of the dominant-mode L-I curve."""
    guess = analytic_threshold_estimate(params)
    if not math.isfinite(guess) or guess <= 0:
        raise ParameterError("cannot estimate a threshold for this parameter set")
    step_ma = step_ma or guess / 40.0
    currents = np.arange(0.0, span * guess + step_ma / 2, step_ma)
    cur, power = li_curve(params, currents)
    floor = power[0] if power[0] > 0 else 1e-12
    if power.max() < 100 * floor or power.max() <= 0:
        raise ParameterError("L-I curve never rises above the spontaneous floor")
    # linear branch: points above 1.25x the analytic estimate
    sel = cur >= 1.25 * guess
    if sel.sum() < 3:
        sel = power > 0.5 * power.max()
    slope, intercept = np.polyfit(cur[sel], power[sel], 1)
    if slope <= 0:
        raise ParameterError("L-I curve has no positive slope above threshold")
    return float(-intercept / slope)


def _pulse_initial(params: LaserParams, bias: float, inj: InjectionSpec):
    st = relax_to_steady_state(params, bias, inj.mode_index)
    return st.to_vector()


def simulate_pulse_responses(params: LaserParams, bias: float, mode_index: int,
                             detunings, drives, tail: float = 200 * PS,
                             dt_max: float = DT_MAX) -> list[Waveform]:
    """Batched :func:`simulate_pulse_response` for drives sharing one grid."""
    drives = list(drives)
    if not drives:
        return []
    ref = drives[0]
    for d in drives[1:]:
        if not d.same_grid(ref):
            raise NumericalDomainError("batched drives must share one time grid")
    det = np.broadcast_to(np.asarray(detunings, dtype=float), (len(drives),)).copy()
    n_sub = max(1, math.ceil(ref.dt / dt_max - 1e-9))
    n_tail = int(round(tail / ref.dt))
    n_out = len(ref) + n_tail
    y0 = _pulse_initial(params, bias, InjectionSpec(mode_index))
    powers = np.stack([d.samples for d in drives])
    recs, status, comps, where = K.run_driven_batch(
        y0, params.kernel_vector(), params.gain_shape, params.mode_slot(mode_index),
        params.bias_rate(bias), det, powers, params.drive_amplitude_scale,
        n_out, n_sub, ref.dt)
    bad = np.nonzero(status != K.OK)[0]
    if bad.size:
        i = bad[0]
        _raise_status(params, status[i], comps[i], ref.t0 + where[i] * ref.dt)
    return [Waveform(ref.t0, ref.dt, params.output_coupling * r) for r in recs]


def simulate_pulse_response(params: LaserParams, bias: float, inj: InjectionSpec,
                            tail: float = 200 * PS, dt_max: float = DT_MAX) -> Waveform:
    """Output power at the injection wavelength (the band-pass-filtered
    emission, ``kappa_out |E|^2``) for the drive in ``inj``.

    Starts from the free-running steady state; the returned waveform uses
    the drive's grid, extended by ``tail``.
    """
    if inj.drive is None:
        raise NumericalDomainError("pulse response needs a drive waveform")
    return simulate_pulse_responses(params, bias, inj.mode_index, [inj.detuning],
                                    [inj.drive], tail=tail, dt_max=dt_max)[0]


@dataclass
class HysteresisResult:
    up: "object"
    down: "object"
    detuning: float
    bias: float


def _settle(y, p, shape, slot, rate, det, amp, dt, window_steps, max_windows, rtol):
    """Hold a constant drive until |E|^2 and N change by < rtol per window."""
    m = shape.shape[0]
    for w in range(max_windows):
        y_new, status, comp, _ = K.run_constant(y, p, shape, slot, rate, det, amp, dt,
                                                window_steps)
        if status != K.OK:
            return y_new, status, comp, False
        e_old = y[m + 1] ** 2 + y[m + 2] ** 2
        e_new = y_new[m + 1] ** 2 + y_new[m + 2] ** 2
        d_e = abs(e_new - e_old) / max(e_old, 1e-300)
        d_n = abs(y_new[0] - y[0]) / max(y[0], 1e-300)
        y = y_new
        if d_e < rtol and d_n < rtol:
            return y, K.OK, -1, True
    return y, K.OK, -1, False


def stationary_hysteresis_sweep(params: LaserParams, bias: float, mode_index: int,
                                detuning: float, p_max: float, n_steps: int,
                                dt: float = DT_MAX, window: float = 0.5 * NS,
                                max_hold: float = 40 * NS, rtol: float = 1e-6):
    """Adiabatic CW sweep 0 -> p_max -> 0; returns (up, down) transfer curves.

    Each step is held until the injected-mode power and carrier density
    settle (relative change < ``rtol`` over one ``window``).
    """
    from .xfer import TransferCurve

    if detuning == 0:
        raise ParameterError("detuning must be non-zero")
    if n_steps < 10:
        raise ParameterError("n_steps must be >= 10")
    if p_max < 0:
        raise ParameterError("p_max must be >= 0")
    grid = np.linspace(0.0, p_max, n_steps)
    y = _pulse_initial(params, bias, InjectionSpec(mode_index))
    p = params.kernel_vector()
    shape = params.gain_shape
    slot = params.mode_slot(mode_index)
    rate = params.bias_rate(bias)
    window_steps = int(round(window / dt))
    max_windows = max(1, int(round(max_hold / window)))
    m = params.mode_count
    outputs = []
    order = list(range(n_steps)) + list(range(n_steps - 1, -1, -1))
    for k, gi in enumerate(order):
        amp = params.drive_amplitude_scale * math.sqrt(grid[gi])
        y, status, comp, ok = _settle(y, p, shape, slot, rate, detuning, amp, dt,
                                      window_steps, max_windows, rtol)
        if status != K.OK:
            _raise_status(params, status, comp, float("nan"))
        if not ok:
            raise ConvergenceError(
                f"CW drive {grid[gi]:.4g} mW did not settle (sweep step {k})", step_index=k)
        outputs.append(params.output_coupling * (y[m + 1] ** 2 + y[m + 2] ** 2))
    up = np.array(outputs[:n_steps])
    down = np.array(outputs[n_steps:][::-1])
    meta = dict(detuning=detuning, pulse_fwhm=math.inf, bias=bias, mode_index=mode_index,
                params_hash=params.content_hash())
    return (TransferCurve(points=np.column_stack([grid, up]), **meta),
            TransferCurve(points=np.column_stack([grid, down]), **meta))


def switching_powers(up, down, jump_ratio: float = 2.0) -> tuple[float, float]:
    """Input powers at the largest output jump of each branch (NaN if none
    exceeds ``jump_ratio``).

    The step away from zero drive is ignored: the output there rises from
    the side-mode floor by orders of magnitude without any switching.  On
    the up branch the power after the jump is returned, on the down branch
    the power before the drop.
    """
    def jump(curve, after):
        pin, pout = curve.p_in, curve.p_out
        if pin.size < 3:
            return math.nan
        lr = np.abs(np.log((pout[2:] + 1e-12) / (pout[1:-1] + 1e-12)))
        i = int(np.argmax(lr))
        if lr[i] <= math.log(jump_ratio):
            return math.nan
        return float(pin[i + 2] if after else pin[i + 1])
    return jump(up, True), jump(down, False)


def loop_area(up, down) -> float:
    """Area (mW^2) enclosed between the up and down branches."""
    gap = np.abs(up.p_out - down.p_out)
    return float(np.sum(0.5 * (gap[1:] + gap[:-1]) * np.diff(up.p_in)))


def write_li_csv(path, currents, powers, params: LaserParams, i_th: float | None = None):
    with open(path, "w", newline="") as fh:
        fh.write(f"# params_hash: {params.content_hash()}\n")
        if i_th is not None:
            fh.write(f"# threshold_current_mA: {float(i_th)!r}\n")
        w = csv.writer(fh)
        w.writerow(["bias_mA", "dominant_mode_power_mW"])
        for c, p in zip(currents, powers):
            w.writerow([repr(float(c)), repr(float(p))])


def pulse_stream_peaks(params: LaserParams, bias: float, mode_index: int, detuning: float,
                       peaks, fwhm: float, period: float, dt: float = DT_MAX) -> np.ndarray:
    """Output peak of every pulse in one continuous stream of Gaussian pulses.

    Pulse ``k`` has peak power ``peaks[k]`` (mW) and is centred at
    ``(k + 1/2) * period``; the laser state carries over between pulses.
    """
    peaks = np.asarray(peaks, dtype=float)
    if peaks.ndim != 1 or peaks.size == 0 or np.any(peaks < 0):
        raise NumericalDomainError("peaks must be a non-empty list of powers >= 0")
    n_per = int(round(period / dt))
    if n_per < 2:
        raise NumericalDomainError("period shorter than two samples")
    t = dt * np.arange(n_per)
    sigma = fwhm / (2.0 * math.sqrt(2.0 * math.log(2.0)))
    shape = np.exp(-0.5 * ((t - 0.5 * period) / sigma) ** 2)
    drive = Waveform(0.0, dt, (peaks[:, None] * shape[None, :]).ravel())
    out = simulate_pulse_response(params, bias, InjectionSpec(mode_index, detuning, drive),
                                  tail=0.0, dt_max=dt)
    return out.samples[: drive.samples.size].reshape(peaks.size, n_per).max(axis=1)


def simulate_trajectory(params: LaserParams, bias: float, inj: InjectionSpec,
                        tail: float = 200 * PS, dt_max: float = DT_MAX):
    """Full state at every drive sample: returns (times, states (n, M + 3))."""
    if inj.drive is None:
        raise NumericalDomainError("trajectory needs a drive waveform")
    d = inj.drive
    n_sub = max(1, math.ceil(d.dt / dt_max - 1e-9))
    n_out = len(d) + int(round(tail / d.dt))
    y0 = _pulse_initial(params, bias, inj)
    trace, status, comp, k = K.run_driven_trace(
        y0, params.kernel_vector(), params.gain_shape, params.mode_slot(inj.mode_index),
        params.bias_rate(bias), inj.detuning, d.samples, params.drive_amplitude_scale,
        n_out, n_sub, d.dt)
    if status != K.OK:
        _raise_status(params, status, comp, d.t0 + k * d.dt)
    return d.t0 + d.dt * np.arange(n_out), trace
