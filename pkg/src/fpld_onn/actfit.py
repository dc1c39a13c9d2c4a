"""Closed-form activation fitted to sampled transfer curves.

The activation is

    P_out = b1 ln{ b2 + b3 ln[ b4 + (exp(b5 P) - 1)^b6 ] } + b7 P

defined on 0 <= P <= P_max.  With b5 > 0 and b6 > 0 the inner argument
``w = b4 + (exp(b5 P) - 1)^b6`` increases with P, so the log arguments are
positive on the whole domain iff they are positive at both ends.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import least_squares

from .errors import (
    ActivationDomainError,
    CoefficientError,
    FitFailureError,
    NumericalDomainError,
    SingularityError,
)

#: Largest allowed b5 * P_max (natural-log overflow guard).
EXP_GUARD = 700.0
#: Residual assigned to every point when a trial step leaves the real domain.
DOMAIN_PENALTY = 1e6
#: Points in the domain scan used by the fitting guard.
SCAN_POINTS = 200
#: Relative RMSE (of max P_out) above which a fit is flagged.
QUALITY_RMSE = 0.02

NAMES = ("b1", "b2", "b3", "b4", "b5", "b6", "b7")


@dataclass
class ActivationCoeffs:
    """Coefficients b1..b7 with their validity domain [0, p_max] (mW)."""

    b: np.ndarray
    p_max: float
    fit_rmse: float = math.nan
    source: str = ""
    detuning: float = math.nan
    pulse_fwhm: float = math.nan
    quality_ok: bool = True
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.b = np.asarray(self.b, dtype=float).reshape(7)
        self.p_max = float(self.p_max)
        check_coefficients(self.b, self.p_max)

    def to_dict(self) -> dict:
        d = {k: float(v) for k, v in zip(NAMES, self.b)}
        d.update(p_max=self.p_max, rmse=self.fit_rmse, source_hash=self.source,
                 detuning=self.detuning, pulse_fwhm=self.pulse_fwhm,
                 quality_ok=bool(self.quality_ok), meta=self.meta)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ActivationCoeffs":
        return cls(np.array([d[k] for k in NAMES], dtype=float), d["p_max"],
                   d.get("rmse", math.nan), d.get("source_hash", ""),
                   d.get("detuning", math.nan), d.get("pulse_fwhm", math.nan),
                   d.get("quality_ok", True), d.get("meta", {}))

    def save(self, path) -> None:
        from .xfer import atomic_write_text
        atomic_write_text(path, json.dumps(self.to_dict(), indent=2, allow_nan=True) + "\n")

    @classmethod
    def load(cls, path) -> "ActivationCoeffs":
        return cls.from_dict(json.loads(Path(path).read_text()))


def identity_coeffs(p_max: float = 150.0) -> ActivationCoeffs:
    """Coefficients reducing the activation to P_out = P_in."""
    return ActivationCoeffs(np.array([0.0, math.e, 1.0, 1.0, 0.1, 1.0, 1.0]), p_max)


def domain_violation(b, p_max: float) -> str | None:
    """Reason the coefficients leave the real domain on [0, p_max], or None."""
    b1, b2, b3, b4, b5, b6, b7 = b
    if not np.all(np.isfinite(b)):
        return "non-finite coefficient"
    if not p_max > 0:
        return f"P_max must be > 0, got {p_max}"
    if not b5 > 0:
        return f"b5 must be > 0, got {b5}"
    if not b6 > 0:
        return f"b6 must be > 0, got {b6}"
    if b5 * p_max > EXP_GUARD:
        return f"b5 * P_max = {b5 * p_max:.4g} exceeds overflow guard {EXP_GUARD}"
    if not b4 > 0:
        return f"b4 + (exp(b5 P) - 1)^b6 <= 0 at P = 0 (b4 = {b4})"
    with np.errstate(over="ignore"):
        w_hi = b4 + np.expm1(b5 * p_max) ** b6
    if not math.isfinite(w_hi):
        return "inner argument overflows at P_max"
    for p, w in ((0.0, b4), (p_max, w_hi)):
        if not b2 + b3 * math.log(w) > 0:
            return f"b2 + b3 ln[...] <= 0 at P = {p}"
    return None


def check_coefficients(b, p_max: float) -> None:
    why = domain_violation(b, p_max)
    if why is not None:
        raise CoefficientError(why)


def _parts(b, p):
    b1, b2, b3, b4, b5, b6, b7 = b
    x = b5 * p
    u = np.expm1(x)
    with np.errstate(divide="ignore"):
        v = np.where(u > 0, np.power(np.where(u > 0, u, 1.0), b6), 0.0)
    w = b4 + v
    lw = np.log(w)
    z = b2 + b3 * lw
    return x, u, v, w, lw, z


def _as_input(c: ActivationCoeffs, p_in):
    p = np.asarray(p_in, dtype=float)
    if not np.all(np.isfinite(p)):
        raise ActivationDomainError("input power must be finite")
    if np.any(p < 0) or np.any(p > c.p_max * (1 + 1e-12)):
        bad = p[(p < 0) | (p > c.p_max * (1 + 1e-12))].flat[0]
        raise ActivationDomainError(f"P_in = {bad} mW outside [0, {c.p_max}] mW")
    return p


def _value(b, p):
    _, _, _, _, _, z = _parts(b, p)
    return b[0] * np.log(z) + b[6] * p


def _slope(b, p):
    """dP_out/dP_in; +inf where b6 < 1 at P = 0."""
    b1, b2, b3, b4, b5, b6, b7 = b
    x, u, v, w, lw, z = _parts(b, p)
    with np.errstate(divide="ignore", invalid="ignore"):
        # d v / dP = b6 b5 v e^x / u, written without overflow
        dv = np.where(u > 0, b6 * b5 * v / -np.expm1(-np.where(x > 0, x, 1.0)), 0.0)
    if b6 == 1.0:
        dv = np.where(u > 0, dv, b5)
    elif b6 < 1.0:
        dv = np.where(u > 0, dv, np.inf)
    return b1 * b3 / (z * w) * dv + b7


def eval_activation(c: ActivationCoeffs, p_in):
    """Activation value (mW) at ``p_in`` (scalar or array, mW)."""
    p = _as_input(c, p_in)
    check_coefficients(c.b, c.p_max)
    out = _value(c.b, p)
    return float(out) if np.ndim(out) == 0 else out


def eval_activation_derivative(c: ActivationCoeffs, p_in):
    """Closed-form dP_out/dP_in at ``p_in``."""
    p = _as_input(c, p_in)
    check_coefficients(c.b, c.p_max)
    if c.b[5] < 1.0 and np.any(p == 0):
        raise SingularityError(f"derivative diverges at P_in = 0 for b6 = {c.b[5]} < 1")
    out = _slope(c.b, p)
    return float(out) if np.ndim(out) == 0 else out


#: Inputs below this (mW) use the derivative at this point in training.
SLOPE_GUARD = 1e-3


def activate(c: ActivationCoeffs, pre: np.ndarray):
    """Saturating activation for network layers.

    Returns (value, slope).  Inputs outside [0, P_max] are clamped to the
    nearest end with zero slope; the slope near 0 is taken at
    ``SLOPE_GUARD`` so that b6 < 1 does not produce an infinite gradient.
    """
    p = np.asarray(pre, dtype=float)
    if not np.all(np.isfinite(p)):
        raise ActivationDomainError("non-finite pre-activation")
    outside = (p > c.p_max) | (p < 0)
    pc = np.clip(p, 0.0, c.p_max)
    val = _value(c.b, pc)
    slope = _slope(c.b, np.maximum(pc, SLOPE_GUARD))
    slope = np.where(outside, 0.0, slope)
    return val, slope


def coefficient_jacobian(b, p):
    """d P_out / d b_k at every point of ``p``; shape (len(p), 7)."""
    b1, b2, b3, b4, b5, b6, b7 = b
    x, u, v, w, lw, z = _parts(b, p)
    g = b1 * b3 / (z * w)
    with np.errstate(divide="ignore", invalid="ignore"):
        safe_x = np.where(x > 0, x, 1.0)
        dv_db5 = np.where(u > 0, b6 * v * p / -np.expm1(-safe_x), 0.0)
        dv_db6 = np.where(u > 0, v * np.log(np.where(u > 0, u, 1.0)), 0.0)
    return np.column_stack([np.log(z), b1 / z, b1 * lw / z, g, g * dv_db5, g * dv_db6, p])


def initial_guess(p_in, p_out, threshold: float | None = None) -> np.ndarray:
    """Heuristic starting coefficients for a sampled curve."""
    p_in = np.asarray(p_in, dtype=float)
    p_out = np.asarray(p_out, dtype=float)
    if threshold is None:
        slope = np.gradient(p_out, p_in)
        threshold = float(p_in[int(np.argmax(slope))])
    span = p_in[-1] - p_in[0]
    threshold = max(threshold, span / 20.0)
    end_slope = (p_out[-1] - p_out[-2]) / (p_in[-1] - p_in[-2])
    b5 = min(4.0 / threshold, 0.5 * EXP_GUARD / p_in[-1])
    return np.array([p_out.max() / 4.0, math.e, 1.0, 1.0, b5, 1.0, end_slope])


#: Lowest slope (mW/mW) tolerated when fitting non-decreasing data.
SLOPE_FLOOR = -1e-3
#: Weight of the monotonicity penalty rows (mW per unit violation).
MONOTONE_WEIGHT = 1e4


def _monotone_rows(b, scan):
    """Penalty on fitted slopes below half of ``SLOPE_FLOOR`` over the scan.

    Aiming at half the floor keeps the soft minimum inside the bound.
    """
    with np.errstate(all="ignore"):
        slope = _slope(b, np.maximum(scan, SLOPE_GUARD))
    short = np.minimum(0.0, slope - SLOPE_FLOOR / 2)
    return MONOTONE_WEIGHT * np.where(np.isfinite(short), short, 0.0)


def _monotone_jac(b, scan):
    rows = _monotone_rows(b, scan)
    j = np.zeros((scan.size, 7))
    if not np.any(rows < 0):
        return j
    for k in range(7):
        h = 1e-7 * max(abs(b[k]), 1e-8)
        bp = b.copy()
        bp[k] += h
        j[:, k] = (_monotone_rows(bp, scan) - rows) / h
    return j


def _residuals(b, p, y, scan, p_max, monotone=False):
    n = p.size + (scan.size if monotone else 0)
    if domain_violation(b, p_max) is not None:
        return np.full(n, DOMAIN_PENALTY)
    with np.errstate(all="ignore"):
        # interior points can still leave the domain if the end checks are
        # fooled by rounding, so scan the domain as well
        zs = _parts(b, scan)[5]
        if not np.all(zs > 0):
            return np.full(n, DOMAIN_PENALTY)
        r = _value(b, p) - y
    if not np.all(np.isfinite(r)):
        return np.full(n, DOMAIN_PENALTY)
    return np.concatenate([r, _monotone_rows(b, scan)]) if monotone else r


def _jac(b, p, y, scan, p_max, monotone=False):
    n = p.size + (scan.size if monotone else 0)
    if domain_violation(b, p_max) is not None:
        return np.zeros((n, 7))
    with np.errstate(all="ignore"):
        j = coefficient_jacobian(b, p)
    j = np.where(np.isfinite(j), j, 0.0)
    if not monotone:
        return j
    return np.vstack([j, _monotone_jac(b, scan)])


def rmse(c: ActivationCoeffs, p_in, p_out) -> float:
    r = _value(c.b, np.asarray(p_in, dtype=float)) - np.asarray(p_out, dtype=float)
    return float(np.sqrt(np.mean(r * r)))


def _lm(b0, p, y, scan, p_max, monotone, max_nfev):
    try:
        res = least_squares(_residuals, b0, jac=_jac, method="lm", x_scale="jac",
                            args=(p, y, scan, p_max, monotone), max_nfev=max_nfev,
                            xtol=1e-15, ftol=1e-15, gtol=1e-15)
    except (ValueError, FloatingPointError):
        return None
    if domain_violation(res.x, p_max) is not None or not np.isfinite(res.cost):
        return None
    return res.x, float(res.cost)


def min_slope(b, scan) -> float:
    with np.errstate(all="ignore"):
        return float(np.min(_slope(b, np.maximum(scan, SLOPE_GUARD))))


def fit_coefficients(curve, restarts: int = 8, seed: int = 0,
                     p_max: float | None = None, max_nfev: int = 4000) -> ActivationCoeffs:
    """Multi-start Levenberg-Marquardt fit to a transfer curve.

    Start 0 is the heuristic guess; the others multiply each coefficient by
    a log-uniform factor in [0.25, 4].  The lowest-RMSE result is returned,
    flagged (``quality_ok = False``) if its RMSE exceeds 2% of max P_out.
    When the data never decrease but the best fit's slope dips below
    ``SLOPE_FLOOR`` somewhere on the domain, every restart is polished again
    with slope-penalty rows and the best fit that respects the floor wins.
    """
    curve.validate(min_points=8)
    if restarts < 1:
        raise NumericalDomainError("restarts must be >= 1")
    p = curve.p_in.astype(float)
    y = curve.p_out.astype(float)
    p_max = float(p[-1] if p_max is None else p_max)
    scan = np.linspace(0.0, p_max, SCAN_POINTS)
    rng = np.random.default_rng(seed)
    base = initial_guess(p, y)
    found = []
    for k in range(restarts):
        b0 = base if k == 0 else base * np.exp(rng.uniform(math.log(0.25), math.log(4.0), 7))
        if domain_violation(b0, p_max) is not None:
            continue
        r = _lm(b0, p, y, scan, p_max, False, max_nfev)
        if r is not None:
            found.append(r)
    if not found:
        raise FitFailureError("every restart left the activation domain", best_residual=math.inf)
    best = min(found, key=lambda r: r[1])[0]
    meta = {}
    if np.all(np.diff(y) >= 0) and min_slope(best, scan) < SLOPE_FLOOR:
        polished = [_lm(x, p, y, scan, p_max, True, max_nfev) for x, _ in found]
        ok = [x for x, _ in filter(None, polished) if min_slope(x, scan) >= SLOPE_FLOOR]
        if ok:
            best = min(ok, key=lambda x: float(np.sum((_value(x, p) - y) ** 2)))
            meta["slope_polish"] = True
        else:
            meta["slope_polish"] = False
            warnings.warn("no fit keeps the slope above the floor on monotone data",
                          RuntimeWarning, stacklevel=2)
    c = ActivationCoeffs(best, p_max, source=curve.content_hash(),
                         detuning=curve.detuning, pulse_fwhm=curve.pulse_fwhm, meta=meta)
    c.fit_rmse = rmse(c, p, y)
    if not math.isfinite(c.fit_rmse):
        raise FitFailureError("fit produced a non-finite residual", best_residual=c.fit_rmse)
    c.quality_ok = bool(c.fit_rmse <= QUALITY_RMSE * y.max())
    if not c.quality_ok:
        warnings.warn(f"activation fit RMSE {c.fit_rmse:.4g} mW exceeds "
                      f"{QUALITY_RMSE:.0%} of max P_out {y.max():.4g} mW", RuntimeWarning,
                      stacklevel=2)
    return c


def coeff_filename(detuning: float, fwhm_ps: float) -> str:
    from .laser import OMEGA
    return f"coeffs_dw{detuning / OMEGA:+.4g}_fwhm{fwhm_ps:g}.json"


def load_coeff_set(directory, detuning: float, fwhm_ps: float) -> ActivationCoeffs:
    from .errors import DependencyError
    from .laser import OMEGA
    path = Path(directory) / coeff_filename(detuning, fwhm_ps)
    if not path.exists():
        raise DependencyError(
            f"no fitted activation for detuning {detuning / OMEGA:g} Omega, FWHM {fwhm_ps:g} ps "
            f"(expected {path})")
    return ActivationCoeffs.load(path)
