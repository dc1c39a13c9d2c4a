"""Compiled right-hand side and fixed-step RK4 loops for the rate equations.

State layout (length M + 3)::

    y[0]        carrier density N
    y[1 + j]    photon density of cavity mode j (j = 0..M-1); the slot of the
                injected mode is unused and kept at zero while it is
                represented by its field
    y[M + 1]    real part of the injected-mode field
    y[M + 2]    imaginary part of the injected-mode field

Parameter vector layout is defined by ``laser.LaserParams.kernel_vector``.
Errors are reported through integer status codes because exceptions raised
inside nopython code cannot carry the offending component.
"""

import numpy as np
from numba import njit

P_GAMMA = 0
P_VG = 1
P_A = 2
P_NTR = 3
P_EPS = 4
P_INV_TAU_P = 5
P_RA = 6
P_RB = 7
P_RC = 8
P_BETA = 9
P_ALPHA = 10
P_KC = 11
P_SEED_FLOOR = 12

OK = 0
NON_FINITE = 1
NEGATIVE = 2

NEG_TOL = 1e-6


@njit(cache=True)
def rhs(y, p, shape, inj, bias_rate, detuning, amp, out):
    """Evaluate dy/dt into ``out``.

    ``inj < 0`` selects free-running operation: every mode is a photon
    density and the field slots get zero derivative.  ``amp`` is the
    injected drive amplitude k_c * sqrt(S_inj).
    """
    m = shape.shape[0]
    n = y[0]
    er = y[m + 1]
    ei = y[m + 2]
    e2 = er * er + ei * ei
    s_tot = 0.0
    for j in range(m):
        if j != inj:
            s_tot += y[1 + j]
    if inj >= 0:
        s_tot += e2
    gn = p[P_A] * (n - p[P_NTR]) / (1.0 + p[P_EPS] * s_tot)
    r_sp = p[P_GAMMA] * p[P_BETA] * p[P_RB] * n * n
    stim = 0.0
    for j in range(m):
        gm = gn * shape[j]
        if j == inj:
            stim += p[P_VG] * gm * e2
            out[1 + j] = 0.0
        else:
            s = y[1 + j]
            out[1 + j] = (p[P_GAMMA] * p[P_VG] * gm - p[P_INV_TAU_P]) * s + r_sp
            stim += p[P_VG] * gm * s
    out[0] = bias_rate - (p[P_RA] * n + p[P_RB] * n * n + p[P_RC] * n * n * n) - stim
    if inj >= 0:
        half_net = 0.5 * (p[P_GAMMA] * p[P_VG] * gn * shape[inj] - p[P_INV_TAU_P])
        seed = 0.5 * r_sp / max(e2, p[P_SEED_FLOOR])
        alpha = p[P_ALPHA]
        out[m + 1] = half_net * (er - alpha * ei) + detuning * ei + amp + seed * er
        out[m + 2] = half_net * (ei + alpha * er) - detuning * er + seed * ei
    else:
        out[m + 1] = 0.0
        out[m + 2] = 0.0


@njit(cache=True)
def _clamp(y_new, y_old, n_dens):
    """Clamp tiny negative densities; return offending index or -1."""
    for j in range(y_new.shape[0]):
        v = y_new[j]
        if not np.isfinite(v):
            return j, NON_FINITE
    for j in range(n_dens):
        v = y_new[j]
        if v < 0.0:
            ref = abs(y_old[j])
            if -v <= NEG_TOL * ref or ref == 0.0 and -v < 1e-300:
                y_new[j] = 0.0
            else:
                return j, NEGATIVE
    return -1, OK


@njit(cache=True)
def rk4_step(y, p, shape, inj, bias_rate, detuning, amp0, amph, amp1, dt,
             k1, k2, k3, k4, tmp, y_out):
    n = y.shape[0]
    rhs(y, p, shape, inj, bias_rate, detuning, amp0, k1)
    for j in range(n):
        tmp[j] = y[j] + 0.5 * dt * k1[j]
    rhs(tmp, p, shape, inj, bias_rate, detuning, amph, k2)
    for j in range(n):
        tmp[j] = y[j] + 0.5 * dt * k2[j]
    rhs(tmp, p, shape, inj, bias_rate, detuning, amph, k3)
    for j in range(n):
        tmp[j] = y[j] + dt * k3[j]
    rhs(tmp, p, shape, inj, bias_rate, detuning, amp1, k4)
    for j in range(n):
        y_out[j] = y[j] + dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])
    return _clamp(y_out, y, shape.shape[0] + 1)


@njit(cache=True)
def run_constant(y0, p, shape, inj, bias_rate, detuning, amp, dt, n_steps):
    """Integrate ``n_steps`` with a constant drive amplitude.

    Returns (final state, status, component, failed step).
    """
    n = y0.shape[0]
    y = y0.copy()
    y_new = np.empty(n)
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    tmp = np.empty(n)
    for i in range(n_steps):
        comp, status = rk4_step(y, p, shape, inj, bias_rate, detuning, amp, amp, amp,
                                dt, k1, k2, k3, k4, tmp, y_new)
        if status != OK:
            return y_new, status, comp, i
        y, y_new = y_new, y
    return y, OK, -1, n_steps


@njit(cache=True)
def _sample(power, k):
    if k < 0 or k >= power.shape[0]:
        return 0.0
    return power[k]


@njit(cache=True)
def _interp(power, k, u):
    """Cubic Lagrange interpolation of sampled power at index k + u."""
    if u == 0.0:
        return _sample(power, k)
    fm = _sample(power, k - 1)
    f0 = _sample(power, k)
    f1 = _sample(power, k + 1)
    f2 = _sample(power, k + 2)
    v = (-u * (u - 1.0) * (u - 2.0) / 6.0 * fm
         + (u + 1.0) * (u - 1.0) * (u - 2.0) / 2.0 * f0
         - (u + 1.0) * u * (u - 2.0) / 2.0 * f1
         + (u + 1.0) * u * (u - 1.0) / 6.0 * f2)
    return v if v > 0.0 else 0.0


@njit(cache=True)
def run_driven(y0, p, shape, inj, bias_rate, detuning, power, amp_scale,
               n_out, n_sub, dt_sample):
    """Integrate under a sampled drive, recording |E|^2 at every sample.

    ``power`` holds drive power samples (mW) on a grid of spacing
    ``dt_sample``; samples beyond its end are zero.  The drive amplitude is
    ``amp_scale * sqrt(power)``.  Output has ``n_out`` samples (>= len(power)
    allows a drive-free tail).  Returns (|E|^2 record, final state, status,
    component, sample index).
    """
    n = y0.shape[0]
    m = shape.shape[0]
    y = y0.copy()
    y_new = np.empty(n)
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    tmp = np.empty(n)
    rec = np.empty(n_out)
    h = dt_sample / n_sub
    rec[0] = y[m + 1] ** 2 + y[m + 2] ** 2
    for k in range(n_out - 1):
        for s in range(n_sub):
            u0 = s / n_sub
            uh = (s + 0.5) / n_sub
            u1 = (s + 1.0) / n_sub
            a0 = amp_scale * np.sqrt(_interp(power, k, u0))
            ah = amp_scale * np.sqrt(_interp(power, k, uh))
            if s + 1 == n_sub:
                a1 = amp_scale * np.sqrt(_sample(power, k + 1))
            else:
                a1 = amp_scale * np.sqrt(_interp(power, k, u1))
            comp, status = rk4_step(y, p, shape, inj, bias_rate, detuning, a0, ah, a1,
                                    h, k1, k2, k3, k4, tmp, y_new)
            if status != OK:
                return rec, y_new, status, comp, k
            y, y_new = y_new, y
        rec[k + 1] = y[m + 1] ** 2 + y[m + 2] ** 2
    return rec, y, OK, -1, n_out - 1


@njit(cache=True)
def run_driven_batch(y0, p, shape, inj, bias_rate, detunings, powers, amp_scale,
                     n_out, n_sub, dt_sample):
    """Independent drives (rows of ``powers``) from the same initial state."""
    b = powers.shape[0]
    recs = np.empty((b, n_out))
    statuses = np.zeros(b, dtype=np.int64)
    comps = np.full(b, -1, dtype=np.int64)
    where = np.zeros(b, dtype=np.int64)
    for i in range(b):
        rec, _, status, comp, k = run_driven(y0, p, shape, inj, bias_rate, detunings[i],
                                             powers[i], amp_scale, n_out, n_sub, dt_sample)
        recs[i] = rec
        statuses[i] = status
        comps[i] = comp
        where[i] = k
    return recs, statuses, comps, where


@njit(cache=True)
def run_driven_trace(y0, p, shape, inj, bias_rate, detuning, power, amp_scale,
                     n_out, n_sub, dt_sample):
    """Like :func:`run_driven` but records the full state at every sample."""
    n = y0.shape[0]
    y = y0.copy()
    y_new = np.empty(n)
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    tmp = np.empty(n)
    trace = np.empty((n_out, n))
    h = dt_sample / n_sub
    trace[0] = y
    for k in range(n_out - 1):
        for s in range(n_sub):
            a0 = amp_scale * np.sqrt(_interp(power, k, s / n_sub))
            ah = amp_scale * np.sqrt(_interp(power, k, (s + 0.5) / n_sub))
            if s + 1 == n_sub:
                a1 = amp_scale * np.sqrt(_sample(power, k + 1))
            else:
                a1 = amp_scale * np.sqrt(_interp(power, k, (s + 1.0) / n_sub))
            comp, status = rk4_step(y, p, shape, inj, bias_rate, detuning, a0, ah, a1,
                                    h, k1, k2, k3, k4, tmp, y_new)
            if status != OK:
                return trace[: k + 1], status, comp, k
            y, y_new = y_new, y
        trace[k + 1] = y
    return trace, OK, -1, n_out - 1
