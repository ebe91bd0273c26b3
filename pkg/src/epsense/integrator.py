"""Compiled Dormand-Prince 5(4) stepper for the mean-field equations.

The state vector is ``[alpha_0, ..., alpha_{C-1}, beta_0, ..., beta_{N-1}]``.
Cavity ``c`` couples to resonator ``sites[c]``; resonators form an open
chain with nearest-neighbour coupling ``J``.
"""

from __future__ import annotations

import numba
import numpy as np

STATUS_OK = 0
STATUS_DIVERGED = 1
STATUS_NONFINITE = 2
STATUS_STEP_UNDERFLOW = 3

# Dormand-Prince 5(4) tableau.
_C2, _C3, _C4, _C5 = 1 / 5, 3 / 10, 4 / 5, 8 / 9
_A21 = 1 / 5
_A31, _A32 = 3 / 40, 9 / 40
_A41, _A42, _A43 = 44 / 45, -56 / 15, 32 / 9
_A51, _A52, _A53, _A54 = 19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729
_A61, _A62, _A63, _A64, _A65 = 9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656
_B1, _B3, _B4, _B5, _B6 = 35 / 384, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84
_E1, _E3, _E4, _E5, _E6, _E7 = 71 / 57600, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40


@numba.njit(cache=True)
def mean_field_rhs(y, omega, gamma_m, kappa, g, J, delta, alpha_in, mu_m, sites):
    n_cav = delta.shape[0]
    n_res = omega.shape[0]
    dy = np.empty_like(y)
    drive = np.sqrt(kappa) * alpha_in
    for c in range(n_cav):
        b = y[n_cav + sites[c]]
        a = y[c]
        dy[c] = (1j * (delta[c] + 2.0 * g * b.real) - 0.5 * kappa) * a + drive
    for j in range(n_res):
        b = y[n_cav + j]
        acc = -(1j * omega[j] + 0.5 * gamma_m) * b
        if j > 0:
            acc += 1j * J * y[n_cav + j - 1]
        if j < n_res - 1:
            acc += 1j * J * y[n_cav + j + 1]
        if mu_m != 0.0:
            d = b - np.conj(b)
            acc += (1j / 3.0) * mu_m * omega[j] ** 2 * d * d * d
        dy[n_cav + j] = acc
    for c in range(n_cav):
        a = y[c]
        dy[n_cav + sites[c]] += 1j * g * (a.real * a.real + a.imag * a.imag)
    return dy


@numba.njit(cache=True)
def dopri54(
    y0, t_end, sample_dt, record_start, rtol, atol, h_fixed, guard,
    omega, gamma_m, kappa, g, J, delta, alpha_in, mu_m, sites,
):
    """Integrate from t=0 to ``t_end`` and sample on the grid k*sample_dt >= record_start.

    ``h_fixed > 0`` switches off step-size control (used for self-convergence
    studies).  Returns ``(samples, first_index, n_filled, n_accepted,
    n_rejected, status)``.
    """
    k_first = int(np.ceil(record_start / sample_dt - 1e-9))
    k_last = int(np.floor(t_end / sample_dt + 1e-9))
    n_samples = k_last - k_first + 1
    out = np.empty((n_samples, y0.shape[0]), np.complex128)
    n_dim = y0.shape[0]

    y = y0.copy()
    t = 0.0
    k = k_first
    filled = 0
    if k == 0:
        out[0] = y
        filled = 1
        k = 1
    adaptive = h_fixed <= 0.0
    h_prop = h_fixed if not adaptive else min(0.01, sample_dt)
    n_acc = 0
    n_rej = 0
    args = (omega, gamma_m, kappa, g, J, delta, alpha_in, mu_m, sites)
    k1 = mean_field_rhs(y, *args)
    while k <= k_last:
        t_target = k * sample_dt
        h = h_prop
        clipped = False
        if t + h >= t_target - 1e-12 * max(1.0, t_target):
            h = t_target - t
            clipped = True
        if h < 1e-12:
            return out, k_first, filled, n_acc, n_rej, STATUS_STEP_UNDERFLOW
        k2 = mean_field_rhs(y + h * _A21 * k1, *args)
        k3 = mean_field_rhs(y + h * (_A31 * k1 + _A32 * k2), *args)
        k4 = mean_field_rhs(y + h * (_A41 * k1 + _A42 * k2 + _A43 * k3), *args)
        k5 = mean_field_rhs(y + h * (_A51 * k1 + _A52 * k2 + _A53 * k3 + _A54 * k4), *args)
        k6 = mean_field_rhs(y + h * (_A61 * k1 + _A62 * k2 + _A63 * k3 + _A64 * k4 + _A65 * k5), *args)
        y_new = y + h * (_B1 * k1 + _B3 * k3 + _B4 * k4 + _B5 * k5 + _B6 * k6)
        k7 = mean_field_rhs(y_new, *args)

        err_norm = 0.0
        if adaptive:
            err = h * (_E1 * k1 + _E3 * k3 + _E4 * k4 + _E5 * k5 + _E6 * k6 + _E7 * k7)
            for i in range(n_dim):
                scale = atol + rtol * max(abs(y[i]), abs(y_new[i]))
                err_norm += (abs(err[i]) / scale) ** 2
            err_norm = np.sqrt(err_norm / n_dim)
            if not np.isfinite(err_norm):
                err_norm = 1e10

        if err_norm <= 1.0:
            n_acc += 1
            y = y_new
            k1 = k7
            t = t_target if clipped else t + h
            big = 0.0
            for i in range(n_dim):
                v = abs(y[i])
                if not np.isfinite(v):
                    return out, k_first, filled, n_acc, n_rej, STATUS_NONFINITE
                if v > big:
                    big = v
            if big > guard:
                return out, k_first, filled, n_acc, n_rej, STATUS_DIVERGED
            if clipped:
                out[filled] = y
                filled += 1
                k += 1
            if adaptive:
                fac = 5.0 if err_norm == 0.0 else min(5.0, max(0.2, 0.9 * err_norm ** -0.2))
                if clipped:
                    h_prop = max(h_prop, h * fac)
                else:
                    h_prop = h * fac
        else:
            n_rej += 1
            h_prop = h * max(0.2, 0.9 * err_norm ** -0.2)
    return out, k_first, filled, n_acc, n_rej, STATUS_OK
