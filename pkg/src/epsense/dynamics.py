"""Mean-field time evolution and limit-cycle extraction.

Binary and ternary systems share one right-hand side: each driven cavity
``alpha_c`` follows

    d alpha/dt = [i(Delta + g(beta + beta*)) - kappa/2] alpha + sqrt(kappa) alpha_in

and each resonator

    d beta_j/dt = -(i omega_j + gamma_m/2) beta_j + iJ (chain neighbours)
                  + i g |alpha|^2 (if driven) + (i/3) mu_m omega_j^2 (beta_j - beta_j*)^3.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import integrator as _rk
from .bessel import bessel_j_range
from .errors import Divergence, FrequencyUnlocked, NoLimitCycle, NonFiniteState, NumericalError, ParameterError
from .model import BINARY, TERNARY, SystemParams, ValidatedParams, unwrap

DEFAULT_BETA0 = 0.1 + 0j
DEFAULT_GUARD = 1e8
DEFAULT_RTOL = 1e-9
DEFAULT_ATOL = 1e-12
DEFAULT_SAMPLE_DT = 0.5
TRANSIENT_PERIODS = 2000


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    alpha: np.ndarray  # (n_samples, n_cavities)
    beta: np.ndarray  # (n_samples, n_resonators)
    params: SystemParams
    n_accepted: int = 0
    n_rejected: int = 0

    @property
    def sample_dt(self) -> float:
        return float(self.times[1] - self.times[0])

    def __len__(self) -> int:
        return len(self.times)

    def columns(self) -> tuple[list[str], np.ndarray]:
        """Header and real-valued column matrix (time, Re/Im of every mode)."""
        names = ["t"]
        cols = [self.times]
        for label, arr in (("alpha", self.alpha), ("beta", self.beta)):
            for j in range(arr.shape[1]):
                names += [f"re_{label}{j + 1}", f"im_{label}{j + 1}"]
                cols += [arr[:, j].real, arr[:, j].imag]
        return names, np.column_stack(cols)

    def write(self, path: str | Path, stride: int = 1) -> None:
        names, data = self.columns()
        np.savetxt(path, data[::stride], delimiter=",", header=",".join(names), comments="", fmt="%.16e")


def default_initial_state(params: SystemParams, beta0: complex = DEFAULT_BETA0) -> np.ndarray:
    p = unwrap(params)
    y0 = np.zeros(len(p.delta) + p.n_resonators, dtype=np.complex128)
    y0[len(p.delta):] = beta0
    return y0


def transient_cutoff(t_end: float, omega_m: float = 1.0) -> float:
    """Default recording start: min(half the run, 2000 mechanical periods)."""
    return min(0.5 * t_end, TRANSIENT_PERIODS * 2.0 * math.pi / omega_m)


def integrate(
    params: SystemParams | ValidatedParams,
    init=None,
    t_end: float = 2.0e5,
    *,
    sample_dt: float = DEFAULT_SAMPLE_DT,
    rtol: float = DEFAULT_RTOL,
    atol: float = DEFAULT_ATOL,
    h_fixed: float | None = None,
    record_start: float = 0.0,
    guard: float = DEFAULT_GUARD,
) -> Trajectory:
    """Integrate the mean-field equations from t=0 to ``t_end``.

    ``init`` is the full complex state ``[alpha..., beta...]``; by default all
    cavities start empty and every resonator at ``beta = 0.1``.  Samples are
    stored every ``sample_dt`` from ``record_start`` on.  Passing ``h_fixed``
    disables step-size control.
    """
    p = unwrap(params)
    if not t_end > 0:
        raise ParameterError("t_end must be positive")
    if not 0 <= record_start <= t_end:
        raise ParameterError("record_start must lie in [0, t_end]")
    y0 = default_initial_state(p) if init is None else np.asarray(init, dtype=np.complex128).copy()
    if y0.shape != (len(p.delta) + p.n_resonators,):
        raise ParameterError(f"initial state must have {len(p.delta) + p.n_resonators} entries")
    if not np.all(np.isfinite(y0)):
        raise NonFiniteState("non-finite initial state")
    out, k_first, filled, n_acc, n_rej, status = _rk.dopri54(
        y0, float(t_end), float(sample_dt), float(record_start), float(rtol), float(atol),
        float(h_fixed or 0.0), float(guard),
        np.asarray(p.omega, dtype=np.float64), p.gamma_m, p.kappa, p.g, p.J,
        np.asarray(p.delta, dtype=np.float64), p.alpha_in, p.mu_m,
        np.asarray(p.cavity_sites, dtype=np.int64),
    )
    t_fail = (k_first + filled) * sample_dt
    if status == _rk.STATUS_DIVERGED:
        raise Divergence(f"state exceeded guard {guard:g} near t={t_fail:g}")
    if status == _rk.STATUS_NONFINITE:
        raise NonFiniteState(f"non-finite state near t={t_fail:g}")
    if status == _rk.STATUS_STEP_UNDERFLOW:
        raise NumericalError(f"step size underflow near t={t_fail:g}")
    times = (k_first + np.arange(filled)) * sample_dt
    n_cav = len(p.delta)
    return Trajectory(times, out[:filled, :n_cav], out[:filled, n_cav:], p, n_acc, n_rej)


def integrate_binary(params, init=None, t_end: float = 2.0e5, **kwargs) -> Trajectory:
    if unwrap(params).topology != BINARY:
        raise ParameterError("integrate_binary needs binary topology")
    return integrate(params, init, t_end, **kwargs)


def integrate_ternary(params, init=None, t_end: float = 2.0e5, **kwargs) -> Trajectory:
    if unwrap(params).topology != TERNARY:
        raise ParameterError("integrate_ternary needs ternary topology")
    return integrate(params, init, t_end, **kwargs)


@dataclass(frozen=True)
class LimitCycle:
    """Steady oscillation beta_j(t) = beta_bar_j + B_j exp(-i omega_l t)."""

    omega_l: float
    B: tuple[float, ...]
    beta_bar: tuple[complex, ...]
    dominance: tuple[float, ...] = ()
    bin_width: float = math.nan
    window: tuple[float, float] = (math.nan, math.nan)
    peak_frequencies: tuple[float, ...] = ()

    def as_dict(self) -> dict:
        return {
            "omega_l": self.omega_l,
            "B": list(self.B),
            "beta_bar_re": [b.real for b in self.beta_bar],
            "beta_bar_im": [b.imag for b in self.beta_bar],
            "dominance": list(self.dominance),
            "bin_width": self.bin_width,
            "window": list(self.window),
        }


def _window_slice(times: np.ndarray, window) -> slice:
    n = len(times)
    if window is None:
        return slice(n // 2, n)
    t0, t1 = window
    i0 = int(np.searchsorted(times, t0, side="left"))
    i1 = int(np.searchsorted(times, t1, side="right"))
    return slice(i0, i1)


def windowed_tone(x: np.ndarray, t: np.ndarray, omega: float, w: np.ndarray) -> complex:
    """Window-gain-corrected complex amplitude c of c*exp(-i omega t) in x."""
    return complex(np.sum(w * x * np.exp(1j * omega * (t - t[0]))) / np.sum(w)) * np.exp(-1j * omega * t[0])


def spectrum(x: np.ndarray, dt: float, window: str = "hann") -> tuple[np.ndarray, np.ndarray]:
    """Amplitude spectrum with exp(-i omega t) mapped to +omega.

    Returns angular frequencies (fft order) and window-gain-corrected
    magnitudes, so a pure tone of amplitude B reads close to B at its bin.
    """
    n = len(x)
    w = np.hanning(n) if window == "hann" else np.ones(n)
    spec = np.fft.fft(np.conj(x) * w) / np.sum(w)
    freqs = 2.0 * np.pi * np.fft.fftfreq(n, d=dt)
    return freqs, np.abs(spec)


def _peak(mag: np.ndarray, exclude_dc: int) -> tuple[int, float]:
    n = len(mag)
    search = mag.copy()
    search[: exclude_dc + 1] = 0.0
    search[n // 2:] = 0.0  # positive frequencies only
    k = int(np.argmax(search))
    if k <= 0 or k >= n // 2 - 1:
        return k, float(k)
    a, b, c = np.log(mag[k - 1:k + 2] + 1e-300)
    denom = a - 2 * b + c
    shift = 0.0 if denom == 0 else 0.5 * (a - c) / denom
    return k, k + shift


def extract_limit_cycle(
    traj: Trajectory,
    window=None,
    *,
    dominance_threshold: float = 5.0,
    lock_bins: float = 2.0,
    min_periods: float = 50.0,
    exclude_bins: int = 4,
    exclude_fraction: float = 0.02,
) -> LimitCycle:
    """Locked frequency, amplitudes and centres from the late-time spectrum.

    ``window`` is a ``(t0, t1)`` pair; the default is the last half of the
    trajectory.  Raises :class:`NoLimitCycle` if any resonator's main peak is
    not ``dominance_threshold`` times larger than every other spectral
    component, and :class:`FrequencyUnlocked` if the per-resonator peaks
    disagree by more than ``lock_bins`` bins.
    """
    sl = _window_slice(traj.times, window)
    t = traj.times[sl]
    if len(t) < 8:
        raise ParameterError("analysis window holds too few samples")
    dt = float(t[1] - t[0])
    duration = t[-1] - t[0] + dt
    nominal = max(unwrap(traj.params).omega)
    if duration * nominal / (2 * np.pi) < min_periods:
        raise ParameterError(f"analysis window shorter than {min_periods:g} mechanical periods")
    n = len(t)
    bin_width = 2.0 * np.pi / (n * dt)
    w = np.hanning(n)

    peaks, fine, doms = [], [], []
    for j in range(traj.beta.shape[1]):
        x = traj.beta[sl, j]
        _, mag = spectrum(x, dt)
        k, kf = _peak(mag, exclude_bins)
        # The window's own leakage around the peak and the centre (DC) term
        # are not competing oscillations.
        guard = max(exclude_bins, int(exclude_fraction * k))
        others = mag.copy()
        idx = np.arange(n)
        dist_peak = np.minimum(np.abs(idx - k), n - np.abs(idx - k))
        dist_dc = np.minimum(idx, n - idx)
        others[(dist_peak <= guard) | (dist_dc <= guard)] = 0.0
        next_largest = others.max()
        doms.append(float(mag[k] / next_largest) if next_largest > 0 else math.inf)
        peaks.append(k)
        fine.append(kf * bin_width)

    for j, d in enumerate(doms):
        if not d > dominance_threshold:
            raise NoLimitCycle(f"resonator {j + 1}: spectral dominance {d:.3g} <= {dominance_threshold:g}")
    spread = (max(fine) - min(fine)) / bin_width
    if spread > lock_bins:
        raise FrequencyUnlocked(f"per-resonator peaks differ by {spread:.3g} bins (> {lock_bins:g})")

    omega_l = float(np.mean(fine))
    amps, centres = [], []
    for j in range(traj.beta.shape[1]):
        x = traj.beta[sl, j]
        c = windowed_tone(x, t, omega_l, w)
        amps.append(abs(c))
        residual = x - c * np.exp(-1j * omega_l * t)
        centres.append(complex(np.sum(w * residual) / np.sum(w)))
    return LimitCycle(
        omega_l=omega_l,
        B=tuple(float(a) for a in amps),
        beta_bar=tuple(centres),
        dominance=tuple(doms),
        bin_width=bin_width,
        window=(float(t[0]), float(t[-1])),
        peak_frequencies=tuple(fine),
    )


def cavity_fourier_coefficients(
    B: float,
    beta_bar: complex,
    cavity_index: int,
    params: SystemParams | ValidatedParams,
    n_range: int,
    omega_l: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Sideband amplitudes A_n of the cavity field for a prescribed oscillation.

    Returns ``(n, A_n)`` for ``n = -n_range..n_range`` with

        A_n = sqrt(kappa) alpha_in J_n(-eps) / K_n,
        eps = 2 g B / omega_l,  K_n = i(n omega_l - Delta') + kappa/2,
        Delta' = Delta + 2 g Re(beta_bar).
    """
    p = unwrap(params)
    if B < 0:
        raise ParameterError("B must be non-negative")
    if not omega_l > 0:
        raise ParameterError("omega_l must be positive")
    eps = 2.0 * p.g * B / omega_l
    d_prime = p.delta[cavity_index] + 2.0 * p.g * beta_bar.real
    n = np.arange(-n_range, n_range + 1)
    jn = bessel_j_range(-eps, -n_range, n_range)
    K = 1j * (n * omega_l - d_prime) + 0.5 * p.kappa
    return n, np.sqrt(p.kappa) * p.alpha_in * jn / K


def amplitude_drift(traj: Trajectory, resonator: int, tail: float = 0.2, chunks: int = 4) -> float:
    """Relative spread of the mean |beta - <beta>| across chunks of the final ``tail`` fraction."""
    n = len(traj)
    x = traj.beta[int(n * (1 - tail)):, resonator]
    x = x - x.mean()
    parts = np.array_split(np.abs(x), chunks)
    means = np.array([p.mean() for p in parts])
    return float((means.max() - means.min()) / means.mean())
