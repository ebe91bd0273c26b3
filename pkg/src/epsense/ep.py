"""Exceptional-point location, splitting laws, mass-sensing gap and noise floor."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import constants
from scipy.optimize import brentq

from .effective import Dressing, EffectiveOscillator, build_heff
from .errors import (
    AmbiguousRoot,
    InsufficientPoints,
    NoBracket,
    NoMinimumInBracket,
    NonPositiveValue,
    ParameterError,
    UncertifiedPoint,
)
from .model import BINARY, TERNARY, SiParams
from .spectral import closed_form_binary, discriminant, eigenvalues

EP_TOL = 1e-6
X_C_FACTOR = 0.53


def positive_spectrum(matrix: np.ndarray) -> np.ndarray:
    """Eigenvalues with positive real part, ordered by real part."""
    ev = eigenvalues(matrix).values
    ev = ev[ev.real > 0]
    return ev[np.lexsort((ev.imag, ev.real))]


def max_pairwise_distance(values: np.ndarray) -> float:
    v = np.asarray(values)
    return float(np.max(np.abs(v[:, None] - v[None, :])))


# --------------------------------------------------------------------------- EP2


@dataclass(frozen=True)
class EP2Point:
    alpha_star: float
    discriminant: complex
    separation: float
    certified: bool
    local_minimum: bool
    bracket: tuple[float, float]


def damping_gap(dressing: Dressing) -> Callable[[float], float]:
    """alpha_in -> gamma_eff^2 - gamma_eff^1 at mu_m = 0."""
    if dressing.params.topology != BINARY:
        raise ParameterError("EP2 search needs a binary system")

    def f(alpha):
        o1, o2 = dressing.oscillators(alpha, 0.0)
        return o2.gamma_eff - o1.gamma_eff

    return f


def _sign_changes(f, lo, hi, n):
    xs = np.linspace(lo, hi, n)
    fs = np.array([f(x) for x in xs])
    cells = []
    for i in range(n - 1):
        if fs[i] == 0.0:
            cells.append((xs[i], xs[i]))
        elif fs[i] * fs[i + 1] < 0:
            cells.append((xs[i], xs[i + 1]))
    if fs[-1] == 0.0:
        cells.append((xs[-1], xs[-1]))
    return cells


def locate_ep2(
    model: Dressing | Callable[[float], float],
    bracket: tuple[float, float],
    J: float | None = None,
    *,
    scan: int = 65,
    tol: float = EP_TOL,
) -> EP2Point:
    """Drive strength at which 4J = |gamma_eff^2 - gamma_eff^1|.

    ``model`` is either a binary :class:`Dressing` or any callable returning
    the damping difference at a given drive (used with analytic stubs).  The
    root is polished to machine precision.  For a dressing, the point is
    certified when the two physical supermodes sit within ``tol`` of each
    other, and the eigenvalue separation is checked to be locally minimal.
    """
    if isinstance(model, Dressing):
        J = model.params.J if J is None else J
        gap = damping_gap(model)
    else:
        if J is None:
            raise ParameterError("J is required with a callable damping model")
        gap = model
    lo, hi = map(float, bracket)
    if not 0 <= lo < hi:
        raise ParameterError("bracket must satisfy 0 <= lo < hi")

    def f(a):
        return 4.0 * J - abs(gap(a))

    cells = _sign_changes(f, lo, hi, scan)
    if not cells:
        raise NoBracket(f"4J - |dgamma| has no sign change on [{lo:g}, {hi:g}]")
    roots = [a if a == b else brentq(f, a, b, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500) for a, b in cells]
    if len(roots) > 1:
        raise AmbiguousRoot(roots)
    alpha = roots[0]
    if not isinstance(model, Dressing):
        return EP2Point(alpha, complex("nan"), math.nan, False, False, (lo, hi))

    def separation(a):
        return max_pairwise_distance(_centred_cluster(model.hamiltonian(a, 0.0).matrix))

    o1, o2 = model.oscillators(alpha, 0.0)
    disc = discriminant(o1, o2, J)
    sep = separation(alpha)
    h = 1e-4 * alpha
    local_min = sep <= separation(alpha - h) and sep <= separation(alpha + h)
    return EP2Point(alpha, disc, sep, sep < tol, local_min, (lo, hi))


# --------------------------------------------------------------------------- EP3


@dataclass(frozen=True)
class EP3Point:
    alpha_star: float
    objective: float
    certified: bool
    second_difference: float
    bracket: tuple[float, float]


def coalescence_objective(model: Dressing | Callable[[float], np.ndarray]) -> Callable[[float], float]:
    """alpha_in -> largest distance among the physical eigenvalues at mu_m = 0."""
    if isinstance(model, Dressing):
        if model.params.topology != TERNARY:
            raise ParameterError("EP3 search needs a ternary system")

        def matrix(a):
            return model.hamiltonian(a, 0.0).matrix
    else:
        matrix = model

    def obj(a):
        return max_pairwise_distance(_centred_cluster(np.asarray(matrix(a), dtype=np.complex128)))

    return obj


def _centred_cluster(M: np.ndarray) -> np.ndarray:
    """Physical eigenvalues minus their mean diagonal.

    Rounding of the O(omega_m) diagonal limits how closely an eigensolver can
    resolve a higher-order degeneracy (the floor scales as the cube root of
    eps * ||H|| for an EP3).  Subtracting the mean diagonal first lowers ||H||
    to the size of the couplings.  Without gravity the two sectors decouple
    and the upper block alone carries the physical spectrum.
    """
    n = M.shape[0]
    if n % 2 == 0 and n >= 4:
        h = n // 2
        if not (np.any(M[:h, h:]) or np.any(M[h:, :h])):
            A = M[:h, :h]
            return eigenvalues(A - np.trace(A) / h * np.eye(h)).values
        ev = eigenvalues(M).values
        return ev[ev.real > 0]
    return eigenvalues(M - np.trace(M) / n * np.eye(n)).values


def golden_section(f, lo, hi, rtol=1e-14, max_iter=400):
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if abs(b - a) <= rtol * max(abs(a), abs(b)):
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = f(d)
    return (c, fc) if fc <= fd else (d, fd)


def locate_ep3(
    model: Dressing | Callable[[float], np.ndarray],
    bracket: tuple[float, float],
    *,
    scan: int = 65,
    tol: float = EP_TOL,
    rtol: float = 1e-14,
) -> EP3Point:
    """Minimise the spread of the three physical eigenvalues over the drive.

    A coarse scan picks the best grid cell, then golden-section search
    narrows it down.  ``model`` may be a ternary :class:`Dressing` or a
    callable returning a matrix (any size; for even sizes >= 4 only the
    positive-real half of the spectrum is used).
    """
    obj = coalescence_objective(model)
    lo, hi = map(float, bracket)
    if not lo < hi:
        raise ParameterError("bracket must satisfy lo < hi")
    xs = np.linspace(lo, hi, scan)
    fs = np.array([obj(x) for x in xs])
    i = int(np.argmin(fs))
    if i == 0 or i == scan - 1:
        raise NoMinimumInBracket(f"coalescence objective is smallest at the bracket edge ({xs[i]:g})")
    alpha, val = golden_section(obj, xs[i - 1], xs[i + 1], rtol=rtol)
    h = 1e-6 * abs(alpha)
    second = obj(alpha + h) - 2.0 * val + obj(alpha - h)
    return EP3Point(alpha, val, val < tol, second, (lo, hi))


# --------------------------------------------------------------------------- splitting


def frequency_splitting(values: Sequence[complex], pair: tuple[int, int] | None = None) -> float:
    """|Re(lambda_a) - Re(lambda_b)| among physical eigenvalues.

    With two values this is the binary splitting.  With more, ``pair``
    selects two entries of the real-part-ordered list; the default is the
    full real-part spread.
    """
    v = np.asarray(values, dtype=np.complex128)
    if len(v) < 2:
        raise ParameterError("need at least two eigenvalues")
    re = np.sort(v.real)
    if pair is None:
        return float(re[-1] - re[0])
    i, j = pair
    return float(abs(re[i] - re[j]))


@dataclass(frozen=True)
class SplittingSweep:
    mu_m: np.ndarray
    splitting: np.ndarray
    eigenvalues: np.ndarray  # (n_points, n_physical)
    alpha_in: float
    baseline_separation: float


def splitting_sweep(
    dressing: Dressing,
    alpha_in: float,
    mu_values: Sequence[float],
    *,
    pair: tuple[int, int] | None = None,
    certify_tol: float = EP_TOL,
    require_certified: bool = True,
    subtract_baseline: bool = False,
) -> SplittingSweep:
    """Splitting of the physical supermodes versus gravity strength.

    Refuses to run (``UncertifiedPoint``) unless the gravity-free spectrum at
    ``alpha_in`` is degenerate within ``certify_tol``.  ``subtract_baseline``
    reports |split(mu) - split(0)|, which is the meaningful response away
    from an EP.
    """
    H0 = dressing.hamiltonian(alpha_in, 0.0).matrix
    base = positive_spectrum(H0)
    sep = max_pairwise_distance(_centred_cluster(H0))
    if require_certified and not sep < certify_tol:
        raise UncertifiedPoint(f"eigenvalue separation {sep:.3g} at alpha_in={alpha_in:g} exceeds {certify_tol:g}")
    split0 = frequency_splitting(base, pair)
    mus = np.asarray(mu_values, dtype=float)
    rows, evs = [], []
    for mu in mus:
        ev = positive_spectrum(dressing.hamiltonian(alpha_in, mu).matrix)
        s = frequency_splitting(ev, pair)
        rows.append(abs(s - split0) if subtract_baseline else s)
        evs.append(ev)
    return SplittingSweep(mus, np.array(rows), np.array(evs), float(alpha_in), sep)


def default_fit_range(dressing: Dressing, decades: float = 3.0) -> tuple[float, float]:
    """Three decades of mu_m ending one decade below Theta_max = J."""
    p = dressing.params
    scale = max(w**2 * b**2 for w, b in zip(p.omega, dressing.cycle.B))
    if scale <= 0:
        raise ParameterError("zero oscillation amplitude: gravity shift vanishes")
    ceiling = p.J / scale
    top = ceiling / 10.0
    return top / 10.0**decades, top


# --------------------------------------------------------------------------- fits


@dataclass(frozen=True)
class PowerLawFit:
    coefficient: float
    exponent: float
    r_squared: float
    range: tuple[float, float]
    fixed_exponent: bool = False
    n_points: int = 0

    @property
    def conclusive(self) -> bool:
        return self.r_squared >= 0.99 and self.coefficient > 0

    def as_dict(self) -> dict:
        return {
            "coefficient": self.coefficient,
            "exponent": self.exponent,
            "r_squared": self.r_squared,
            "range": list(self.range),
            "fixed_exponent": self.fixed_exponent,
            "n_points": self.n_points,
            "conclusive": self.conclusive,
        }


def fit_power_law(x: Sequence[float], y: Sequence[float], exponent: float | None = None) -> PowerLawFit:
    """Least-squares line through (log x, log y).

    With ``exponent`` given, only the coefficient is fitted and r^2 measures
    how well the frozen law explains log y.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) != len(y):
        raise ParameterError("x and y differ in length")
    if len(x) < 5:
        raise InsufficientPoints(f"need at least 5 points, got {len(x)}")
    if np.any(x <= 0) or np.any(y <= 0):
        raise NonPositiveValue("power-law fit needs strictly positive data")
    lx, ly = np.log(x), np.log(y)
    if exponent is None:
        slope, intercept = np.polyfit(lx, ly, 1)
    else:
        slope = float(exponent)
        intercept = float(np.mean(ly - slope * lx))
    pred = intercept + slope * lx
    ss_res = float(np.sum((ly - pred) ** 2))
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else (1.0 if ss_res == 0 else 0.0)
    return PowerLawFit(
        coefficient=float(math.exp(intercept)),
        exponent=float(slope),
        r_squared=r2,
        range=(float(x.min()), float(x.max())),
        fixed_exponent=exponent is not None,
        n_points=len(x),
    )


# --------------------------------------------------------------------------- mass sensing


def supermode_pair(oscillators: Sequence[EffectiveOscillator], J: float) -> tuple[complex, complex]:
    """(lambda_+, lambda_-): the two physical eigenvalues, larger real part first."""
    ev = positive_spectrum(build_heff(oscillators, J).matrix)
    if len(ev) != 2:
        raise ParameterError("supermode pair is defined for binary systems")
    return (ev[1], ev[0])


def eigen_gap(before: Sequence[EffectiveOscillator], after: Sequence[EffectiveOscillator], J: float):
    """chi_pm = lambda_pm(after) - lambda_pm(before)."""
    a_p, a_m = supermode_pair(after, J)
    b_p, b_m = supermode_pair(before, J)
    return a_p - b_p, a_m - b_m


def mass_deposition_gap(
    dressing: Dressing,
    alpha_in: float,
    delta_omega: float,
    mu_m: float,
    *,
    baseline_mu: float | str = 0.0,
    shifted: int = 1,
) -> tuple[complex, complex]:
    """Eigenvalue gap caused by a deposited mass on resonator ``shifted``.

    The perturbed configuration has omega_eff shifted by ``delta_omega`` and
    gravity strength ``mu_m``; the baseline has no mass shift and gravity
    strength ``baseline_mu`` (``"same"`` reuses ``mu_m``).
    """
    if dressing.params.topology != BINARY:
        raise ParameterError("mass deposition gap is defined for the binary system")
    base_mu = mu_m if baseline_mu == "same" else float(baseline_mu)
    after = list(dressing.oscillators(alpha_in, mu_m))
    after[shifted] = after[shifted].shifted(delta_omega)
    before = dressing.oscillators(alpha_in, base_mu)
    return eigen_gap(before, after, dressing.params.J)


def mass_responsivity(m: float, omega_m: float) -> float:
    """zeta = omega_m / (2 m)."""
    if not (m > 0 and omega_m > 0):
        raise ParameterError("mass and frequency must be positive")
    return omega_m / (2.0 * m)


def deposited_mass(delta_omega: float, m: float, omega_m: float) -> float:
    """delta_m = (2 m / omega_m) delta_omega."""
    return delta_omega / mass_responsivity(m, omega_m)


# --------------------------------------------------------------------------- noise


@dataclass(frozen=True)
class NoiseBudget:
    delta_omega_min: float
    E_c: float
    x_c: float
    temperature: float
    Q: float
    bandwidth: float
    mass: float
    omega_n: float
    thickness: float
    assumptions: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "delta_omega_min": self.delta_omega_min,
            "delta_omega_min_over_2pi": self.delta_omega_min / (2 * math.pi),
            "E_c": self.E_c,
            "x_c": self.x_c,
            "temperature": self.temperature,
            "Q": self.Q,
            "bandwidth": self.bandwidth,
            "mass": self.mass,
            "omega_n": self.omega_n,
            "thickness": self.thickness,
            "assumptions": dict(self.assumptions),
        }


def noise_limit(si: SiParams) -> NoiseBudget:
    """Thermomechanical floor sqrt(k_B T / E_c * omega_n * df / Q).

    E_c = m omega_m^2 <x_c^2> with <x_c^2> taken as (0.53 t)^2 and
    omega_n = omega_m (rad/s).  The result is in the units of
    sqrt(omega_n * df), i.e. 1/s, often quoted in Hz.
    """
    for name in ("omega_m", "mass", "temperature", "thickness", "Q", "bandwidth"):
        if getattr(si, name) is None:
            raise ParameterError(f"noise budget needs {name}")
    if si.bandwidth < 0 or si.temperature < 0:
        raise ParameterError("bandwidth and temperature must be non-negative")
    if not (si.mass > 0 and si.omega_m > 0 and si.thickness > 0 and si.Q > 0):
        raise ParameterError("mass, omega_m, thickness and Q must be positive")
    x_c = X_C_FACTOR * si.thickness
    E_c = si.mass * si.omega_m**2 * x_c**2
    omega_n = si.omega_m
    dw = math.sqrt(constants.Boltzmann * si.temperature / E_c * omega_n * si.bandwidth / si.Q)
    return NoiseBudget(
        delta_omega_min=dw,
        E_c=E_c,
        x_c=x_c,
        temperature=si.temperature,
        Q=si.Q,
        bandwidth=si.bandwidth,
        mass=si.mass,
        omega_n=omega_n,
        thickness=si.thickness,
        assumptions={"x_c_squared": "(0.53 t)^2", "omega_n": "omega_m"},
    )
