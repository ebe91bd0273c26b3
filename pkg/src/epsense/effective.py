"""Cavity-dressed mechanical oscillators and the effective non-Hermitian Hamiltonians."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .bessel import bessel_j_range
from .dynamics import (
    DEFAULT_SAMPLE_DT,
    LimitCycle,
    Trajectory,
    extract_limit_cycle,
    integrate,
    transient_cutoff,
)
from .errors import NoLimitCycle, ParameterError, TruncationNotConverged
from .model import BINARY, TERNARY, SystemParams, ValidatedParams, unwrap

N_MAX = 60
TAIL = 1e-14
SMALL_EPS = 1e-8


def _k(n, omega_l, d_prime, kappa):
    return 1j * (n * omega_l - d_prime) + 0.5 * kappa


def _sideband_sums(eps: float, d_prime: float, omega_l: float, kappa: float, n_max: int, tail: float):
    """Sum J_{n+1}J_n over |K_{n+1}K_n|^2 (damping) and over K*_{n+1}K_n (spring).

    Terms are added in pairs n = k, -k-1 moving outwards from the centre
    until both fall below ``tail`` times the running sums, and at least
    past the resonant sideband n ~ Delta'/omega_l.
    """
    jn = bessel_j_range(-eps, -n_max - 1, n_max + 1)
    offset = n_max + 1

    def term(n):
        prod = jn[n + 1 + offset] * jn[n + offset]
        k0 = _k(n, omega_l, d_prime, kappa)
        k1 = _k(n + 1, omega_l, d_prime, kappa)
        return prod / (abs(k1) ** 2 * abs(k0) ** 2), prod / (np.conj(k1) * k0)

    k_min = int(math.ceil(abs(d_prime) / omega_l + abs(eps))) + 2
    s_damp = 0.0
    s_spring = 0.0 + 0.0j
    # Tails are judged against the sums of magnitudes: at Delta' = 0 the
    # damping cancels exactly and a relative test on the sum never passes.
    a_damp = a_spring = 0.0
    for k in range(n_max + 1):
        d1, s1 = term(k)
        d2, s2 = term(-k - 1)
        s_damp += d1 + d2
        s_spring += s1 + s2
        a_damp += abs(d1) + abs(d2)
        a_spring += abs(s1) + abs(s2)
        if k >= k_min:
            small_d = abs(d1) + abs(d2) <= tail * a_damp
            small_s = abs(s1) + abs(s2) <= tail * a_spring
            if small_d and small_s:
                return s_damp, s_spring
    raise TruncationNotConverged(f"sideband series not converged within |n| <= {n_max} (eps={eps:g})")


def _check(omega_l, kappa):
    if not omega_l > 0:
        raise ParameterError("omega_l must be positive")
    if not kappa > 0:
        raise ParameterError("kappa must be positive")


def optical_spring(
    epsilon: float,
    delta_prime: float,
    omega_l: float,
    params: SystemParams | ValidatedParams,
    *,
    n_max: int = N_MAX,
    tail: float = TAIL,
) -> float:
    """Radiation-pressure frequency shift Omega_j of a driven resonator."""
    p = unwrap(params)
    _check(omega_l, p.kappa)
    pref = 2.0 * p.kappa * (p.g * p.alpha_in) ** 2 / omega_l
    if pref == 0.0:
        return 0.0
    if abs(epsilon) < SMALL_EPS:
        k_m1 = _k(-1, omega_l, delta_prime, p.kappa)
        k_0 = _k(0, omega_l, delta_prime, p.kappa)
        k_1 = _k(1, omega_l, delta_prime, p.kappa)
        # Only n = 0, -1 survive: J1(-e)J0 ~ -e/2 and J0 J_{-1}(-e) ~ e/2.
        return float(-0.5 * pref * (1.0 / (np.conj(k_0) * k_m1) - 1.0 / (np.conj(k_1) * k_0)).real)
    _, s = _sideband_sums(epsilon, delta_prime, omega_l, p.kappa, n_max, tail)
    return float(-pref / epsilon * s.real)


def optomech_damping(
    epsilon: float,
    delta_prime: float,
    omega_l: float,
    params: SystemParams | ValidatedParams,
    *,
    n_max: int = N_MAX,
    tail: float = TAIL,
) -> float:
    """Cavity-induced damping Gamma_j; negative values mean net gain."""
    p = unwrap(params)
    _check(omega_l, p.kappa)
    pref = 2.0 * (p.g * p.kappa * p.alpha_in) ** 2
    if pref == 0.0:
        return 0.0
    if abs(epsilon) < SMALL_EPS:
        k_m1 = abs(_k(-1, omega_l, delta_prime, p.kappa)) ** 2
        k_0 = abs(_k(0, omega_l, delta_prime, p.kappa)) ** 2
        k_1 = abs(_k(1, omega_l, delta_prime, p.kappa)) ** 2
        return float(0.5 * pref / k_0 * (1.0 / k_m1 - 1.0 / k_1))
    s, _ = _sideband_sums(epsilon, delta_prime, omega_l, p.kappa, n_max, tail)
    return float(pref / epsilon * s)


def linearized_damping(delta: float, omega_m: float, params) -> float:
    """Textbook weak-modulation result g^2 n kappa [L(Delta + w) - L(Delta - w)]."""
    p = unwrap(params)
    n_cav = p.kappa * p.alpha_in**2 / (delta**2 + 0.25 * p.kappa**2)

    def lorentz(x):
        return 1.0 / (x**2 + 0.25 * p.kappa**2)

    return p.g**2 * n_cav * p.kappa * (lorentz(delta + omega_m) - lorentz(delta - omega_m))


def gravity_shift(mu_m: float, omega_j: float, B_j: float) -> float:
    """Amplitude-dependent frequency shift Theta = mu_m omega^2 B^2."""
    if mu_m < 0 or omega_j < 0 or B_j < 0:
        raise ParameterError("gravity_shift inputs must be non-negative")
    return mu_m * omega_j**2 * B_j**2


@dataclass(frozen=True)
class EffectiveOscillator:
    """One dressed resonator: frequency, signed damping and gravity shift."""

    omega_eff: float
    gamma_eff: float
    theta: float = 0.0
    epsilon: float = 0.0
    spring: float = 0.0
    damping: float = 0.0

    @property
    def omega_bare(self) -> float:
        return self.omega_eff - self.spring

    @property
    def gamma_bare(self) -> float:
        return self.gamma_eff - self.damping

    def shifted(self, d_omega: float) -> "EffectiveOscillator":
        return replace(self, omega_eff=self.omega_eff + d_omega)


@dataclass(frozen=True)
class EffectiveHamiltonian:
    """Dense 2N x 2N matrix acting on (beta_1..beta_N, beta_1*..beta_N*)."""

    matrix: np.ndarray
    labels: tuple[str, ...]

    @property
    def n(self) -> int:
        return self.matrix.shape[0] // 2

    def upper_block(self) -> np.ndarray:
        return self.matrix[: self.n, : self.n]


def block_swap(n: int) -> np.ndarray:
    z = np.zeros((n, n))
    eye = np.eye(n)
    return np.block([[z, eye], [eye, z]])


def structure_defect(matrix: np.ndarray) -> float:
    """max |Sigma H* Sigma + H| for the sector swap Sigma."""
    s = block_swap(matrix.shape[0] // 2)
    return float(np.max(np.abs(s @ matrix.conj() @ s + matrix)))


def build_heff(oscillators: Sequence[EffectiveOscillator], J: float) -> EffectiveHamiltonian:
    """Chain Hamiltonian for any number of dressed oscillators."""
    n = len(oscillators)
    A = np.zeros((n, n), dtype=np.complex128)
    Bm = np.zeros((n, n))
    for j, o in enumerate(oscillators):
        A[j, j] = o.omega_eff - 0.5j * o.gamma_eff + o.theta
        Bm[j, j] = -o.theta
    for j in range(n - 1):
        A[j, j + 1] = A[j + 1, j] = -J
    H = np.zeros((2 * n, 2 * n), dtype=np.complex128)
    H[:n, :n] = A
    H[:n, n:] = Bm
    H[n:, :n] = -Bm
    # Lower-right block written entry by entry so no rounding sneaks in.
    for j, o in enumerate(oscillators):
        H[n + j, n + j] = -o.omega_eff - 0.5j * o.gamma_eff - o.theta
    for j in range(n - 1):
        H[n + j, n + j + 1] = H[n + j + 1, n + j] = J
    if structure_defect(H) != 0.0:
        raise AssertionError("effective Hamiltonian lost its block structure")
    labels = tuple(f"beta{j + 1}" for j in range(n)) + tuple(f"beta{j + 1}*" for j in range(n))
    return EffectiveHamiltonian(H, labels)


def build_heff_binary(osc1: EffectiveOscillator, osc2: EffectiveOscillator, J: float) -> EffectiveHamiltonian:
    return build_heff((osc1, osc2), J)


def build_heff_ternary(
    osc1: EffectiveOscillator, osc2_bare: EffectiveOscillator, osc3: EffectiveOscillator, J: float
) -> EffectiveHamiltonian:
    """6x6 chain; the middle resonator has no cavity and must be undressed."""
    if osc2_bare.spring != 0.0 or osc2_bare.damping != 0.0:
        raise ParameterError("middle resonator of the ternary chain carries no cavity dressing")
    return build_heff((osc1, osc2_bare, osc3), J)


@dataclass(frozen=True)
class Dressing:
    """Cavity response of every resonator at a frozen oscillation state.

    Omega_j and Gamma_j scale exactly as alpha_in^2 once the amplitudes are
    fixed, so the series are evaluated once (at unit drive) and rescaled.
    """

    params: SystemParams
    cycle: LimitCycle
    spring_on: bool = True
    use_centers: bool = True
    unit_spring: tuple[float, ...] = ()
    unit_damping: tuple[float, ...] = ()
    epsilon: tuple[float, ...] = ()
    delta_prime: tuple[float, ...] = ()

    def oscillators(self, alpha_in: float | None = None, mu_m: float | None = None) -> tuple[EffectiveOscillator, ...]:
        p = self.params
        a2 = (p.alpha_in if alpha_in is None else alpha_in) ** 2
        mu = p.mu_m if mu_m is None else mu_m
        out = []
        for j, w in enumerate(p.omega):
            spring = a2 * self.unit_spring[j]
            damping = a2 * self.unit_damping[j]
            out.append(
                EffectiveOscillator(
                    omega_eff=w + spring,
                    gamma_eff=p.gamma_m + damping,
                    theta=gravity_shift(mu, w, self.cycle.B[j]),
                    epsilon=self.epsilon[j],
                    spring=spring,
                    damping=damping,
                )
            )
        return tuple(out)

    def hamiltonian(self, alpha_in: float | None = None, mu_m: float | None = None) -> EffectiveHamiltonian:
        return build_heff(self.oscillators(alpha_in, mu_m), self.params.J)

    @property
    def flags(self) -> dict:
        return {
            "optical_spring": self.spring_on,
            "centers_in_detuning": self.use_centers,
        }


def make_dressing(
    params: SystemParams | ValidatedParams,
    cycle: LimitCycle,
    *,
    spring: bool = True,
    use_centers: bool = True,
    n_max: int = N_MAX,
) -> Dressing:
    p = unwrap(params)
    if len(cycle.B) != p.n_resonators:
        raise ParameterError("limit cycle and parameters disagree on the number of resonators")
    unit = p.with_(alpha_in=1.0)
    n = p.n_resonators
    us, ud, eps_all, dp_all = [0.0] * n, [0.0] * n, [0.0] * n, [math.nan] * n
    for c, site in enumerate(p.cavity_sites):
        eps = 2.0 * p.g * cycle.B[site] / cycle.omega_l
        d_prime = p.delta[c] + (2.0 * p.g * cycle.beta_bar[site].real if use_centers else 0.0)
        eps_all[site] = eps
        dp_all[site] = d_prime
        ud[site] = optomech_damping(eps, d_prime, cycle.omega_l, unit, n_max=n_max)
        if spring:
            us[site] = optical_spring(eps, d_prime, cycle.omega_l, unit, n_max=n_max)
    return Dressing(p, cycle, spring, use_centers, tuple(us), tuple(ud), tuple(eps_all), tuple(dp_all))


def dress(params, cycle: LimitCycle, **kwargs) -> tuple[EffectiveOscillator, ...]:
    """Dressed oscillators at the parameters' own drive and gravity strength."""
    return make_dressing(params, cycle, **kwargs).oscillators()


def mirror_ends(cycle: LimitCycle) -> LimitCycle:
    """Give both chain ends their mean amplitude and drop oscillation centres.

    With identical end amplitudes, opposite detunings produce exactly opposite
    cavity damping, which is what lets the ternary chain reach an exact
    three-fold degeneracy.
    """
    B = list(cycle.B)
    mean_end = 0.5 * (B[0] + B[-1])
    B[0] = B[-1] = mean_end
    return replace(cycle, B=tuple(B), beta_bar=tuple(0j for _ in B))


@dataclass(frozen=True)
class SelfConsistentState:
    cycle: LimitCycle
    oscillators: tuple[EffectiveOscillator, ...]
    dressing: Dressing
    at_rest: bool = False
    refined: bool = False

    @property
    def B(self) -> tuple[float, ...]:
        return self.cycle.B

    @property
    def omega_l(self) -> float:
        return self.cycle.omega_l


def _rest_cycle(traj: Trajectory, rel_tol: float) -> LimitCycle | None:
    n = len(traj)
    late = traj.beta[n // 2:]
    centre = late.mean(axis=0)
    spread = np.max(np.abs(late - centre), axis=0)
    if np.all(spread <= rel_tol * np.maximum(1.0, np.abs(centre))):
        p = traj.params
        return LimitCycle(
            omega_l=float(np.mean(p.omega)),
            B=tuple(0.0 for _ in p.omega),
            beta_bar=tuple(complex(c) for c in centre),
            window=(float(traj.times[n // 2]), float(traj.times[-1])),
        )
    return None


def self_consistent_amplitude(
    params: SystemParams | ValidatedParams,
    alpha_in: float | None = None,
    *,
    t_end: float = 2.0e5,
    sample_dt: float = DEFAULT_SAMPLE_DT,
    init=None,
    spring: bool = True,
    use_centers: bool = True,
    refine: bool = False,
    rest_tol: float = 1e-6,
    **integrate_kwargs,
) -> SelfConsistentState:
    """Simulate, read off the limit cycle, and dress the oscillators with it.

    A trajectory that settles onto a fixed point returns zero amplitudes
    (bare oscillators).  With ``refine=True`` the amplitudes are rescaled by a
    common factor until the most unstable supermode of the Theta = 0
    Hamiltonian is exactly marginal, i.e. gain balances loss.
    """
    p = unwrap(params)
    if alpha_in is not None:
        p = p.with_(alpha_in=float(alpha_in))
    if p.alpha_in == 0.0 and init is None:
        cycle = LimitCycle(omega_l=float(np.mean(p.omega)), B=tuple(0.0 for _ in p.omega),
                           beta_bar=tuple(0j for _ in p.omega))
        d = make_dressing(p, cycle, spring=spring, use_centers=use_centers)
        return SelfConsistentState(cycle, d.oscillators(), d, at_rest=True)
    traj = integrate(p, init, t_end, sample_dt=sample_dt, record_start=transient_cutoff(t_end), **integrate_kwargs)
    rest = _rest_cycle(traj, rest_tol)
    if rest is not None:
        d = make_dressing(p, rest, spring=spring, use_centers=use_centers)
        return SelfConsistentState(rest, d.oscillators(), d, at_rest=True)
    cycle = extract_limit_cycle(traj)
    refined = False
    if refine:
        cycle, refined = _refine_amplitudes(p, cycle, spring, use_centers)
    d = make_dressing(p, cycle, spring=spring, use_centers=use_centers)
    return SelfConsistentState(cycle, d.oscillators(), d, refined=refined)


def _max_growth(p: SystemParams, cycle: LimitCycle, spring: bool, use_centers: bool) -> float:
    d = make_dressing(p, cycle, spring=spring, use_centers=use_centers)
    ev = np.linalg.eigvals(d.hamiltonian(mu_m=0.0).matrix)
    return float(ev[ev.real > 0].imag.max())


def _refine_amplitudes(p, cycle, spring, use_centers, lo=0.5, hi=1.5):
    from scipy.optimize import brentq

    def growth(scale):
        return _max_growth(p, replace(cycle, B=tuple(scale * b for b in cycle.B)), spring, use_centers)

    g_lo, g_hi = growth(lo), growth(hi)
    if g_lo * g_hi > 0:
        return cycle, False
    s = brentq(growth, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps)
    return replace(cycle, B=tuple(s * b for b in cycle.B)), True
