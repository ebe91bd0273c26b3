import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from epsense.dynamics import (
    Trajectory,
    amplitude_drift,
    cavity_fourier_coefficients,
    default_initial_state,
    extract_limit_cycle,
    integrate,
    integrate_binary,
    integrate_ternary,
)
from epsense.errors import Divergence, FrequencyUnlocked, NoLimitCycle, ParameterError

from conftest import FIG2, FIG6


def _decoupled_closed_form(p, y0, t):
    n_cav = len(p.delta)
    out = np.empty_like(y0)
    for c, d in enumerate(p.delta):
        lam = 1j * d - 0.5 * p.kappa
        ss = -math.sqrt(p.kappa) * p.alpha_in / lam
        out[c] = ss + (y0[c] - ss) * np.exp(lam * t)
    for j, w in enumerate(p.omega):
        out[n_cav + j] = y0[n_cav + j] * np.exp(-(1j * w + 0.5 * p.gamma_m) * t)
    return out


@pytest.mark.parametrize("base", [FIG2, FIG6])
def test_decoupled_limit_matches_closed_form(base):
    p = base.with_(g=0.0, J=0.0, mu_m=0.0, alpha_in=3.0, omega=tuple(1.0 + 0.1 * j for j in range(base.n_resonators)))
    y0 = default_initial_state(p, 0.3 - 0.2j)
    y0[0] = 0.5j
    traj = integrate(p, y0, 100.0, sample_dt=0.5)
    expected = _decoupled_closed_form(p, y0, 100.0)
    got = np.concatenate([traj.alpha[-1], traj.beta[-1]])
    assert np.max(np.abs(got - expected)) < 1e-6


def test_topology_guards():
    with pytest.raises(ParameterError):
        integrate_ternary(FIG2, t_end=1.0)
    with pytest.raises(ParameterError):
        integrate_binary(FIG6, t_end=1.0)


def test_gravity_term_conserves_its_hamiltonian():
    # Lossless single resonator: H = w (u^2 + v^2)/2 + (2/3) mu w^2 v^4 with beta = u + i v.
    p = FIG2.with_(gamma_m=0.0, g=0.0, J=0.0, alpha_in=0.0, mu_m=0.05)
    y0 = default_initial_state(p, 0.7 + 0.4j)
    traj = integrate(p, y0, 500.0, sample_dt=0.5, rtol=1e-11, atol=1e-14)
    u, v = traj.beta[:, 0].real, traj.beta[:, 0].imag
    H = 0.5 * (u**2 + v**2) + (2 / 3) * p.mu_m * v**4
    assert np.max(np.abs(H - H[0])) / H[0] < 1e-8


def test_gravity_perturbation_is_linear_in_mu(rng):
    p = FIG2.with_(alpha_in=200.0)
    base = integrate(p, t_end=200.0)
    d1 = integrate(p.with_(mu_m=1e-12), t_end=200.0).beta[-1] - base.beta[-1]
    d2 = integrate(p.with_(mu_m=2e-12), t_end=200.0).beta[-1] - base.beta[-1]
    assert np.allclose(d2, 2 * d1, rtol=1e-3)


def test_fixed_step_order_on_ternary_cycle():
    p = FIG6
    t_end = 100.0

    def final(h):
        return integrate(p, t_end=t_end, sample_dt=0.5, h_fixed=h, record_start=t_end).beta[-1]

    ref = final(0.05 / 16)
    e1 = np.max(np.abs(final(0.05) - ref))
    e2 = np.max(np.abs(final(0.025) - ref))
    ratio = e1 / e2
    assert 2**5 * 0.6 < ratio < 2**5 * 1.6


def test_time_translation_invariance():
    p = FIG2.with_(alpha_in=300.0)
    full = integrate(p, t_end=300.0, sample_dt=0.5)
    k = int(100.0 / 0.5)
    y_mid = np.concatenate([full.alpha[k], full.beta[k]])
    rest = integrate(p, y_mid, 200.0, sample_dt=0.5)
    a = np.concatenate([full.alpha[-1], full.beta[-1]])
    b = np.concatenate([rest.alpha[-1], rest.beta[-1]])
    assert np.max(np.abs(a - b)) / np.max(np.abs(a)) < 1e-6


def test_divergence_guard():
    with pytest.raises(Divergence):
        integrate(FIG2.with_(alpha_in=1e4), t_end=1e4, guard=1e2)


def _synthetic(signals, dt=0.5, n=200_000):
    t = np.arange(n) * dt
    beta = np.column_stack([f(t) for f in signals])
    alpha = np.zeros((n, 2), complex)
    return Trajectory(t, alpha, beta, FIG2)


def test_synthetic_tone_recovered():
    tone = lambda t: 0.3 + 2.0 * np.exp(-1j * 0.98 * t)
    cyc = extract_limit_cycle(_synthetic([tone, tone]))
    assert cyc.omega_l == pytest.approx(0.98, rel=1e-3)
    assert abs(cyc.omega_l - 0.98) < 0.05 * cyc.bin_width
    assert np.allclose(cyc.B, 2.0, rtol=1e-3)
    assert np.allclose(cyc.beta_bar, 0.3, atol=1e-3)


def test_unlocked_resonators_detected():
    a = lambda t: np.exp(-1j * 0.98 * t)
    b = lambda t: np.exp(-1j * 1.02 * t)
    with pytest.raises(FrequencyUnlocked):
        extract_limit_cycle(_synthetic([a, b]))


def test_two_tone_signal_is_not_a_limit_cycle():
    a = lambda t: np.exp(-1j * 0.98 * t) + 0.5 * np.exp(-1j * 1.03 * t)
    with pytest.raises(NoLimitCycle):
        extract_limit_cycle(_synthetic([a, a]))


def test_short_window_rejected():
    tone = lambda t: np.exp(-1j * t)
    with pytest.raises(ParameterError):
        extract_limit_cycle(_synthetic([tone, tone], n=400))


def test_ternary_limit_cycle_locks(fig6_cycle, fig6_traj):
    assert min(fig6_cycle.dominance) >= 5
    spread = (max(fig6_cycle.peak_frequencies) - min(fig6_cycle.peak_frequencies)) / fig6_cycle.bin_width
    assert spread <= 2
    assert fig6_cycle.omega_l == pytest.approx(1.0, abs=0.01)
    for j in range(3):
        assert amplitude_drift(fig6_traj, j) < 0.01


def test_cavity_sidebands_match_direct_integration():
    p = FIG2.with_(alpha_in=50.0)
    B, bbar, w = 800.0, 12.0 + 3.0j, 1.003
    eps = 2 * p.g * B / w

    def rhs(t, y):
        a = y[0] + 1j * y[1]
        re_beta = bbar.real + B * math.cos(w * t)
        da = (1j * (p.delta[0] + 2 * p.g * re_beta) - 0.5 * p.kappa) * a + math.sqrt(p.kappa) * p.alpha_in
        return [da.real, da.imag]

    period = 2 * math.pi / w
    t0 = 400 * period
    t = t0 + np.arange(256) * period / 256
    sol = solve_ivp(rhs, (0, t[-1]), [0.0, 0.0], t_eval=t, rtol=1e-12, atol=1e-12, method="DOP853")
    alpha = sol.y[0] + 1j * sol.y[1]
    a = alpha * np.exp(-1j * eps * np.sin(w * t))
    coeffs = np.fft.fft(a * np.exp(0j)) / len(t)  # a(t) = sum A_n exp(i n w t), t0 a whole period
    n, A = cavity_fourier_coefficients(B, bbar, 0, p, 8, w)
    direct = np.array([coeffs[k % len(t)] for k in n])
    assert np.allclose(direct, A, atol=1e-6 * np.abs(A).max())
    # Parseval: the phase factor has unit modulus.
    assert np.sum(np.abs(A) ** 2) == pytest.approx(np.mean(np.abs(alpha) ** 2), rel=1e-4)


def test_cavity_coefficients_validate_inputs():
    with pytest.raises(ParameterError):
        cavity_fourier_coefficients(-1.0, 0j, 0, FIG2, 3, 1.0)
    with pytest.raises(ParameterError):
        cavity_fourier_coefficients(1.0, 0j, 0, FIG2, 3, 0.0)


def test_trajectory_export(tmp_path, fig6_traj):
    path = tmp_path / "traj.csv"
    fig6_traj.write(path, stride=1000)
    header = path.read_text().splitlines()[0].split(",")
    assert header[0] == "t" and "re_beta3" in header and "im_alpha2" in header
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    assert data.shape[1] == 1 + 2 * (2 + 3)
