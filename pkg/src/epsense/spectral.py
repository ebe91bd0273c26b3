"""Eigenvalues of the effective Hamiltonians and branch tracking across sweeps."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .effective import EffectiveHamiltonian, EffectiveOscillator
from .errors import CardinalityMismatch, ConvergenceFailure

RESIDUAL_BOUND = 1e-10
TIE_TOL = 1e-12


@dataclass(frozen=True)
class EigenSet:
    values: np.ndarray
    residuals: np.ndarray

    def positive(self) -> np.ndarray:
        """The physical half of the spectrum (Re > 0), ordered by real part."""
        v = self.values[self.values.real > 0]
        return v[np.lexsort((v.imag, v.real))]

    def pairing_defect(self) -> float:
        """Worst distance between an eigenvalue and the nearest -conj(other)."""
        v = self.values
        mirror = -np.conj(v)
        return float(np.max(np.min(np.abs(v[:, None] - mirror[None, :]), axis=1)))


def _matrix(H) -> np.ndarray:
    return H.matrix if isinstance(H, EffectiveHamiltonian) else np.asarray(H, dtype=np.complex128)


def eigenvalues(H, *, residual_bound: float = RESIDUAL_BOUND) -> EigenSet:
    """All eigenvalues, sorted by real then imaginary part, residual-checked.

    Each residual is ||H v - lambda v|| / ||H|| for the unit eigenvector v.
    """
    M = _matrix(H)
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix has non-finite entries")
    try:
        vals, vecs = np.linalg.eig(M)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceFailure(str(exc)) from exc
    norm = np.linalg.norm(M, 2) or 1.0
    vecs = vecs / np.linalg.norm(vecs, axis=0)
    res = np.linalg.norm(M @ vecs - vecs * vals, axis=0) / norm
    order = np.lexsort((vals.imag, vals.real))
    vals, res = vals[order], res[order]
    if np.any(res > residual_bound):
        raise ConvergenceFailure(f"eigen-residual {res.max():.3g} exceeds {residual_bound:g}")
    return EigenSet(vals, res)


def closed_form_binary(osc1: EffectiveOscillator, osc2: EffectiveOscillator, J: float) -> tuple[complex, complex]:
    """Supermode eigenvalues of the gravity-free binary system.

    Returns ``(lambda_plus, lambda_minus)`` built from the principal square
    root of the discriminant (non-negative real part).
    """
    mean = 0.5 * (osc1.omega_eff + osc2.omega_eff)
    disc = discriminant(osc1, osc2, J)
    centre = mean - 0.25j * (osc1.gamma_eff + osc2.gamma_eff)
    return centre + 0.25 * disc, centre - 0.25 * disc


def discriminant(osc1: EffectiveOscillator, osc2: EffectiveOscillator, J: float) -> complex:
    inner = 2.0 * (osc1.omega_eff - osc2.omega_eff) + 1j * (osc2.gamma_eff - osc1.gamma_eff)
    return complex(np.sqrt(16.0 * J**2 + inner**2 + 0j))


@lru_cache(maxsize=None)
def _perms(n: int) -> np.ndarray:
    return np.array(list(itertools.permutations(range(n))), dtype=np.int64)


@dataclass(frozen=True)
class EigenBranchSet:
    """Eigenvalues re-labelled so that each column is a continuous branch."""

    axis: np.ndarray
    branches: np.ndarray  # (n_points, n_branches)
    pairing: tuple[tuple[int, ...], ...]  # pairing[i][b] = storage index used at point i+1
    ambiguous: tuple[int, ...] = ()

    @property
    def n_branches(self) -> int:
        return self.branches.shape[1]

    def mirror_flags(self) -> np.ndarray:
        """True for branches in the -conj mirror half of the spectrum."""
        return np.median(self.branches.real, axis=0) < 0

    def positive_branches(self) -> np.ndarray:
        idx = np.flatnonzero(~self.mirror_flags())
        mean_re = self.branches[:, idx].real.mean(axis=0)
        return idx[np.argsort(mean_re, kind="stable")]


def _best_assignment(prev: np.ndarray, cur: np.ndarray, predicted: np.ndarray | None):
    n = len(prev)
    cost = np.abs(prev[:, None] - cur[None, :]) ** 2
    if n <= 6:
        perms = _perms(n)
        totals = cost[np.arange(n), perms].sum(axis=1)
        best = float(totals.min())
        ties = np.flatnonzero(totals <= best + TIE_TOL)
        if len(ties) == 1 or predicted is None:
            return perms[ties[0]], len(ties) > 1
        pred_cost = (np.abs(predicted[None, :] - cur[perms[ties]]) ** 2).sum(axis=1)
        return perms[ties[int(np.argmin(pred_cost))]], True
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(n, dtype=np.int64)
    perm[rows] = cols
    return perm, False


def track_branches(axis: Sequence[float], sets: Sequence[EigenSet | np.ndarray]) -> EigenBranchSet:
    """Connect eigenvalues at consecutive axis points by minimum squared displacement.

    Exhaustive over permutations for up to six eigenvalues.  When two
    assignments cost the same to within 1e-12, the one closest to a linear
    extrapolation from the two previous points wins and the point is flagged.
    """
    axis = np.asarray(axis, dtype=float)
    if len(axis) < 2 or len(axis) != len(sets):
        raise CardinalityMismatch("need at least two axis points, one eigenvalue set each")
    if np.any(np.diff(axis) <= 0):
        raise ValueError("axis must be strictly increasing")
    vals = [np.asarray(s.values if isinstance(s, EigenSet) else s, dtype=np.complex128) for s in sets]
    n = len(vals[0])
    if any(len(v) != n for v in vals):
        raise CardinalityMismatch("eigenvalue sets differ in size")
    out = np.empty((len(axis), n), dtype=np.complex128)
    out[0] = vals[0]
    pairing, ambiguous = [], []
    for i in range(1, len(axis)):
        predicted = None
        if i >= 2:
            h0 = axis[i - 1] - axis[i - 2]
            h1 = axis[i] - axis[i - 1]
            predicted = out[i - 1] + (out[i - 1] - out[i - 2]) * (h1 / h0)
        perm, tie = _best_assignment(out[i - 1], vals[i], predicted)
        out[i] = vals[i][perm]
        pairing.append(tuple(int(k) for k in perm))
        if tie:
            ambiguous.append(i)
    return EigenBranchSet(axis, out, tuple(pairing), tuple(ambiguous))
