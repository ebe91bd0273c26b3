"""Physical parameters, parameter-hierarchy checks and unit conversion.

Everything outside this module works in units where the bare mechanical
frequency is 1 and hbar = 1.  Only :class:`SiParams` and the noise budget in
:mod:`epsense.ep` carry SI quantities.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, fields, replace
from typing import Sequence

from .errors import HierarchyViolation, MissingField, NonPositiveRate, ParameterError

BINARY = "binary"
TERNARY = "ternary"
TOPOLOGIES = (BINARY, TERNARY)

#: Default ratio between neighbouring scales of gamma_m, g << kappa << omega.
HIERARCHY_RATIO = 0.2


def _as_tuple(values) -> tuple[float, ...]:
    if isinstance(values, (int, float)):
        return (float(values),)
    return tuple(float(v) for v in values)


@dataclass(frozen=True)
class SystemParams:
    """Dimensionless model parameters (all rates in units of omega_m).

    ``omega`` holds one bare frequency per mechanical resonator and ``delta``
    one detuning per cavity.  Binary systems have a cavity on each resonator;
    ternary chains carry cavities on the two end resonators only.
    """

    topology: str
    omega: tuple[float, ...]
    gamma_m: float
    kappa: float
    g: float
    J: float
    delta: tuple[float, ...]
    alpha_in: float = 0.0
    mu_m: float = 0.0
    theta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "omega", _as_tuple(self.omega))
        object.__setattr__(self, "delta", _as_tuple(self.delta))
        if self.topology not in TOPOLOGIES:
            raise ParameterError(f"unknown topology {self.topology!r}; expected one of {TOPOLOGIES}")
        n_res, n_cav = (2, 2) if self.topology == BINARY else (3, 2)
        if len(self.omega) != n_res:
            raise ParameterError(f"{self.topology} system needs {n_res} mechanical frequencies, got {len(self.omega)}")
        if len(self.delta) != n_cav:
            raise ParameterError(f"{self.topology} system needs {n_cav} detunings, got {len(self.delta)}")

    @property
    def n_resonators(self) -> int:
        return len(self.omega)

    @property
    def cavity_sites(self) -> tuple[int, ...]:
        """Index of the resonator each cavity couples to."""
        return (0, 1) if self.topology == BINARY else (0, 2)

    def with_(self, **changes) -> "SystemParams":
        return replace(self, **changes)

    def as_dict(self) -> dict:
        return {f.name: (list(v) if isinstance(v := getattr(self, f.name), tuple) else v) for f in fields(self)}


@dataclass(frozen=True)
class ValidatedParams:
    """Parameters that passed :func:`validate`, plus any soft warnings."""

    params: SystemParams
    warnings: tuple[str, ...] = ()

    def __getattr__(self, name):
        # Delegate field access so validated params can be used in place of raw ones.
        if name.startswith("__") or "params" not in self.__dict__:
            raise AttributeError(name)
        return getattr(self.__dict__["params"], name)


def unwrap(params: SystemParams | ValidatedParams) -> SystemParams:
    return params.params if isinstance(params, ValidatedParams) else params


def validate(params: SystemParams | ValidatedParams, ratio: float = HIERARCHY_RATIO) -> ValidatedParams:
    """Check positivity and the gamma_m, g << kappa << omega hierarchy.

    Rates that are not strictly positive raise :class:`NonPositiveRate`.  An
    inequality of the hierarchy that fails outright raises
    :class:`HierarchyViolation`; one that holds but with a ratio above
    ``ratio`` only produces a warning on the returned object.
    """
    p = unwrap(params)
    for name in ("gamma_m", "kappa", "g", "J"):
        value = getattr(p, name)
        if not value > 0:
            raise NonPositiveRate(name, value)
    for j, w in enumerate(p.omega):
        if not w > 0:
            raise NonPositiveRate(f"omega[{j}]", w)
    if p.mu_m < 0:
        raise ParameterError(f"mu_m must be >= 0, got {p.mu_m!r}")
    if p.alpha_in < 0:
        raise ParameterError(f"alpha_in must be >= 0, got {p.alpha_in!r}")
    if p.theta != 0.0:
        raise ParameterError("only theta = 0 is supported")
    for value in (*p.omega, *p.delta, p.gamma_m, p.kappa, p.g, p.J, p.alpha_in, p.mu_m):
        if not math.isfinite(value):
            raise ParameterError(f"non-finite parameter value {value!r}")

    omega_min = min(p.omega)
    checks = (
        ("gamma_m << kappa", p.gamma_m, p.kappa),
        ("g << kappa", p.g, p.kappa),
        ("kappa << omega_m", p.kappa, omega_min),
    )
    notes = []
    for label, small, large in checks:
        if small >= large:
            raise HierarchyViolation(label, f"{small:g} >= {large:g}")
        if small > ratio * large:
            notes.append(f"{label} only weakly satisfied: ratio {small / large:.3g} > {ratio:g}")
    return ValidatedParams(p, tuple(notes))


@dataclass(frozen=True)
class SiParams:
    """Device parameters in SI units (angular rates in rad/s)."""

    omega_m: float | None = None
    gamma_m: float | None = None
    kappa: float | None = None
    g: float | None = None
    J: float | None = None
    mass: float | None = None
    temperature: float | None = None
    thickness: float | None = None
    Q: float | None = None
    bandwidth: float | None = None

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


SI_RATES = ("omega_m", "gamma_m", "kappa", "g", "J")


def validate_si(si: SiParams, required: Sequence[str] | None = None) -> SiParams:
    """Positivity check on every supplied (or every ``required``) SI field."""
    names = required if required is not None else [f.name for f in fields(si)]
    for name in names:
        value = getattr(si, name)
        if value is None:
            raise MissingField(name)
        if not value > 0:
            raise NonPositiveRate(name, value)
    if si.Q is not None and si.omega_m and si.gamma_m:
        ratio = si.Q / (si.omega_m / si.gamma_m)
        if ratio > 10 or ratio < 0.1:
            warnings.warn(
                f"Q={si.Q:g} inconsistent with omega_m/gamma_m={si.omega_m / si.gamma_m:g}",
                stacklevel=2,
            )
    return si


def hz_to_rad(f_hz: float) -> float:
    return 2.0 * math.pi * f_hz


def to_dimensionless(
    si: SiParams,
    *,
    alpha_in: float | None = None,
    mu_m: float | None = None,
    delta: Sequence[float] = (-1.0, 1.0),
    topology: str = BINARY,
) -> SystemParams:
    """Divide every SI rate by omega_m.

    The drive amplitude and gravity strength have no SI counterpart in the
    device table, so they are required keyword arguments.
    """
    validate_si(si, SI_RATES)
    if alpha_in is None:
        raise MissingField("alpha_in")
    if mu_m is None:
        raise MissingField("mu_m")
    w = si.omega_m
    n_res = 2 if topology == BINARY else 3
    return SystemParams(
        topology=topology,
        omega=(1.0,) * n_res,
        gamma_m=si.gamma_m / w,
        kappa=si.kappa / w,
        g=si.g / w,
        J=si.J / w,
        delta=tuple(delta),
        alpha_in=alpha_in,
        mu_m=mu_m,
    )


def from_dimensionless(
    params: SystemParams | ValidatedParams,
    omega_m: float,
    **device,
) -> SiParams:
    """Inverse of :func:`to_dimensionless` for the rate fields.

    ``device`` may carry mass, temperature, thickness, Q and bandwidth, which
    are passed through unchanged.
    """
    p = unwrap(params)
    if len(set(p.omega)) != 1:
        raise ParameterError("SI conversion needs identical mechanical frequencies")
    scale = omega_m * p.omega[0]
    return SiParams(
        omega_m=scale,
        gamma_m=p.gamma_m * omega_m,
        kappa=p.kappa * omega_m,
        g=p.g * omega_m,
        J=p.J * omega_m,
        **device,
    )
