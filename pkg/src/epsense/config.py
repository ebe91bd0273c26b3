"""Scenario configuration files (TOML, schema version 1).

Layout::

    schema_version = 1

    [scenario]
    id = "fig3"                       # required
    operations = ["ep-locate", "splitting-fit"]
    output_dir = "runs/fig3"          # default runs/<id>
    seed = 0
    workers = 0                       # 0 = machine parallelism

    [system]                          # dimensionless, omega_m = 1
    topology = "binary"               # binary | ternary
    omega = [1.0, 1.0]
    gamma_m = 1e-3
    kappa = 0.1
    g = 2.5e-4
    J = 0.022
    delta = [-1.0, 1.0]
    alpha_in = 440.0
    mu_m = 0.0

    [si]                              # optional device table
    rate_units = "hz"                 # rates given as f = omega / 2pi
    omega_m = 6e9                     # ... gamma_m, kappa, g, J
    mass = 5.3e-15                    # kg
    temperature = 300.0
    thickness = 80e-9
    Q = 1e12
    bandwidth = 1e-10

    [amplitude]                       # how the oscillation state is obtained
    source = "simulate"               # simulate | fixed
    alpha_ref = 440.0                 # drive used for the reference limit cycle
    t_end = 2e5
    sample_dt = 0.5
    beta0 = [0.1, 0.0]                # initial resonator amplitude (re, im)
    optical_spring = true
    use_centers = true
    mirror_ends = false
    refine = false
    # source = "fixed" needs omega_l, B, beta_bar_re, beta_bar_im

    [ep]
    bracket = [300.0, 600.0]
    scan = 65

    [[sweep.eigen-sweep]]             # one table per sweep; also [sweep.<op>]
    axis = "alpha_in"                 # alpha_in | mu_m | bandwidth
    start = 300.0
    stop = 600.0
    count = 301
    spacing = "linear"                # linear | log
    mu_ladder = [0.0, 4.4e-9]         # alpha_in axis only
    at = "ep"                         # mu_m axis: ep | reference | <number>

    [fit]
    exponent = 0.5                    # fixed-exponent fit alongside the free fit
    target = 30.12
    pair = [0, 2]                     # optional eigenvalue pair (ternary)
    detune = 1.0                      # operating point = detune * alpha*
    subtract_baseline = false
    count = 31                        # default-range point count

    [gap]
    delta_omega = 1e-2
    mu_ladder = [0.0, 4.4e-10]
    baseline = "zero"                 # zero | same
    shifted = 1
    im_threshold = 0.1

    [noise]
    Q_values = [1e12, 1e5]

    [trajectory]
    stride = 20
    phase_periods = 20
    spectrum_band = [0.9, 1.1]

    [tolerances]
    rtol = 1e-9
    atol = 1e-12
    ep_tol = 1e-6
    dominance = 5.0

Unknown sections or keys are rejected with the offending line.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .errors import ConfigError

SCHEMA_VERSION = 1
OPERATIONS = ("simulate", "eigen-sweep", "ep-locate", "splitting-fit", "mass-gap", "noise-limit")
AXES = ("alpha_in", "mu_m", "bandwidth")

_NUM = (int, float)
_LIST = list

# section -> key -> accepted python types
_SCHEMA: dict[str, dict[str, tuple]] = {
    "scenario": {
        "id": (str,), "operations": (_LIST,), "output_dir": (str,), "seed": (int,), "workers": (int,),
        "pinned": (_LIST,), "description": (str,),
    },
    "system": {
        "topology": (str,), "omega": (_LIST,), "gamma_m": _NUM, "kappa": _NUM, "g": _NUM, "J": _NUM,
        "delta": (_LIST,), "alpha_in": _NUM, "mu_m": _NUM,
    },
    "si": {
        "rate_units": (str,), "omega_m": _NUM, "gamma_m": _NUM, "kappa": _NUM, "g": _NUM, "J": _NUM,
        "mass": _NUM, "temperature": _NUM, "thickness": _NUM, "Q": _NUM, "bandwidth": _NUM,
    },
    "amplitude": {
        "source": (str,), "alpha_ref": _NUM, "t_end": _NUM, "sample_dt": _NUM, "beta0": (_LIST,),
        "optical_spring": (bool,), "use_centers": (bool,), "mirror_ends": (bool,), "refine": (bool,),
        "omega_l": _NUM, "B": (_LIST,), "beta_bar_re": (_LIST,), "beta_bar_im": (_LIST,),
    },
    "ep": {"bracket": (_LIST,), "scan": (int,)},
    "fit": {
        "exponent": _NUM, "target": _NUM, "pair": (_LIST,), "detune": _NUM, "subtract_baseline": (bool,),
        "count": (int,),
    },
    "gap": {"delta_omega": _NUM, "mu_ladder": (_LIST,), "baseline": (str,), "shifted": (int,), "im_threshold": _NUM},
    "noise": {"Q_values": (_LIST,)},
    "trajectory": {"stride": (int,), "phase_periods": _NUM, "spectrum_band": (_LIST,)},
    "tolerances": {"rtol": _NUM, "atol": _NUM, "ep_tol": _NUM, "dominance": _NUM},
}
_SWEEP_KEYS = {
    "axis": (str,), "start": _NUM, "stop": _NUM, "count": (int,), "spacing": (str,),
    "mu_ladder": (_LIST,), "at": (str, int, float),
}


@dataclass(frozen=True)
class SweepAxis:
    axis: str
    start: float
    stop: float
    count: int
    spacing: str = "linear"
    mu_ladder: tuple[float, ...] = (0.0,)
    at: str | float = "ep"

    def values(self):
        import numpy as np

        if self.spacing == "log":
            return np.logspace(math.log10(self.start), math.log10(self.stop), self.count)
        return np.linspace(self.start, self.stop, self.count)


@dataclass(frozen=True)
class ScenarioConfig:
    id: str
    operations: tuple[str, ...]
    output_dir: Path
    seed: int
    workers: int
    sections: dict[str, dict[str, Any]]
    sweeps: dict[str, tuple[SweepAxis, ...]]
    raw: dict[str, Any] = field(repr=False, default_factory=dict)
    source: str = ""

    def section(self, name: str) -> dict[str, Any]:
        return self.sections.get(name, {})

    def get(self, section: str, key: str, default=None):
        return self.sections.get(section, {}).get(key, default)


def _line_of(text: str, section: str | None, key: str | None) -> int | None:
    """Best-effort line number of ``key`` inside ``[section]`` (or of the header)."""
    if not text:
        return None
    current = None
    header = re.compile(r"^\s*\[\[?\s*([^\]]+?)\s*\]\]?\s*(#.*)?$")
    for i, line in enumerate(text.splitlines(), start=1):
        m = header.match(line)
        if m:
            current = m.group(1).replace('"', "")
            if key is None and current == section:
                return i
            continue
        if key is not None and (section is None or current == section):
            if re.match(rf"^\s*{re.escape(key)}\s*=", line):
                return i
    return None


def _check_type(value, types, section, key, text):
    ok = isinstance(value, types) and not (isinstance(value, bool) and bool not in types)
    if not ok:
        names = "/".join(t.__name__ for t in types)
        raise ConfigError(f"expected {names}, got {type(value).__name__}", f"{section}.{key}", _line_of(text, section, key))


def _check_keys(table: dict, allowed: dict, section: str, text: str):
    for key, value in table.items():
        if key not in allowed:
            raise ConfigError("unknown key", f"{section}.{key}", _line_of(text, section, key))
        _check_type(value, allowed[key], section, key, text)


def _parse_sweep(op: str, table: dict, text: str) -> SweepAxis:
    where = f"sweep.{op}"
    _check_keys(table, _SWEEP_KEYS, where, text)
    for req in ("axis", "start", "stop", "count"):
        if req not in table:
            raise ConfigError("missing required key", f"{where}.{req}", _line_of(text, where, None))
    axis = table["axis"]
    if axis not in AXES:
        raise ConfigError(f"axis must be one of {AXES}", f"{where}.axis", _line_of(text, where, "axis"))
    count = table["count"]
    if count < 2:
        raise ConfigError("sweep needs at least two points", f"{where}.count", _line_of(text, where, "count"))
    start, stop = float(table["start"]), float(table["stop"])
    if not (math.isfinite(start) and math.isfinite(stop)):
        raise ConfigError("sweep endpoints must be finite", f"{where}.start", _line_of(text, where, "start"))
    if start == stop:
        raise ConfigError("start and stop coincide (identity sweep)", f"{where}.stop", _line_of(text, where, "stop"))
    if start > stop:
        raise ConfigError("start must be below stop", f"{where}.start", _line_of(text, where, "start"))
    spacing = table.get("spacing", "linear")
    if spacing not in ("linear", "log"):
        raise ConfigError("spacing must be linear or log", f"{where}.spacing", _line_of(text, where, "spacing"))
    if spacing == "log" and start <= 0:
        raise ConfigError("log spacing needs positive endpoints", f"{where}.start", _line_of(text, where, "start"))
    ladder = tuple(float(x) for x in table.get("mu_ladder", [0.0]))
    at = table.get("at", "ep")
    if isinstance(at, str) and at not in ("ep", "reference"):
        raise ConfigError("at must be 'ep', 'reference' or a number", f"{where}.at", _line_of(text, where, "at"))
    return SweepAxis(axis, start, stop, int(count), spacing, ladder, at)


def parse_config(text: str, *, base_dir: Path | None = None) -> ScenarioConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        line = getattr(exc, "lineno", None)
        if line is None:
            m = re.search(r"line (\d+)", str(exc))
            line = int(m.group(1)) if m else None
        raise ConfigError(f"malformed TOML: {exc}", None, line) from exc

    version = raw.pop("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema version {version}", "schema_version", _line_of(text, None, "schema_version"))

    sections: dict[str, dict] = {}
    sweeps: dict[str, tuple[SweepAxis, ...]] = {}
    for name, table in raw.items():
        if name == "sweep":
            if not isinstance(table, dict):
                raise ConfigError("sweep must be a table", "sweep", _line_of(text, None, "sweep"))
            for op, spec in table.items():
                if op not in OPERATIONS:
                    raise ConfigError("unknown operation", f"sweep.{op}", _line_of(text, f"sweep.{op}", None))
                specs = spec if isinstance(spec, list) else [spec]
                sweeps[op] = tuple(_parse_sweep(op, s, text) for s in specs)
            continue
        if name not in _SCHEMA:
            raise ConfigError("unknown section", name, _line_of(text, name, None) or _line_of(text, None, name))
        if not isinstance(table, dict):
            raise ConfigError("expected a table", name, _line_of(text, None, name))
        _check_keys(table, _SCHEMA[name], name, text)
        sections[name] = dict(table)

    scen = sections.get("scenario")
    if not scen or "id" not in scen:
        raise ConfigError("missing required key", "scenario.id", _line_of(text, "scenario", None))
    ops = scen.get("operations")
    if not ops:
        raise ConfigError("at least one operation is required", "scenario.operations", _line_of(text, "scenario", "operations"))
    for op in ops:
        if op not in OPERATIONS:
            raise ConfigError(f"unknown operation {op!r}; choose from {OPERATIONS}", "scenario.operations",
                              _line_of(text, "scenario", "operations"))
    if "system" not in sections and "si" not in sections:
        raise ConfigError("a [system] or [si] section is required", "system")
    _check_semantics(sections, sweeps, ops, text)

    out = Path(scen.get("output_dir", f"runs/{scen['id']}"))
    if base_dir is not None and not out.is_absolute():
        out = base_dir / out
    workers = int(scen.get("workers", 0))
    if workers < 0:
        raise ConfigError("workers must be >= 0", "scenario.workers", _line_of(text, "scenario", "workers"))
    return ScenarioConfig(
        id=scen["id"],
        operations=tuple(ops),
        output_dir=out,
        seed=int(scen.get("seed", 0)),
        workers=workers,
        sections=sections,
        sweeps=sweeps,
        raw=tomllib.loads(text),
        source=text,
    )


def _check_semantics(sections, sweeps, ops, text):
    system = sections.get("system", {})
    si = sections.get("si", {})
    topo = system.get("topology", "binary")
    if topo not in ("binary", "ternary"):
        raise ConfigError("topology must be binary or ternary", "system.topology", _line_of(text, "system", "topology"))
    rates = ("gamma_m", "kappa", "g", "J")
    si_rates = [k for k in ("omega_m",) + rates if k in si]
    if si_rates:
        clash = [k for k in rates + ("omega",) if k in system]
        if clash:
            raise ConfigError("rates given in both [system] and [si]", f"system.{clash[0]}",
                              _line_of(text, "system", clash[0]))
        if si.get("rate_units", "hz") not in ("hz", "rad/s"):
            raise ConfigError("rate_units must be 'hz' or 'rad/s'", "si.rate_units", _line_of(text, "si", "rate_units"))
    elif "system" in sections:
        for key in rates:
            if key not in system:
                raise ConfigError("missing required key", f"system.{key}", _line_of(text, "system", None))
    amp = sections.get("amplitude", {})
    if amp.get("source", "simulate") not in ("simulate", "fixed"):
        raise ConfigError("source must be simulate or fixed", "amplitude.source", _line_of(text, "amplitude", "source"))
    if amp.get("source") == "fixed":
        for key in ("omega_l", "B"):
            if key not in amp:
                raise ConfigError("fixed amplitudes need this key", f"amplitude.{key}", _line_of(text, "amplitude", None))
    bracket = sections.get("ep", {}).get("bracket")
    if bracket is not None and (len(bracket) != 2 or not 0 <= bracket[0] < bracket[1]):
        raise ConfigError("bracket must be [lo, hi] with 0 <= lo < hi", "ep.bracket", _line_of(text, "ep", "bracket"))
    gap = sections.get("gap", {})
    if gap.get("baseline", "zero") not in ("zero", "same"):
        raise ConfigError("baseline must be zero or same", "gap.baseline", _line_of(text, "gap", "baseline"))
    for op in ops:
        if op == "eigen-sweep" and op not in sweeps:
            raise ConfigError("eigen-sweep needs a [sweep.eigen-sweep] table", "sweep.eigen-sweep")
        if op == "mass-gap" and op not in sweeps:
            raise ConfigError("mass-gap needs a [sweep.mass-gap] table", "sweep.mass-gap")
        if op == "noise-limit":
            if op not in sweeps:
                raise ConfigError("noise-limit needs a [sweep.noise-limit] table", "sweep.noise-limit")
            for key in ("omega_m", "mass", "temperature", "thickness"):
                if key not in si:
                    raise ConfigError("noise-limit needs this device field", f"si.{key}", _line_of(text, "si", None))
    for op, specs in sweeps.items():
        for s in specs:
            if op == "noise-limit" and s.axis != "bandwidth":
                raise ConfigError("noise-limit sweeps the bandwidth axis", f"sweep.{op}.axis", _line_of(text, f"sweep.{op}", "axis"))
            if op != "noise-limit" and s.axis == "bandwidth":
                raise ConfigError("bandwidth axis is only valid for noise-limit", f"sweep.{op}.axis",
                                  _line_of(text, f"sweep.{op}", "axis"))


def load_config(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from exc
    return parse_config(text)
