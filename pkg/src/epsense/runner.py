"""Scenario orchestration: build the model, run operations, persist results.

Every output is written under a temporary ``.part`` name, checksummed,
renamed, and finally the manifest is written atomically.  A directory
without ``manifest.json`` holds an incomplete run.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .config import ScenarioConfig, SweepAxis
from .dynamics import (
    DEFAULT_ATOL,
    DEFAULT_RTOL,
    DEFAULT_SAMPLE_DT,
    LimitCycle,
    default_initial_state,
    extract_limit_cycle,
    integrate,
    spectrum,
)
from .effective import Dressing, make_dressing, mirror_ends, self_consistent_amplitude
from .ep import (
    EP_TOL,
    default_fit_range,
    fit_power_law,
    frequency_splitting,
    locate_ep2,
    locate_ep3,
    mass_deposition_gap,
    max_pairwise_distance,
    noise_limit,
    splitting_sweep,
)
from .errors import EpsenseError, IoError, NoLimitCycle, ParameterError
from .model import BINARY, SiParams, SystemParams, hz_to_rad, to_dimensionless, validate
from .spectral import eigenvalues, track_branches

MANIFEST = "manifest.json"
PART = ".part"
TARGET_NOTE = (
    "coefficient depends on the limit-cycle amplitudes, whose drive conditions are not fully "
    "reported for the reference results; agreement within a factor of 2 is the soft target"
)


# --------------------------------------------------------------------------- tables


@dataclass
class Table:
    name: str
    columns: list[str]
    data: np.ndarray
    failures: list[dict] = field(default_factory=list)

    def __len__(self) -> int:
        return 0 if self.data is None else int(self.data.shape[0])

    def column(self, name: str) -> np.ndarray:
        return self.data[:, self.columns.index(name)]


@dataclass(frozen=True)
class RunManifest:
    path: Path
    content: dict

    @property
    def status(self) -> str:
        return self.content["status"]

    @property
    def outputs(self) -> dict:
        return self.content["outputs"]


def _clean(obj):
    """JSON-safe copy: tuples to lists, non-finite floats to None, numpy scalars to Python."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, complex):
        return {"re": _clean(obj.real), "im": _clean(obj.imag)}
    if isinstance(obj, Path):
        return str(obj)
    return obj


def _dumps(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def emit_plot_data(table: Table, style: dict, directory: str | Path, *, temp_suffix: str = "") -> list[Path]:
    """Write ``<name>.csv`` and ``<name>.recipe.json``; return the final paths.

    With ``temp_suffix`` the files land under the suffixed name and the caller
    is responsible for renaming them.
    """
    if table.data is None or len(table) == 0:
        raise IoError(f"EmptyTable: {table.name!r} has no rows")
    directory = Path(directory)
    csv_path = directory / f"{table.name}.csv"
    recipe_path = directory / f"{table.name}.recipe.json"
    recipe = {
        "data": csv_path.name,
        "x": style.get("x", table.columns[0]),
        "y": list(style.get("y", table.columns[1:2])),
        "xlabel": style.get("xlabel", style.get("x", table.columns[0])),
        "ylabel": style.get("ylabel", ""),
        "xscale": style.get("xscale", "linear"),
        "yscale": style.get("yscale", "linear"),
        "title": style.get("title", table.name),
    }
    for extra in ("groups", "note", "linestyles"):
        if extra in style:
            recipe[extra] = style[extra]
    missing = [c for c in [recipe["x"], *recipe["y"]] if c not in table.columns]
    if missing:
        raise IoError(f"recipe references unknown columns {missing}")
    try:
        directory.mkdir(parents=True, exist_ok=True)
        np.savetxt(
            str(csv_path) + temp_suffix, table.data, delimiter=",", header=",".join(table.columns),
            comments="", fmt="%.16e",
        )
        Path(str(recipe_path) + temp_suffix).write_text(_dumps(recipe))
    except OSError as exc:
        raise IoError(f"cannot write {table.name}: {exc}") from exc
    return [csv_path, recipe_path]


# --------------------------------------------------------------------------- model construction


def build_params(config: ScenarioConfig) -> tuple[SystemParams, SiParams | None, tuple[str, ...]]:
    system = config.section("system")
    si_sec = config.section("si")
    topology = system.get("topology", BINARY)
    n_res = 2 if topology == BINARY else 3
    delta = tuple(float(d) for d in system.get("delta", (-1.0, 1.0)))
    alpha_in = float(system.get("alpha_in", 0.0))
    mu_m = float(system.get("mu_m", 0.0))
    si = None
    if si_sec:
        scale = (lambda f: hz_to_rad(f)) if si_sec.get("rate_units", "hz") == "hz" else (lambda f: f)
        rates = {k: scale(float(si_sec[k])) for k in ("omega_m", "gamma_m", "kappa", "g", "J") if k in si_sec}
        extras = {k: float(si_sec[k]) for k in ("mass", "temperature", "thickness", "Q", "bandwidth") if k in si_sec}
        si = SiParams(**rates, **extras)
    caught: list[str] = []
    if si is not None and si.gamma_m is not None:
        with warnings.catch_warnings(record=True) as rec:
            warnings.simplefilter("always")
            params = to_dimensionless(si, alpha_in=alpha_in, mu_m=mu_m, delta=delta, topology=topology)
        caught = [str(w.message) for w in rec]
    else:
        params = SystemParams(
            topology=topology,
            omega=tuple(float(w) for w in system.get("omega", (1.0,) * n_res)),
            gamma_m=float(system["gamma_m"]),
            kappa=float(system["kappa"]),
            g=float(system["g"]),
            J=float(system["J"]),
            delta=delta,
            alpha_in=alpha_in,
            mu_m=mu_m,
        )
    checked = validate(params)
    return params, si, tuple(caught) + tuple(checked.warnings)


class _Context:
    """State shared between the operations of one run."""

    def __init__(self, config: ScenarioConfig):
        self.config = config
        self.params, self.si, self.warnings = build_params(config)
        tol = config.section("tolerances")
        self.rtol = float(tol.get("rtol", DEFAULT_RTOL))
        self.atol = float(tol.get("atol", DEFAULT_ATOL))
        self.ep_tol = float(tol.get("ep_tol", EP_TOL))
        self.dominance = float(tol.get("dominance", 5.0))
        amp = config.section("amplitude")
        self.spring = bool(amp.get("optical_spring", True))
        self.use_centers = bool(amp.get("use_centers", True))
        self.mirror = bool(amp.get("mirror_ends", False))
        self.alpha_ref = float(amp.get("alpha_ref", self.params.alpha_in))
        self._dressing: Dressing | None = None
        self._ep = None
        self.records: dict[str, Any] = {}
        self.failures: list[dict] = []
        self.tables: list[tuple[Table, dict]] = []
        self.documents: dict[str, dict] = {}

    @property
    def workers(self) -> int:
        return self.config.workers or (os.cpu_count() or 1)

    def initial_state(self, params: SystemParams) -> np.ndarray:
        beta0 = self.config.get("amplitude", "beta0", [0.1, 0.0])
        return default_initial_state(params, complex(beta0[0], beta0[1]))

    def dressing(self) -> Dressing:
        if self._dressing is not None:
            return self._dressing
        amp = self.config.section("amplitude")
        p = self.params
        if amp.get("source", "simulate") == "fixed":
            n = p.n_resonators
            bre = amp.get("beta_bar_re", [0.0] * n)
            bim = amp.get("beta_bar_im", [0.0] * n)
            if len(amp["B"]) != n or len(bre) != n or len(bim) != n:
                raise ParameterError(f"fixed amplitudes need {n} entries per list")
            cycle = LimitCycle(float(amp["omega_l"]), tuple(float(b) for b in amp["B"]),
                               tuple(complex(r, i) for r, i in zip(bre, bim)))
        else:
            if not self.alpha_ref > 0:
                raise ParameterError("amplitude.alpha_ref (or system.alpha_in) must be positive")
            p_ref = p.with_(alpha_in=self.alpha_ref)
            state = self_consistent_amplitude(
                p_ref,
                t_end=float(amp.get("t_end", 2.0e5)),
                sample_dt=float(amp.get("sample_dt", DEFAULT_SAMPLE_DT)),
                init=self.initial_state(p_ref),
                spring=self.spring,
                use_centers=self.use_centers,
                refine=bool(amp.get("refine", False)),
                rtol=self.rtol,
                atol=self.atol,
            )
            if state.at_rest:
                raise NoLimitCycle(f"reference drive {self.alpha_ref:g} settles to rest; no oscillation to dress")
            cycle = state.cycle
            self.records["reference_cycle"] = cycle.as_dict()
        if self.mirror:
            cycle = mirror_ends(cycle)
        self._dressing = make_dressing(p, cycle, spring=self.spring, use_centers=self.use_centers)
        self.records["dressing"] = {
            "unit_spring": self._dressing.unit_spring,
            "unit_damping": self._dressing.unit_damping,
            "epsilon": self._dressing.epsilon,
            "delta_prime": self._dressing.delta_prime,
            "B": cycle.B,
            "omega_l": cycle.omega_l,
        }
        return self._dressing

    def bracket(self) -> tuple[float, float]:
        b = self.config.get("ep", "bracket")
        return (float(b[0]), float(b[1])) if b else (0.5 * self.alpha_ref, 2.0 * self.alpha_ref)

    def ep(self):
        if self._ep is None:
            d = self.dressing()
            scan = int(self.config.get("ep", "scan", 65))
            if self.params.topology == BINARY:
                self._ep = locate_ep2(d, self.bracket(), scan=scan, tol=self.ep_tol)
            else:
                self._ep = locate_ep3(d, self.bracket(), scan=scan, tol=self.ep_tol)
        return self._ep


# --------------------------------------------------------------------------- sweeps


def _eigen_point(args):
    """Worker: one (alpha_in, mu_m) point.  Returns (values, row tail) or an error record."""
    dressing, alpha, mu, ep_tol = args
    try:
        es = eigenvalues(dressing.hamiltonian(alpha, mu))
        oscs = dressing.oscillators(alpha, mu)
        pos = es.positive()
        sep = max_pairwise_distance(pos)
        split = frequency_splitting(pos)
        per = []
        for o, b in zip(oscs, dressing.cycle.B):
            per += [o.omega_eff, o.gamma_eff, o.spring, o.damping, o.theta, b]
        tail = [split, sep, float(sep < ep_tol), *per, dressing.cycle.omega_l]
        return es.values, tail, None
    except EpsenseError as exc:
        return None, None, {"error": type(exc).__name__, "message": str(exc)}


def _pool_map(fn, items: Sequence, workers: int):
    if workers > 1 and len(items) >= 16:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * workers))))
    return [fn(it) for it in items]


def sweep(config: ScenarioConfig, axis: SweepAxis, *, context: _Context | None = None,
          mu_m: float | None = None, alpha_in: float | None = None, name: str | None = None) -> Table:
    """Eigen-table along ``axis`` with rows in axis order.

    For an ``alpha_in`` axis the gravity strength is ``mu_m`` (default 0); for
    a ``mu_m`` axis the drive is ``alpha_in`` (default: from ``axis.at``).
    Failed points keep their row with NaNs and a nonzero status.
    """
    ctx = context or _Context(config)
    d = ctx.dressing()
    xs = axis.values()
    if axis.axis == "alpha_in":
        mu = 0.0 if mu_m is None else float(mu_m)
        points = [(d, float(x), mu, ctx.ep_tol) for x in xs]
    elif axis.axis == "mu_m":
        if alpha_in is None:
            at = axis.at
            alpha_in = ctx.ep().alpha_star if at == "ep" else ctx.alpha_ref if at == "reference" else float(at)
        points = [(d, float(alpha_in), float(x), ctx.ep_tol) for x in xs]
    else:
        raise ParameterError(f"eigen tables cannot sweep {axis.axis}")
    results = _pool_map(_eigen_point, points, ctx.workers)

    n = ctx.params.n_resonators
    ok = [i for i, r in enumerate(results) if r[2] is None]
    failures = [{"axis": axis.axis, "value": float(xs[i]), **results[i][2]} for i in range(len(xs)) if results[i][2]]
    branches = np.full((len(xs), 2 * n), np.nan + 0j)
    order = np.arange(2 * n)
    if len(ok) >= 2:
        tracked = track_branches(xs[ok], [results[i][0] for i in ok])
        phys = tracked.positive_branches()
        mirror = np.setdiff1d(np.arange(2 * n), phys)
        mirror = mirror[np.argsort(tracked.branches[:, mirror].real.mean(axis=0), kind="stable")]
        order = np.concatenate([phys, mirror])
        branches[ok] = tracked.branches[:, order]
    elif len(ok) == 1:
        branches[ok[0]] = results[ok[0]][0]

    cols = ["axis", "alpha_in", "mu_m", "status"]
    labels = [f"lambda{k + 1}" for k in range(n)] + [f"mirror{k + 1}" for k in range(n)]
    for lab in labels:
        cols += [f"re_{lab}", f"im_{lab}"]
    cols += ["delta_omega", "separation", "certified"]
    for j in range(n):
        cols += [f"omega_eff{j + 1}", f"gamma_eff{j + 1}", f"spring{j + 1}", f"damping{j + 1}",
                 f"theta{j + 1}", f"B{j + 1}"]
    cols += ["omega_l"]
    width = len(cols)
    data = np.full((len(xs), width), np.nan)
    for i, (pt, res) in enumerate(zip(points, results)):
        data[i, 0] = xs[i]
        data[i, 1] = pt[1]
        data[i, 2] = pt[2]
        data[i, 3] = 0.0 if res[2] is None else 1.0
        data[i, 4:4 + 4 * n] = np.column_stack([branches[i].real, branches[i].imag]).ravel()
        if res[1] is not None:
            data[i, 4 + 4 * n:] = res[1]
    label = name or f"eigen_{axis.axis}"
    return Table(label, cols, data, failures)


# --------------------------------------------------------------------------- operations


def _op_simulate(ctx: _Context):
    cfg = ctx.config
    amp = cfg.section("amplitude")
    trj = cfg.section("trajectory")
    p = ctx.params
    if not p.alpha_in > 0:
        raise ParameterError("simulate needs system.alpha_in > 0")
    t_end = float(amp.get("t_end", 2.0e5))
    dt = float(amp.get("sample_dt", DEFAULT_SAMPLE_DT))
    traj = integrate(p, ctx.initial_state(p), t_end, sample_dt=dt, rtol=ctx.rtol, atol=ctx.atol)
    cycle = extract_limit_cycle(traj, dominance_threshold=ctx.dominance)
    stride = int(trj.get("stride", 20))
    names, data = traj.columns()
    n = p.n_resonators
    beta_cols = [f"re_beta{j + 1}" for j in range(n)]
    ctx.tables.append((Table("trajectory", names, data[::stride]),
                       {"x": "t", "y": beta_cols, "xlabel": "t (1/omega_m)", "ylabel": "Re beta_j"}))

    half = len(traj) // 2
    band = trj.get("spectrum_band", [0.9, 1.1])
    freqs, mags = None, []
    for j in range(n):
        f, m = spectrum(traj.beta[half:, j], dt)
        freqs = f
        mags.append(m)
    sel = (freqs >= band[0]) & (freqs <= band[1])
    order = np.argsort(freqs[sel])
    spec = np.column_stack([freqs[sel][order]] + [m[sel][order] for m in mags])
    ctx.tables.append((Table("spectrum", ["omega"] + [f"amp{j + 1}" for j in range(n)], spec),
                       {"x": "omega", "y": [f"amp{j + 1}" for j in range(n)], "xlabel": "omega (omega_m)",
                        "ylabel": "|FFT beta_j|", "yscale": "log"}))

    periods = float(trj.get("phase_periods", 20))
    t_span = periods * 2 * math.pi / cycle.omega_l
    tail = traj.times >= traj.times[-1] - t_span
    ph_cols, ph = ["t"], [traj.times[tail]]
    for j in range(n):
        ph_cols += [f"re_beta{j + 1}", f"im_beta{j + 1}"]
        ph += [traj.beta[tail, j].real, traj.beta[tail, j].imag]
    ctx.tables.append((Table("phase_space", ph_cols, np.column_stack(ph)),
                       {"x": "re_beta1", "y": ["im_beta1"], "xlabel": "Re beta_j", "ylabel": "Im beta_j",
                        "groups": [[f"re_beta{j + 1}", f"im_beta{j + 1}"] for j in range(n)]}))
    ctx.documents["limit_cycle"] = {
        **cycle.as_dict(),
        "alpha_in": p.alpha_in,
        "locked": True,
        "dominance_threshold": ctx.dominance,
        "peak_frequencies": cycle.peak_frequencies,
        "lock_spread_bins": (max(cycle.peak_frequencies) - min(cycle.peak_frequencies)) / cycle.bin_width,
        "n_accepted": traj.n_accepted,
        "n_rejected": traj.n_rejected,
    }


def _ep_document(ctx: _Context) -> dict:
    ep = ctx.ep()
    doc = {"alpha_star": ep.alpha_star, "certified": ep.certified, "bracket": ep.bracket,
           "tolerance": ctx.ep_tol, "topology": ctx.params.topology}
    if ctx.params.topology == BINARY:
        doc.update(discriminant=ep.discriminant, discriminant_abs=abs(ep.discriminant),
                   separation=ep.separation, local_minimum=ep.local_minimum)
    else:
        doc.update(objective=ep.objective, second_difference=ep.second_difference)
    d = ctx.dressing()
    doc["oscillators"] = [
        {"omega_eff": o.omega_eff, "gamma_eff": o.gamma_eff, "spring": o.spring, "damping": o.damping}
        for o in d.oscillators(ep.alpha_star, 0.0)
    ]
    return doc


def _op_ep_locate(ctx: _Context):
    ctx.documents["ep"] = _ep_document(ctx)


def _eigen_style(table: Table, n: int, axis: str) -> dict:
    return {
        "x": "axis",
        "y": [f"re_lambda{k + 1}" for k in range(n)] + [f"im_lambda{k + 1}" for k in range(n)],
        "xlabel": f"{axis}",
        "ylabel": "Re / Im lambda (omega_m)",
        "xscale": "log" if axis == "mu_m" else "linear",
    }


def _op_eigen_sweep(ctx: _Context):
    n = ctx.params.n_resonators
    for spec in ctx.config.sweeps["eigen-sweep"]:
        if spec.axis == "alpha_in":
            for k, mu in enumerate(spec.mu_ladder):
                t = sweep(ctx.config, spec, context=ctx, mu_m=mu, name=f"eigen_alpha_in_mu{k}")
                ctx.failures += t.failures
                style = _eigen_style(t, n, "alpha_in")
                style["note"] = f"mu_m = {mu!r}"
                ctx.tables.append((t, style))
        else:
            t = sweep(ctx.config, spec, context=ctx, name="eigen_mu_m")
            ctx.failures += t.failures
            ctx.tables.append((t, _eigen_style(t, n, "mu_m")))


def _op_splitting_fit(ctx: _Context):
    cfg = ctx.config
    fit_sec = cfg.section("fit")
    d = ctx.dressing()
    ep = ctx.ep()
    detune = float(fit_sec.get("detune", 1.0))
    alpha = detune * ep.alpha_star
    at_ep = detune == 1.0
    subtract = bool(fit_sec.get("subtract_baseline", not at_ep))
    specs = [s for s in cfg.sweeps.get("splitting-fit", ()) if s.axis == "mu_m"]
    if specs:
        mus = specs[0].values()
        range_source = "config"
    else:
        lo, hi = default_fit_range(d)
        mus = np.logspace(math.log10(lo), math.log10(hi), int(fit_sec.get("count", 31)))
        range_source = "default"
    pair = fit_sec.get("pair")
    pair = tuple(pair) if pair else None
    sw = splitting_sweep(d, alpha, mus, pair=pair, certify_tol=ctx.ep_tol, require_certified=at_ep,
                         subtract_baseline=subtract)
    cols = ["mu_m", "delta_omega"]
    data = [sw.mu_m, sw.splitting]
    for k in range(sw.eigenvalues.shape[1]):
        cols += [f"re_lambda{k + 1}", f"im_lambda{k + 1}"]
        data += [sw.eigenvalues[:, k].real, sw.eigenvalues[:, k].imag]
    ctx.tables.append((Table("splitting", cols, np.column_stack(data)),
                       {"x": "mu_m", "y": ["delta_omega"], "xlabel": "mu m (1/omega_m)",
                        "ylabel": "Delta omega (omega_m)", "xscale": "log", "yscale": "log"}))
    doc = {
        "alpha_in": alpha,
        "alpha_star": ep.alpha_star,
        "detune": detune,
        "baseline_separation": sw.baseline_separation,
        "subtract_baseline": subtract,
        "pair": pair,
        "range_source": range_source,
        "free": fit_power_law(sw.mu_m, sw.splitting).as_dict(),
    }
    if "exponent" in fit_sec:
        fixed = fit_power_law(sw.mu_m, sw.splitting, float(fit_sec["exponent"]))
        doc["fixed"] = fixed.as_dict()
        if "target" in fit_sec:
            target = float(fit_sec["target"])
            ratio = fixed.coefficient / target
            doc["target"] = {"value": target, "ratio": ratio, "within_factor_2": 0.5 <= ratio <= 2.0,
                             "note": TARGET_NOTE}
            ctx.records["coefficient_target"] = doc["target"]
    ctx.documents["fit"] = doc


def _op_mass_gap(ctx: _Context):
    cfg = ctx.config
    gap = cfg.section("gap")
    d = ctx.dressing()
    dw = float(gap.get("delta_omega", 1e-2))
    ladder = [float(m) for m in gap.get("mu_ladder", [0.0])]
    baseline = "same" if gap.get("baseline", "zero") == "same" else 0.0
    shifted = int(gap.get("shifted", 1))
    threshold = float(gap.get("im_threshold", 0.1))
    for spec in cfg.sweeps["mass-gap"]:
        if spec.axis != "alpha_in":
            raise ParameterError("mass-gap sweeps the alpha_in axis")
        xs = spec.values()
        for k, mu in enumerate(ladder):
            rows = []
            for a in xs:
                try:
                    cp, cm = mass_deposition_gap(d, float(a), dw, mu, baseline_mu=baseline, shifted=shifted)
                    rows.append([a, mu, 0.0, cp.real, cp.imag, cm.real, cm.imag])
                except EpsenseError as exc:
                    ctx.failures.append({"axis": "alpha_in", "value": float(a), "error": type(exc).__name__,
                                         "message": str(exc)})
                    rows.append([a, mu, 1.0] + [math.nan] * 4)
            cols = ["alpha_in", "mu_m", "status", "re_chi_plus", "im_chi_plus", "re_chi_minus", "im_chi_minus"]
            ctx.tables.append((Table(f"gap_mu{k}", cols, np.array(rows)),
                               {"x": "alpha_in", "y": ["re_chi_plus", "im_chi_plus"], "xlabel": "alpha_in",
                                "ylabel": "chi (omega_m)", "note": f"mu_m = {mu!r}, delta_omega = {dw!r}"}))
    alpha = ctx.ep().alpha_star
    at = [mass_deposition_gap(d, alpha, dw, mu, baseline_mu=baseline, shifted=shifted) for mu in ladder]
    order = np.argsort(ladder, kind="stable")
    re_p = np.array([at[i][0].real for i in order])
    im_p = np.array([at[i][0].imag for i in order])
    ref = im_p[0]
    im_change = float(np.max(np.abs(im_p - ref)) / abs(ref)) if ref != 0 else math.inf
    ctx.documents["gap_summary"] = {
        "alpha_star": alpha,
        "delta_omega": dw,
        "baseline": "same" if baseline == "same" else "zero",
        "mu_ladder": [ladder[i] for i in order],
        "chi_plus": [at[i][0] for i in order],
        "chi_minus": [at[i][1] for i in order],
        "re_chi_plus_monotone_increasing": bool(np.all(np.diff(re_p) > 0)),
        "im_chi_plus_max_relative_change": im_change,
        "im_threshold": threshold,
        "im_within_threshold": im_change < threshold,
    }


def _op_noise_limit(ctx: _Context):
    si = ctx.si
    q_values = [float(q) for q in ctx.config.get("noise", "Q_values", [si.Q])]
    if any(q is None for q in q_values):
        raise ParameterError("noise-limit needs si.Q or noise.Q_values")
    base = {k: v for k, v in si.as_dict().items() if k not in ("Q", "bandwidth")}
    for spec in ctx.config.sweeps["noise-limit"]:
        xs = spec.values()
        cols, data = ["bandwidth"], [xs]
        for q in q_values:
            dw = np.array([noise_limit(SiParams(**base, Q=q, bandwidth=float(b))).delta_omega_min for b in xs])
            cols += [f"dw_Q{q:g}", f"dw_over_2pi_Q{q:g}"]
            data += [dw, dw / (2 * math.pi)]
        ctx.tables.append((Table("noise", cols, np.column_stack(data)),
                           {"x": "bandwidth", "y": [f"dw_Q{q:g}" for q in q_values], "xlabel": "Delta f (Hz)",
                            "ylabel": "Delta omega_min", "xscale": "log", "yscale": "log"}))
    if si.bandwidth is not None:
        budgets = [noise_limit(SiParams(**base, Q=q, bandwidth=si.bandwidth)).as_dict() for q in q_values]
        ctx.documents["noise"] = {"budgets": budgets, "omega_n": "omega_m (rad/s)",
                                  "units": "delta_omega_min in 1/s, also reported divided by 2 pi"}


_OPS = {
    "simulate": _op_simulate,
    "ep-locate": _op_ep_locate,
    "eigen-sweep": _op_eigen_sweep,
    "splitting-fit": _op_splitting_fit,
    "mass-gap": _op_mass_gap,
    "noise-limit": _op_noise_limit,
}


# --------------------------------------------------------------------------- run


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _assumptions(ctx: _Context) -> dict:
    cfg = ctx.config
    amp = cfg.section("amplitude")
    flags = {
        "optical_spring": ctx.spring,
        "centers_in_detuning": ctx.use_centers,
        "mirror_ends": ctx.mirror,
        "amplitude_source": amp.get("source", "simulate"),
        "alpha_ref": ctx.alpha_ref,
        "omega_n": "omega_m",
        "baseline": cfg.get("gap", "baseline", "zero"),
        "initial_state": {"beta0": amp.get("beta0", [0.1, 0.0]), "cavities": "empty"},
    }
    defaults = {}
    for sec, key in (("amplitude", "alpha_ref"), ("amplitude", "beta0"), ("amplitude", "t_end"),
                     ("amplitude", "sample_dt"), ("ep", "bracket")):
        defaults[f"{sec}.{key}"] = "config" if key in cfg.section(sec) else "default"
    flags["provenance"] = defaults
    flags["pinned_defaults"] = list(cfg.get("scenario", "pinned", []))
    return flags


def run(config: ScenarioConfig, *, output_dir: str | Path | None = None) -> RunManifest:
    """Execute every operation of ``config`` and persist the results.

    Numerical errors propagate (annotated with the scenario id); failures of
    individual sweep points are recorded and mark the run as degraded.
    """
    out = Path(output_dir) if output_dir is not None else Path(config.output_dir)
    started = _now()
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create {out}: {exc}") from exc
    stale = out / MANIFEST
    if stale.exists():
        stale.unlink()

    ctx = _Context(config)
    for op in config.operations:
        try:
            _OPS[op](ctx)
        except EpsenseError as exc:
            exc.args = (f"scenario {config.id!r}, operation {op}: {exc}",)
            raise

    written: list[Path] = []
    for table, style in ctx.tables:
        written += emit_plot_data(table, style, out, temp_suffix=PART)
    for name, doc in ctx.documents.items():
        path = out / f"{name}.json"
        Path(str(path) + PART).write_text(_dumps(doc))
        written.append(path)

    outputs = {}
    for path in written:
        part = Path(str(path) + PART)
        outputs[path.name] = {"sha256": _sha256(part), "bytes": part.stat().st_size}
        os.replace(part, path)

    content = {
        "scenario": config.id,
        "operations": list(config.operations),
        "status": "degraded" if ctx.failures else "ok",
        "failures": ctx.failures,
        "code_version": __version__,
        "schema_version": 1,
        "seed": config.seed,
        "started_utc": started,
        "finished_utc": _now(),
        "config": config.raw,
        "params": ctx.params.as_dict(),
        "warnings": list(ctx.warnings),
        "assumptions": _assumptions(ctx),
        "records": ctx.records,
        "outputs": outputs,
    }
    tmp = out / (MANIFEST + PART)
    tmp.write_text(_dumps(content))
    os.replace(tmp, out / MANIFEST)
    return RunManifest(out / MANIFEST, _clean(content))
