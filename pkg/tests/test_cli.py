import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from epsense import runner
from epsense.cli import EXIT_CONFIG, EXIT_DEGRADED, EXIT_NUMERICAL, EXIT_OK, load_preset, main, preset_names
from epsense.config import parse_config
from epsense.errors import ConfigError, ConvergenceFailure, IoError
from epsense.runner import Table, emit_plot_data, run, sweep

FIXED = """
schema_version = 1

[scenario]
id = "fixed"
operations = {ops}

[system]
topology = "binary"
gamma_m = 1e-3
kappa = 0.1
g = 2.5e-4
J = 2.2e-2
delta = [-1.0, 1.0]

[amplitude]
source = "fixed"
alpha_ref = 440.0
omega_l = 1.00215
B = [478.0, 495.8]
beta_bar_re = [29.7, 32.1]
beta_bar_im = [0.0, 0.0]
optical_spring = false

[ep]
bracket = [300.0, 600.0]

[[sweep.eigen-sweep]]
axis = "alpha_in"
start = 300.0
stop = 600.0
count = 61
spacing = "linear"
mu_ladder = [0.0, 4.4e-9]

[sweep.splitting-fit]
axis = "mu_m"
start = 1e-10
stop = 1e-7
count = 16
spacing = "log"

[fit]
exponent = 0.5
target = 30.12
"""


def fixed_config(tmp_path, ops='["ep-locate", "eigen-sweep", "splitting-fit"]', extra=""):
    text = FIXED.format(ops=ops) + extra
    path = tmp_path / "scenario.toml"
    path.write_text(text)
    return path, parse_config(text)


# ---------------------------------------------------------------- configuration


def test_all_presets_parse():
    assert preset_names() == [f"fig{k}" for k in range(2, 9)]
    for name in preset_names():
        cfg = load_preset(name)
        assert cfg.id == name and cfg.operations


def test_fig2_preset_pins_the_gravity_ladder():
    cfg = load_preset("fig2")
    (spec,) = cfg.sweeps["eigen-sweep"]
    assert spec.mu_ladder == pytest.approx((0.0, 0.02 * 2.2e-7, 0.02 * 2.2e-6))
    assert cfg.get("system", "J") == 2.2e-2


def test_fig7_preset_fixes_cube_root():
    cfg = load_preset("fig7")
    assert cfg.get("fit", "exponent") == pytest.approx(1 / 3)
    assert cfg.get("system", "J") == 2.2e-3 and cfg.get("system", "topology") == "ternary"


def _bad(text, tmp_path):
    with pytest.raises(ConfigError) as exc:
        parse_config(FIXED.format(ops='["eigen-sweep"]').replace(*text))
    return exc.value


def test_unknown_key_reports_line(tmp_path):
    err = _bad(("kappa = 0.1", "kappa = 0.1\nkapa = 0.2"), tmp_path)
    assert err.field == "system.kapa"
    text = FIXED.format(ops='["eigen-sweep"]').replace("kappa = 0.1", "kappa = 0.1\nkapa = 0.2")
    assert text.splitlines()[err.line - 1].startswith("kapa")


def test_single_point_sweep_rejected(tmp_path):
    err = _bad(("count = 61", "count = 1"), tmp_path)
    assert err.field == "sweep.eigen-sweep.count"


def test_identity_sweep_rejected(tmp_path):
    err = _bad(("stop = 600.0\ncount = 61", "stop = 300.0\ncount = 61"), tmp_path)
    assert "coincide" in str(err)


def test_log_spacing_needs_positive_start(tmp_path):
    with pytest.raises(ConfigError):
        parse_config(FIXED.format(ops='["splitting-fit"]').replace("start = 1e-10", "start = 0.0"))


def test_unknown_operation_and_section():
    with pytest.raises(ConfigError):
        parse_config(FIXED.format(ops='["plot"]'))
    with pytest.raises(ConfigError) as exc:
        parse_config(FIXED.format(ops='["ep-locate"]') + "\n[plotting]\nx = 1\n")
    assert exc.value.field == "plotting"


def test_malformed_toml_has_line():
    with pytest.raises(ConfigError) as exc:
        parse_config('[scenario]\nid = "x"\noperations = [\n')
    assert exc.value.line is not None


def test_wrong_type():
    with pytest.raises(ConfigError) as exc:
        parse_config(FIXED.format(ops='["ep-locate"]').replace("kappa = 0.1", 'kappa = "0.1"'))
    assert exc.value.field == "system.kappa"


# ---------------------------------------------------------------- sweeps and tables


def test_alpha_sweep_collapses_at_ep(tmp_path):
    _, cfg = fixed_config(tmp_path)
    ctx = runner._Context(cfg)
    table = sweep(cfg, cfg.sweeps["eigen-sweep"][0], context=ctx)
    alpha_star = ctx.ep().alpha_star
    x = table.column("axis")
    dw = table.column("delta_omega")
    assert np.all(np.diff(x) > 0)
    below, above = dw[x < alpha_star], dw[x > alpha_star]
    assert np.all(np.diff(below) < 0)  # splitting closes towards the EP
    assert np.all(above < 1e-12)  # broken phase: real parts coincide
    im1, im2 = table.column("im_lambda1"), table.column("im_lambda2")
    assert np.all(np.abs(im1 - im2)[x < alpha_star] < 1e-12)
    assert np.all(np.abs(im1 - im2)[x > alpha_star] > 0)


def test_mu_sweep_feeds_square_root_fit(tmp_path):
    path, cfg = fixed_config(tmp_path)
    m = run(cfg, output_dir=tmp_path / "out")
    fit = json.loads((tmp_path / "out" / "fit.json").read_text())
    assert fit["free"]["exponent"] == pytest.approx(0.5, abs=0.03)
    assert m.status == "ok"


def test_parallel_sweep_keeps_axis_order(tmp_path):
    _, cfg = fixed_config(tmp_path)
    serial = sweep(cfg, cfg.sweeps["eigen-sweep"][0], context=runner._Context(cfg))
    import dataclasses

    par_cfg = dataclasses.replace(cfg, workers=2)
    parallel = sweep(par_cfg, cfg.sweeps["eigen-sweep"][0], context=runner._Context(par_cfg))
    assert np.array_equal(serial.data, parallel.data, equal_nan=True)


def test_emit_plot_data(tmp_path):
    t = Table("splitting", ["mu_m", "delta_omega"], np.array([[1e-10, 2e-5], [1e-9, 6.3e-5]]))
    files = emit_plot_data(t, {"x": "mu_m", "y": ["delta_omega"], "xscale": "log", "yscale": "log"}, tmp_path)
    csv, recipe = files
    lines = csv.read_text().splitlines()
    assert lines[0] == "mu_m,delta_omega"
    assert lines[1] == "1.0000000000000000e-10,2.0000000000000002e-05"
    r = json.loads(recipe.read_text())
    assert r["xscale"] == r["yscale"] == "log" and r["data"] == "splitting.csv"


def test_emit_empty_table(tmp_path):
    with pytest.raises(IoError, match="EmptyTable"):
        emit_plot_data(Table("x", ["a"], np.empty((0, 1))), {}, tmp_path)


# ---------------------------------------------------------------- runs, manifests, exit codes


def test_manifest_lists_every_output(tmp_path):
    _, cfg = fixed_config(tmp_path)
    out = tmp_path / "out"
    m = run(cfg, output_dir=out)
    files = {p.name for p in out.iterdir()} - {"manifest.json"}
    assert files == set(m.outputs)
    for name, meta in m.outputs.items():
        assert hashlib.sha256((out / name).read_bytes()).hexdigest() == meta["sha256"]
    assert not list(out.glob("*.part"))
    doc = json.loads((out / "manifest.json").read_text())
    assert doc["assumptions"]["optical_spring"] is False
    assert doc["assumptions"]["baseline"] == "zero"
    assert doc["records"]["coefficient_target"]["note"]


def test_rerun_is_bit_identical(tmp_path):
    _, cfg = fixed_config(tmp_path)
    a = run(cfg, output_dir=tmp_path / "a")
    b = run(cfg, output_dir=tmp_path / "b")
    assert {k: v["sha256"] for k, v in a.outputs.items()} == {k: v["sha256"] for k, v in b.outputs.items()}


def test_failed_run_leaves_no_manifest(tmp_path):
    path, _ = fixed_config(tmp_path, ops='["ep-locate"]')
    text = path.read_text().replace("bracket = [300.0, 600.0]", "bracket = [10.0, 20.0]")
    path.write_text(text)
    out = tmp_path / "out"
    (out).mkdir()
    (out / "manifest.json").write_text("{}")  # stale marker from an earlier run
    assert main(["run", str(path), "-o", str(out)]) == EXIT_NUMERICAL
    assert not (out / "manifest.json").exists()


def test_exit_codes(tmp_path, capsys):
    path, _ = fixed_config(tmp_path)
    assert main(["validate", str(path)]) == EXIT_OK
    assert main(["run", str(path), "-o", str(tmp_path / "ok")]) == EXIT_OK
    bad = tmp_path / "bad.toml"
    bad.write_text(path.read_text().replace("count = 61", "count = 1"))
    assert main(["validate", str(bad)]) == EXIT_CONFIG
    assert main(["run", str(bad)]) == EXIT_CONFIG
    assert main(["preset", "fig99"]) == EXIT_CONFIG
    assert main(["list-presets"]) == EXIT_OK
    assert "fig7" in capsys.readouterr().out


def test_partial_failure_marks_run_degraded(tmp_path, monkeypatch):
    real = runner.eigenvalues

    def flaky(H, **kw):
        if abs(H.matrix[0, 0].imag) > 0.03:
            raise ConvergenceFailure("injected")
        return real(H, **kw)

    monkeypatch.setattr(runner, "eigenvalues", flaky)
    path, _ = fixed_config(tmp_path, ops='["eigen-sweep"]')
    out = tmp_path / "out"
    assert main(["run", str(path), "-o", str(out), "--workers", "1"]) == EXIT_DEGRADED
    doc = json.loads((out / "manifest.json").read_text())
    assert doc["status"] == "degraded" and doc["failures"]
    assert all(f["error"] == "ConvergenceFailure" for f in doc["failures"])
    data = np.genfromtxt(out / "eigen_alpha_in_mu0.csv", delimiter=",", names=True)
    assert np.any(data["status"] == 1) and np.any(data["status"] == 0)
    assert np.all(np.diff(data["axis"]) > 0)


def test_hierarchy_violation_is_a_config_error(tmp_path):
    path, _ = fixed_config(tmp_path)
    path.write_text(path.read_text().replace("kappa = 0.1", "kappa = 2.0"))
    assert main(["validate", str(path)]) == EXIT_CONFIG
