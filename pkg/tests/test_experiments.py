import dataclasses

import numpy as np
import pytest

from qsplab import experiments as ex
from qsplab.cli import main
from qsplab.exceptions import BracketError, ConfigError
from qsplab.grid import build_uniform
from qsplab.io import parse_config, read_csv, read_field
from qsplab.model import ModelParams

SMALL = """
[grid]
R = 15
N = 400
[model]
lam = 60
eps = 0.5
[sweep]
lambdas = 60, 120, 240
envelope_eps = 0, 1
epsilons = 1, 0.5, 0.25
[supercritical]
lambdas = 60, 120, 240
[output]
record_timing = false
"""


@pytest.fixture(scope="module")
def cfg():
    return parse_config(SMALL)


@pytest.fixture(scope="module")
def lam_sweep(cfg):
    return ex.sweep_lambda(cfg)


def test_lambda_sweep_trends(lam_sweep):
    assert all(r.converged for r in lam_sweep)
    for col in ("h1_norm", "x_norm", "phi_inf", "level"):
        vals = [getattr(r, col) for r in lam_sweep]
        assert np.all(np.diff(vals) < 0), col


def test_rows_reverify_from_their_fields(cfg, lam_sweep):
    g = cfg.grid()
    for rec in lam_sweep:
        gaps = ex.reverify(rec, g)
        assert max(gaps.values()) <= 1e-8, gaps


def test_level_envelope_reuses_sweeps(cfg, lam_sweep):
    c = dataclasses.replace(cfg, envelope_eps=(0.5, 1.0))
    env = ex.level_envelope(c, {0.5: lam_sweep})
    assert env.levels.shape == (3, 2)
    assert np.all(np.diff(env.sup_level) < 0)
    assert np.allclose(env.levels[:, 0], [r.level for r in lam_sweep])
    assert np.all(env.sup_level >= env.levels[:, 1])


def test_epsilon_sweep(cfg):
    base, recs = ex.sweep_epsilon(cfg)
    assert base.param == 0.0 and base.converged
    for key in ("du_h1", "dphi_grad2", "eps_grad4"):
        vals = [r.extras[key] for r in recs]
        assert np.all(np.diff(vals) < 0), key


def test_supercritical(cfg):
    rep = ex.run_supercritical(cfg)
    assert rep.certified
    rec = next(r for r in rep.records if r.param == rep.certified_lambda)
    assert rec.u_inf <= rep.K
    assert rep.residual <= 10 * rep.tol
    assert "certified" in rep.summary()


def test_supercritical_residual_needs_p(cfg):
    g = cfg.grid()
    with pytest.raises(ConfigError):
        ex.supercritical_residual(g, ModelParams(), np.zeros(g.size))


def test_supercritical_residual_detects_non_solutions(cfg):
    g = cfg.grid()
    u = g.sample(lambda r: 0.5 * np.exp(-r * r))
    assert ex.supercritical_residual(g, ModelParams(p=7.0, K=1.0), u) > 1e-2


def test_failed_rows_are_kept(cfg, monkeypatch):
    calls = {"n": 0}
    real = ex.run

    def flaky(g, m, opts=None, warm_start=None):
        calls["n"] += 1
        if calls["n"] == 2:
            raise BracketError("injected")
        return real(g, m, opts, warm_start=warm_start)

    monkeypatch.setattr(ex, "run", flaky)
    recs = ex.sweep_lambda(cfg)
    assert [r.converged for r in recs] == [True, False, True]
    assert "injected" in recs[1].extras["error"]
    assert np.isnan(recs[1].level)


def test_invariant_suite_passes():
    rep = ex.invariant_suite()
    assert rep.ok, [c.line() for c in rep.failures]
    assert rep.seconds < 300
    assert any("oracle" in c.prop for c in rep.items)


def test_invariant_suite_catches_broken_quadrature():
    g = build_uniform(15.0, 800)
    broken = g.vol_weights.copy()
    broken[10] *= 1.5
    object.__setattr__(g, "vol_weights", broken)
    rep = ex.invariant_suite(grid=g, quick=True)
    assert not rep.ok
    assert any(c.module == "radial_grid" and "ball volume" in c.prop for c in rep.failures)


# --- command line -------------------------------------------------------------------

@pytest.fixture
def cfg_file(tmp_path):
    path = tmp_path / "small.ini"
    path.write_text(SMALL.replace("lambdas = 60, 120, 240\nenvelope_eps = 0, 1",
                                  "lambdas = 60, 120\nenvelope_eps ="))
    return path


def test_cli_solve_is_deterministic_and_reverifiable(tmp_path, cfg_file):
    assert main(["solve", "--config", str(cfg_file), "--out", str(tmp_path / "a")]) == 0
    assert main(["solve", "--config", str(cfg_file), "--out", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "solve.csv").read_bytes()
    assert a == (tmp_path / "b" / "solve.csv").read_bytes()
    rec = read_csv(tmp_path / "a" / "solve.csv")[0]
    g, u = read_field(tmp_path / "a" / "u.txt")
    gaps = ex.reverify(rec, g, ModelParams(lam=60.0), u=u)
    assert max(gaps.values()) <= 1e-8
    assert (tmp_path / "a" / "config.ini").exists()


def test_cli_sweep_lambda_writes_fields(tmp_path, cfg_file):
    out = tmp_path / "sw"
    assert main(["sweep-lambda", "--config", str(cfg_file), "--out", str(out), "--plot"]) == 0
    recs = read_csv(out / "lambda_sweep.csv")
    assert [r.param for r in recs] == [60.0, 120.0]
    g, u, meta = read_field(out / "fields" / "lambda_01.txt", with_meta=True)
    gaps = ex.reverify(recs[1], g, ModelParams(lam=float(meta["lam"]), eps=float(meta["eps"]),
                                               T=float(meta["T"])), u=u)
    assert max(gaps.values()) <= 1e-8
    assert (out / "lambda_sweep.svg").exists()


def test_cli_solve_phi(tmp_path, cfg_file):
    out = tmp_path / "phi"
    assert main(["solve-phi", "--config", str(cfg_file), "--out", str(out)]) == 0
    g, phi = read_field(out / "phi.txt")
    assert phi.max() > 0 and phi[-1] == 0.0
    # feed the potential back as a source on the same grid
    assert main(["solve-phi", "--config", str(cfg_file), "--rho", str(out / "phi.txt"),
                 "--out", str(tmp_path / "phi2")]) == 0
    other = tmp_path / "other.txt"
    other.write_text("# rho\n# R = 5\n# N = 16\n" + "0.0\n" * 17)
    assert main(["solve-phi", "--config", str(cfg_file), "--rho", str(other),
                 "--out", str(tmp_path / "phi3")]) == 2


def test_cli_exit_codes(tmp_path, cfg_file):
    bad = tmp_path / "bad.ini"
    bad.write_text("[model]\ntheta = 7\n")
    assert main(["solve", "--config", str(bad), "--out", str(tmp_path / "x")]) == 2
    assert main(["solve", "--config", str(tmp_path / "none.ini"), "--out", str(tmp_path / "x")]) == 2
    starved = tmp_path / "starved.ini"
    starved.write_text(cfg_file.read_text() + "\n[solver]\nmax_iter = 2\n")
    assert main(["solve", "--config", str(starved), "--out", str(tmp_path / "y")]) == 1
    assert main(["check", "--quick", "--out", str(tmp_path / "c")]) == 0
    assert "checks passed" in (tmp_path / "c" / "check_report.txt").read_text()
    with pytest.raises(SystemExit) as info:
        main(["solve"])
    assert info.value.code == 2
