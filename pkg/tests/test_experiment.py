import json

import numpy as np
import pytest

from stochpnp.cli import main
from stochpnp.experiment import (OUTPUT_ROOT_ENV, ConfigError, ExperimentConfig, GridSearchError,
                                 ReportError, build_problem, compare_report, grid_search_gamma,
                                 report_series, run_experiment)


def small(**kw):
    base = dict(width=16, num_angles=12, K=4, solvers=("stochastic_pnp_admm", "pnp_sgd"),
                seeds=(0, 1), datapasses=3, record_wall_time=False,
                denoiser_params={"patch_radius": 1, "window_radius": 2, "h": 0.1})
    base.update(kw)
    return ExperimentConfig.preset("custom", **base)


INI = """
[experiment]
scenario = custom
width = 16
num_angles = 12
K = 4
solvers = stochastic_pnp_admm, pnp_sgd, pnp_fista
seeds = 0, 1
datapasses = 3
output_dir = {out}
record_wall_time = false

[schedule]
tau = 1
inner_iters = 4

[denoiser]
kind = nlm
window_radius = 2
gamma.pnp_sgd = 2
"""


def test_low_dose_preset_manifest(tmp_path):
    cfg = ExperimentConfig.preset("low_dose", datapasses=1, seeds=(0,))
    out, results = run_experiment(cfg, tmp_path / "run")
    man = json.loads((out / "manifest.json").read_text())
    c = man["config"]
    assert c["I0"] == 1000 and c["fidelity"] == "pwls" and c["K"] == 10
    assert c["inner_iters"] == 10 and c["tau"] == 1 and c["momentum"] == "fista"
    sched = man["solvers"]["stochastic_pnp_admm"]["params"]["schedule"]
    assert sched["inner_iters"] == 10 and sched["momentum"] == "fista"
    assert man["problem"]["n"] > man["problem"]["d"]
    for key in ("mu", "L", "fidelity_scale"):
        assert key in man["problem"]
    assert man["solvers"]["stochastic_pnp_admm"]["beta_source"] == "estimated"
    assert man["all_completed"] is True
    for name in ("ground_truth.pgm", "ground_truth.txt", "observation.csv",
                 "stochastic_pnp_admm/seed_0.csv", "stochastic_pnp_admm/recon_seed_0.pgm"):
        assert (out / name).exists()


def test_sparse_view_preset_shape():
    cfg = ExperimentConfig.preset("sparse_view")
    assert cfg.I0 == 1e4 and cfg.fidelity == "least_squares"
    assert cfg.num_angles * cfg.detectors < cfg.width ** 2


def test_preset_invariants_enforced():
    with pytest.raises(ConfigError) as info:
        ExperimentConfig.preset("low_dose", I0=1e4, fidelity="least_squares")
    assert len(info.value.problems) == 2


def test_every_violation_is_listed():
    with pytest.raises(ConfigError) as info:
        ExperimentConfig.preset("custom", K=0, tau=-1.0, solvers=("bogus",), gamma=0.0,
                                datapasses=0)
    text = str(info.value)
    for word in ("K must", "tau", "bogus", "gamma", "datapasses"):
        assert word in text
    assert len(info.value.problems) >= 5


def test_file_errors_collected(tmp_path):
    p = tmp_path / "bad.ini"
    p.write_text("[experiment]\nwidth = abc\nfoo = 1\n[extra]\nx = 1\n")
    with pytest.raises(ConfigError) as info:
        ExperimentConfig.from_file(p)
    assert len(info.value.problems) == 3


def test_ini_roundtrip(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text(INI.format(out=tmp_path / "o"))
    cfg = ExperimentConfig.from_file(p)
    assert cfg.gamma_for("pnp_sgd") == 2.0 and cfg.gamma_for("pnp_fista") == 1.0
    assert cfg.denoiser_params["window_radius"] == 2
    q = tmp_path / "d.ini"
    q.write_text(cfg.to_ini())
    assert ExperimentConfig.from_file(q) == cfg


def test_theorem1_config_checks(tmp_path):
    with pytest.raises(ConfigError, match="known beta"):
        small(rule="theorem1")
    cfg = small(rule="theorem1", denoiser="blend", denoiser_params={"beta": 0.5}, tau=0.9,
                solvers=("stochastic_pnp_admm",), ridge_eps=1.0, lipschitz_target=None)
    with pytest.raises(ConfigError, match="tau"):
        run_experiment(cfg, tmp_path)


def test_repeat_runs_byte_identical(tmp_path):
    cfg = small()
    a, _ = run_experiment(cfg, tmp_path / "a")
    b, _ = run_experiment(cfg, tmp_path / "b")
    for solver in cfg.solvers:
        for seed in cfg.seeds:
            name = f"{solver}/seed_{seed}.csv"
            assert (a / name).read_bytes() == (b / name).read_bytes()


def test_exact_and_stochastic_admm_agree_with_single_block(tmp_path):
    cfg = small(width=16, num_angles=24, K=1, solvers=("pnp_admm", "stochastic_pnp_admm"),
                denoiser="blend", denoiser_params={"theta": 0.5}, inner_iters=500,
                momentum="zero", outer_iters=10, seeds=(0,))
    out, res = run_experiment(cfg, tmp_path)
    xa = np.loadtxt(out / "pnp_admm/recon_seed_0.txt")
    xs = np.loadtxt(out / "stochastic_pnp_admm/recon_seed_0.txt")
    assert np.linalg.norm(xa - xs) <= 1e-3 * np.linalg.norm(xa)


def test_grid_search_examples():
    cfg = small(seeds=(0,))
    problem = build_problem(cfg)
    best, table = grid_search_gamma(cfg, [1.0], problem=problem)
    assert best == 1.0 and len(table) == 1
    idc = cfg.replace(denoiser="identity", denoiser_params={})
    _, table = grid_search_gamma(idc, [0.5, 1.0, 3.0])
    errs = [r["final_err_log10"] for r in table]
    assert errs[0] == errs[1] == errs[2]
    bl = cfg.replace(denoiser="blend", denoiser_params={"theta": 0.5})
    _, table = grid_search_gamma(bl, [0.5, 1.0, 2.0])
    errs = np.array([r["final_err_log10"] for r in table])
    assert np.ptp(errs) <= 1e-10
    with pytest.raises(ValueError):
        grid_search_gamma(cfg, [])


def test_grid_search_all_diverged():
    cfg = small(solvers=("pnp_sgd",), sgd_eta=1e4, sgd_momentum="zero", seeds=(0,),
                denoiser="identity", denoiser_params={}, datapasses=10)
    with pytest.raises(GridSearchError) as info:
        grid_search_gamma(cfg, [1.0, 2.0])
    assert len(info.value.table) == 2


def test_divergence_recorded(tmp_path):
    cfg = small(solvers=("pnp_sgd", "pnp_fista"), sgd_eta=1e4, sgd_momentum="zero",
                denoiser="identity", denoiser_params={}, datapasses=10, seeds=(0,))
    out, res = run_experiment(cfg, tmp_path)
    man = json.loads((out / "manifest.json").read_text())
    status = {r["solver"]: r["status"] for r in man["runs"]}
    assert status == {"pnp_sgd": "diverged", "pnp_fista": "ok"}
    assert man["all_completed"] is False
    assert (out / "pnp_sgd/seed_0.csv").exists()


def test_report_self_comparison(tmp_path):
    cfg = small()
    a, _ = run_experiment(cfg, tmp_path / "a")
    b, _ = run_experiment(cfg, tmp_path / "b")
    rows = compare_report([a, b], output=tmp_path / "r.csv")
    for solver in cfg.solvers:
        for axis in ("datapasses", "denoiser_calls"):
            xa, ea = report_series(rows, solver, axis, str(a))
            xb, eb = report_series(rows, solver, axis, str(b))
            np.testing.assert_array_equal(xa, xb)
            np.testing.assert_array_equal(ea, eb)
    per = {r["solver"]: r["denoiser_calls_per_datapass"] for r in rows}
    assert per["pnp_sgd"] == pytest.approx(cfg.K)
    assert per["stochastic_pnp_admm"] == pytest.approx(cfg.K / cfg.inner_iters)
    assert (tmp_path / "r.csv").read_text().startswith("run,solver,axis,x")


def test_report_rejects_mismatched_truth(tmp_path):
    a, _ = run_experiment(small(), tmp_path / "a")
    b, _ = run_experiment(small(width=20), tmp_path / "b")
    with pytest.raises(ReportError, match="ground truth"):
        compare_report([a, b])
    with pytest.raises(ReportError):
        compare_report([tmp_path / "missing"])


def test_output_root_env(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ROOT_ENV, str(tmp_path))
    cfg = small(output_dir="rel/dir")
    assert cfg.resolve_output_dir() == tmp_path / "rel" / "dir"
    monkeypatch.delenv(OUTPUT_ROOT_ENV)
    assert str(cfg.resolve_output_dir()) == "rel/dir"


def test_cli_commands(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv(OUTPUT_ROOT_ENV, str(tmp_path))
    ini = tmp_path / "c.ini"
    ini.write_text(INI.format(out="cli_run"))
    assert main(["run", str(ini)]) == 0
    run_dir = tmp_path / "cli_run"
    assert (run_dir / "manifest.json").exists()
    assert main(["grid-gamma", str(ini), "--grid", "1,2", "--solver", "pnp_fista"]) == 0
    assert (run_dir / "gamma_grid.csv").read_text().count("pnp_fista") == 2
    out_csv = tmp_path / "rep.csv"
    assert main(["report", str(run_dir), "-o", str(out_csv)]) == 0
    assert out_csv.exists()
    bad = tmp_path / "bad.ini"
    bad.write_text("[experiment]\nscenario = low_dose\nI0 = 5\n")
    assert main(["run", str(bad)]) == 2
    capsys.readouterr()


def test_cli_divergence_exit_code(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ROOT_ENV, str(tmp_path))
    ini = tmp_path / "d.ini"
    ini.write_text("[experiment]\nwidth = 16\nnum_angles = 12\nK = 4\nsolvers = pnp_sgd\n"
                   "datapasses = 10\noutput_dir = div\n[schedule]\nsgd_eta = 1e4\n"
                   "sgd_momentum = zero\n[denoiser]\nkind = identity\n")
    assert main(["run", str(ini)]) == 1
