import csv
import math
from dataclasses import replace

import numpy as np
import pytest

from fsisplit import cli
from fsisplit import harness as hs
from fsisplit.config import (ConfigError, RunConfig, config_hash, load_config, paper_scale,
                             parse_config, to_ini)
from fsisplit.linalg import SolverError
from fsisplit.schemes import Stepper

SMALL = """
[mesh]
nx = 8
ny = 8
[curve]
n_seg = 16
[scheme]
scheme = split
r = 1
tau = 0.05
T = 0.1
"""

BLOWUP = """
[mesh]
nx = 8
ny = 8
[physics]
kappa = 200
mu = 0.01
[scheme]
scheme = explicit
tau = 0.05
T = 2.0
linearized = true
frozen_geometry = true
"""


def _read_csv(path):
    lines = path.read_text().splitlines()
    meta = dict(l[2:].split("=", 1) for l in lines if l.startswith("# "))
    rows = list(csv.DictReader(l for l in lines if not l.startswith("#")))
    return meta, rows


# -- config -----------------------------------------------------------------

def test_defaults_and_parsing():
    cfg = parse_config(SMALL)
    assert (cfg.mesh.nx, cfg.curve.n_seg, cfg.scheme.label) == (8, 16, "split_r1")
    assert cfg.physics.gamma == 0.1
    cfg = parse_config("[experiment]\nkind = temporal\ntaus = 1/16, 1/32\n")
    assert cfg.experiment.taus == (0.0625, 0.03125)


@pytest.mark.parametrize("text", [
    "[meshh]\nnx = 4\n",
    "[mesh]\nnz = 4\n",
    "[mesh]\nnx = four\n",
    "[scheme]\nlinearized = maybe\n",
    "[scheme]\ntau = -1\n",
    "[experiment]\nschemes = strong, implicit\n",
    "[experiment]\nkind = stability\n",
    "[experiment]\nkind = spatial\nnx_list = 8, 12\n",
    "[curve]\nshape = square\n",
    "[curve]\na = 0.7\n",
    "no section header\n",
])
def test_config_errors(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_canonical_text_and_hash():
    cfg = parse_config(SMALL)
    again = parse_config(to_ini(cfg))
    assert again == cfg
    assert config_hash(again) == config_hash(cfg)
    # spelling out a default does not change the hash
    assert config_hash(parse_config(SMALL + "[physics]\nkappa = 2.0\n")) == config_hash(cfg)
    assert config_hash(cfg.with_scheme(tau=0.025)) != config_hash(cfg)
    assert len(config_hash(cfg)) == 16


def test_paper_scale():
    cfg = paper_scale(RunConfig())
    assert (cfg.reference.nx, cfg.reference.tau) == (256, 5e-5)


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.ini")


# -- runs -------------------------------------------------------------------

def test_single_step_run_gives_one_row(tmp_path):
    cfg = parse_config(SMALL).with_scheme(T=0.05)
    res = hs.run_simulation(cfg)
    assert res.outcome == "completed" and len(res.records) == 1
    rec = res.records[0]
    assert rec.step == 1 and rec.time == pytest.approx(0.05)
    assert rec.identity_residual <= 1e-10 and rec.intermediate_residual <= 1e-9
    path = hs.write_energy_csv(tmp_path / "e.csv", res)
    meta, rows = _read_csv(path)
    assert meta["config_hash"] == config_hash(cfg) and meta["gamma"] == "0.1"
    assert len(rows) == 1 and list(rows[0]) == hs.ENERGY_COLUMNS


def test_augmented_energy_monotone_for_split_r1():
    res = hs.run_simulation(parse_config(SMALL).with_scheme(T=0.5))
    A = res.series("augmented", True)
    assert np.all(np.diff(A) <= 1e-9 * res.E0)


def test_blowup_is_an_outcome():
    res = hs.run_simulation(parse_config(BLOWUP))
    assert res.outcome == "blowup" and not res.stable
    assert "step" in res.message


def test_solver_failure_names_the_step(monkeypatch):
    calls = []

    def failing(self, state):
        calls.append(1)
        if len(calls) == 2:
            raise SolverError("singular")
        return original(self, state)

    original = Stepper.step
    monkeypatch.setattr(Stepper, "step", failing)
    with pytest.raises(SolverError, match="step 2"):
        hs.run_simulation(parse_config(SMALL))


def test_sweep_empty_taus_and_isolated_failures(monkeypatch):
    cfg = parse_config(SMALL)
    with pytest.raises(ConfigError):
        hs.stability_sweep(cfg, taus=())
    rows = hs.stability_sweep(parse_config(BLOWUP), taus=(0.05, 0.001), labels=("explicit",))
    assert [r.outcome for r in rows] == ["blowup", "completed"] or rows[1].steps > 0
    assert rows[0].outcome == "blowup"


def test_boundary_search_brackets():
    cfg = parse_config(BLOWUP)
    rows = hs.stability_boundary(replace(cfg, scheme=cfg.scheme), n_segs=(40,),
                                 tau_range=(0.005, 0.05), bisections=2)
    r = rows[0]
    assert r.tau_stable < r.tau_unstable <= 0.05
    assert r.c == pytest.approx(r.tau_stable / r.h_s ** 2)


def test_boundary_scaling_exponent():
    rows = [hs.BoundaryRow(n, 1.0 / n, 3.0 / n ** 2, math.nan) for n in (10, 20, 40)]
    assert hs.boundary_scaling(rows) == pytest.approx(2.0)


def test_trajectory_gap_and_csv(tmp_path):
    cfg = parse_config(SMALL)
    runs = hs.trajectory_run(cfg, taus=(0.05,), labels=("strong", "split_r2"))
    assert hs.trajectory_gap(runs[0], runs[0]) == 0.0
    assert 0 < hs.trajectory_gap(runs[1], runs[0]) < 1e-2
    meta, rows = _read_csv(hs.write_trajectory_csv(tmp_path / "t.csv", cfg, runs))
    assert len(rows) == 2 * 3
    assert float(rows[0]["A_x"]) == pytest.approx(0.853553, abs=1e-6)


# -- checkpoints ------------------------------------------------------------

def test_checkpoint_bit_round_trip(tmp_path):
    cfg = parse_config(SMALL)
    res = hs.run_simulation(cfg)
    path = hs.save_checkpoint(tmp_path / "a.chk", res.state, cfg)
    ck = hs.load_checkpoint(path, expect=cfg)
    assert ck.config == cfg and ck.config_hash == config_hash(cfg)
    for name in hs.STATE_BLOCKS:
        a, b = getattr(res.state, name), getattr(ck.state, name)
        assert a.tobytes() == b.tobytes(), name
    assert ck.state.time == res.state.time and ck.state.step_index == res.state.step_index
    # the reloaded state continues exactly like the original
    st = Stepper(hs.build_discretization(cfg), cfg.scheme)
    np.testing.assert_array_equal(st.step(ck.state).u, st.step(res.state).u)


def test_checkpoint_errors(tmp_path):
    cfg = parse_config(SMALL)
    state = hs.build_discretization(cfg).zero_state()
    path = hs.save_checkpoint(tmp_path / "a.chk", state, cfg)
    text = path.read_text()
    with pytest.raises(hs.CheckpointError, match="version"):
        bad = tmp_path / "v.chk"
        bad.write_text(text.replace("fsisplit-checkpoint 1", "fsisplit-checkpoint 9", 1))
        hs.load_checkpoint(bad)
    with pytest.raises(hs.CheckpointError, match="length"):
        bad = tmp_path / "l.chk"
        bad.write_text(text.replace("\np 81\n", "\np 80\n", 1))
        hs.load_checkpoint(bad)
    with pytest.raises(hs.CheckpointError, match="different"):
        hs.load_checkpoint(path, expect=replace(cfg, mesh=replace(cfg.mesh, nx=16, ny=16)))
    with pytest.raises(hs.CheckpointError):
        hs.load_checkpoint(tmp_path / "missing.chk")


def test_reference_hash_is_checked(tmp_path):
    cfg = parse_config(SMALL)
    path = tmp_path / "ref.chk"
    hs.obtain_reference(cfg, path)
    hs.obtain_reference(cfg, path)  # reuse
    with pytest.raises(hs.CheckpointError):
        hs.obtain_reference(cfg.with_scheme(tau=0.025), path)


# -- CLI --------------------------------------------------------------------

def _cli(tmp_path, text, command="run"):
    cfgfile = tmp_path / "c.ini"
    cfgfile.write_text(text)
    return cli.main([command, "--config", str(cfgfile), "--out", str(tmp_path / "out")])


def test_cli_run_success(tmp_path, capsys):
    assert _cli(tmp_path, SMALL + "[output]\nseries = energy, trajectory\n") == cli.EXIT_OK
    out = tmp_path / "out"
    assert {p.name for p in out.iterdir()} == {"energy.csv", "trajectory.csv", "final.chk"}
    ck = hs.load_checkpoint(out / "final.chk")
    assert ck.state.step_index == 2


def test_cli_config_error(tmp_path, capsys):
    assert _cli(tmp_path, "[mesh]\nnx = -3\n") == cli.EXIT_CONFIG
    assert cli.main(["run", "--config", str(tmp_path / "none.ini")]) == cli.EXIT_CONFIG
    assert "configuration error" in capsys.readouterr().err


def test_cli_solver_failure(tmp_path, monkeypatch, capsys):
    def failing(self, state):
        raise SolverError("singular")
    monkeypatch.setattr(Stepper, "step", failing)
    assert _cli(tmp_path, SMALL) == cli.EXIT_SOLVER
    assert "step 1" in capsys.readouterr().err


def test_cli_blowup(tmp_path, capsys):
    assert _cli(tmp_path, BLOWUP) == cli.EXIT_BLOWUP
    meta, rows = _read_csv(tmp_path / "out" / "energy.csv")
    assert meta["outcome"] == "blowup"


def test_cli_stability(tmp_path, capsys):
    text = SMALL + "[experiment]\nschemes = strong, split_r2\ntaus = 0.05\n"
    assert _cli(tmp_path, text, "stability") == cli.EXIT_OK
    meta, rows = _read_csv(tmp_path / "out" / "stability.csv")
    assert [r["scheme"] for r in rows] == ["strong", "split_r2"]
    assert all(r["stable"] == "true" for r in rows)
