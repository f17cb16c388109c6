import json
import os
import subprocess
import sys

import numpy as np
import pytest

from dfspde.cli import main
from dfspde.config import ConfigError, RunConfig
from dfspde.models import FvModel, save_coefficients

SMALL = """\
model:    {kind: sbm, sigma: {power: true, gamma_prime: 0.0}}
domain:   {x_min: -6, x_max: 6, nx: 64}
levels:   {u_max: 8, nu: 32}
time:     {dt: 1.0e-3, t_end: 0.02, drift_mode: explicit}
ensemble: {replicas: 3, master_seed: 11}
initial:  {kind: gaussian_cdf, mu: 0, s: 0.5, mass: 1}
output:   {dir: out, snapshot_stride: 5, record_noise: false}
"""


def write(tmp_path, text, name="run.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return p


# -- config ---------------------------------------------------------------

def test_round_trip_and_hash():
    cfg = RunConfig.loads(SMALL)
    again = RunConfig.loads(cfg.dump())
    assert again == cfg
    assert again.content_hash() == cfg.content_hash()
    assert len(cfg.content_hash()) == 40
    other = RunConfig.loads(SMALL.replace("master_seed: 11", "master_seed: 12"))
    assert other.content_hash() != cfg.content_hash()


def test_defaults_are_valid():
    cfg = RunConfig()
    cfg.validate()
    assert cfg.build_grid().nx == 256 and cfg.build_levels().nu == 128


@pytest.mark.parametrize("old,new,where,needle", [
    ("dt: 1.0e-3, t_end: 0.02", "dt: 1.0e-1, t_end: 0.5", ":4:", "CFL"),
    ("nx: 64", "nx: 2", ":2:", "nx"),
    ("kind: sbm", "kind: bogus", ":1:", "kind"),
    ("drift_mode: explicit", "drift_mode: fancy", ":4:", "drift_mode"),
    ("s: 0.5", "s: -1", ":6:", "initial.s"),
])
def test_line_anchored_errors(old, new, where, needle):
    with pytest.raises(ConfigError) as exc:
        RunConfig.loads(SMALL.replace(old, new), "run.yaml")
    msg = str(exc.value)
    assert msg.startswith("run.yaml" + where) and needle in msg


def test_unknown_keys_and_syntax():
    with pytest.raises(ConfigError, match=r"run.yaml:3: levels.nuu: unknown key"):
        RunConfig.loads(SMALL.replace("nu: 32", "nuu: 32"), "run.yaml")
    with pytest.raises(ConfigError, match="unknown block"):
        RunConfig.loads(SMALL + "extra: {a: 1}\n")
    with pytest.raises(ConfigError, match="YAML syntax"):
        RunConfig.loads("model: {kind: sbm\n", "run.yaml")


def test_fv_config(tmp_path):
    text = """\
model:  {kind: fv, gamma: {constant: true, c: 2.0}}
domain: {x_min: -6, x_max: 6, nx: 64}
levels: {na: 16, nb: 16}
time:   {dt: 1.0e-3, t_end: 0.01}
"""
    cfg = RunConfig.loads(text)
    model = cfg.build_model()
    assert isinstance(model, FvModel) and model.levels.u_max == 1.0
    Y = cfg.build_initial(model)
    assert Y.values[-1] == 1.0
    with pytest.raises(ConfigError, match="levels.nb"):
        RunConfig.loads(text.replace("nb: 16", "nb: 8"))


def test_table_paths_resolve_against_config(tmp_path):
    save_coefficients(tmp_path / "sigma.csv", np.ones(32))
    cfg = RunConfig.load(write(tmp_path, SMALL.replace("{power: true, gamma_prime: 0.0}", "{path: sigma.csv}")))
    assert np.all(cfg.build_model().table == 1.0)


# -- cli ------------------------------------------------------------------

def cli(tmp_path, *args, env=None):
    full = dict(os.environ, **(env or {}))
    return subprocess.run([sys.executable, "-m", "dfspde", *args], cwd=tmp_path, env=full,
                          capture_output=True, text=True)


def test_simulate_minimal(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    p = write(tmp_path, SMALL.replace("t_end: 0.02", "t_end: 1.0e-3"))
    assert main(["simulate", "--config", str(p)]) == 0
    rows = (tmp_path / "out" / "mass.csv").read_text().splitlines()
    assert rows[0] == "t,mass" and len(rows) == 3
    meta = json.loads((tmp_path / "out" / "run_meta.json").read_text())
    assert meta["config_hash"] == RunConfig.load(p).content_hash() and meta["master_seed"] == 11


def test_simulate_deterministic(tmp_path):
    p = write(tmp_path, SMALL)
    for d in ("a", "b"):
        assert main(["simulate", "--config", str(p), "--out", str(tmp_path / d)]) == 0
    for f in ("mass.csv", "snapshots.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_cfl_violation_exit_code(tmp_path, capsys):
    p = write(tmp_path, SMALL.replace("dt: 1.0e-3, t_end: 0.02", "dt: 1.0e-1, t_end: 0.5"))
    assert main(["simulate", "--config", str(p)]) == 2
    err = capsys.readouterr().err
    assert "run.yaml:4" in err and "CFL" in err and "0.5" in err


def test_missing_config_exit_code(tmp_path):
    assert main(["simulate", "--config", str(tmp_path / "nope.yaml")]) == 2


def test_ensemble_single_replica_matches_simulate(tmp_path):
    p = write(tmp_path, SMALL)
    main(["simulate", "--config", str(p), "--out", str(tmp_path / "s")])
    assert main(["ensemble", "--config", str(p), "--replicas", "1", "--out", str(tmp_path / "e")]) == 0
    last = (tmp_path / "s" / "mass.csv").read_text().splitlines()[-1].split(",")[1]
    row = (tmp_path / "e" / "replicas.csv").read_text().splitlines()[1].split(",")
    assert row == ["0", last, "ok"]
    summ = json.loads((tmp_path / "e" / "summary.json").read_text())
    assert summ["mean"] == float(last) and "skipped" in summ["martingale"]


def test_ensemble_independent_of_threads(tmp_path):
    write(tmp_path, SMALL.replace("replicas: 3", "replicas: 120"))
    out = []
    for n in ("1", "3"):
        r = cli(tmp_path, "ensemble", "--config", "run.yaml", env={"DFSPDE_THREADS": n})
        assert r.returncode == 0, r.stderr
        out.append((tmp_path / "out" / "summary.json").read_bytes())
    assert out[0] == out[1]
    assert json.loads(out[0])["martingale"]["pass"] is True


def test_verify(tmp_path, capsys):
    assert main(["verify", "--suite", "nope"]) == 2
    assert main(["verify", "--suite", "oracle", "--out", str(tmp_path / "r.jsonl")]) == 0
    rows = [json.loads(x) for x in (tmp_path / "r.jsonl").read_text().splitlines()]
    assert rows and all(r["pass"] for r in rows)
    assert capsys.readouterr().out.count("\n") == len(rows)


def test_extinction_scan(tmp_path):
    assert main(["extinction-scan", "--gamma-prime", "--out", str(tmp_path)]) == 2
    assert main(["extinction-scan", "--gamma-prime", "3.5", "--out", str(tmp_path)]) == 2
    assert main(["extinction-scan", "--range", "0", "1", "0", "--out", str(tmp_path)]) == 2
    text = SMALL.replace("t_end: 0.02", "t_end: 2.0").replace("dt: 1.0e-3", "dt: 1.0e-2").replace(
        "nx: 64", "nx: 16")
    p = write(tmp_path, text)
    assert main(["extinction-scan", "--gamma-prime", "0.5", "--config", str(p),
                 "--replicas", "50", "--out", str(tmp_path / "x")]) == 0
    rows = (tmp_path / "x" / "verdicts.csv").read_text().splitlines()
    assert len(rows) == 2 and rows[1].startswith("0.5")


def test_scan_range_grid(tmp_path):
    assert main(["extinction-scan", "--range", "0", "1", "0.5", "--replicas", "20",
                 "--out", str(tmp_path)]) == 0
    rows = (tmp_path / "verdicts.csv").read_text().splitlines()[1:]
    assert [float(r.split(",")[0]) for r in rows] == [0.0, 0.5, 1.0]


@pytest.mark.parametrize("name", ["sbm_reference.yaml", "fv_constant.yaml"])
def test_shipped_configs_validate(name):
    from pathlib import Path

    cfg = RunConfig.load(Path(__file__).parents[1] / "configs" / name)
    assert cfg.build_initial().total_mass == 1.0
