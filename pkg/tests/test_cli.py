import json

import pytest

from stefan_kpp import cli
from stefan_kpp.verify import SUITES


def write_cfg(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return p


def run_cli(*argv):
    return cli.main([str(a) for a in argv])


def out_dir(root):
    (d,) = [p for p in root.iterdir() if p.is_dir()]
    return d


def test_waves_small(tmp_path, capsys):
    cfg = write_cfg(tmp_path, {"problem": {"beta": 0.5}})
    assert run_cli("waves", "-c", cfg, "-o", tmp_path / "out") == cli.EXIT_OK
    d = out_dir(tmp_path / "out")
    cat = json.loads((d / "catalog.json").read_text())
    assert cat["c0"] == pytest.approx(2.0) and cat["regime"] == "SmallAdvection"
    assert (d / "U_star.csv").read_text().startswith("z,q\n")
    man = json.loads((d / "manifest.json").read_text())
    assert man["config_hash"] == d.name == cli.config_hash(man["config"])
    assert man["commands"] == ["waves"] and "catalog.json" in man["files"]
    assert "regime=SmallAdvection" in capsys.readouterr().out


def test_waves_medium_and_large(tmp_path, medium_beta, bstar):
    m = write_cfg(tmp_path, {"problem": {"beta": medium_beta}}, "m.json")
    assert run_cli("waves", "-c", m, "-o", tmp_path / "m") == 0
    dm = out_dir(tmp_path / "m")
    assert (dm / "V_star.csv").exists() and (dm / "W_delta.csv").exists()
    big = write_cfg(tmp_path, {"problem": {"beta": 2 * bstar}}, "l.json")
    assert run_cli("waves", "-c", big, "-o", tmp_path / "l") == 0
    dl = out_dir(tmp_path / "l")
    assert not (dl / "V_star.csv").exists()
    assert json.loads((dl / "catalog.json").read_text())["regime"] == "Large"


def medium_sim(tmp_path, medium_beta, sigma, name):
    return write_cfg(tmp_path, {
        "problem": {"beta": medium_beta},
        "initial": {"h0": 3.0, "shape": "cosine", "sigma": sigma},
        "solver": {"n_grid": 300, "t_max": 30.0},
    }, name)


@pytest.mark.parametrize("sigma,verdict", [(0.2, "Vanishing"), (4.0, "VirtualSpreading"), (0.0, "Vanishing")])
def test_simulate(tmp_path, medium_beta, sigma, verdict):
    cfg = medium_sim(tmp_path, medium_beta, sigma, "s.json")
    assert run_cli("simulate", "-c", cfg, "-o", tmp_path / "out") == 0
    d = out_dir(tmp_path / "out")
    rep = json.loads((d / "classification.json").read_text())
    assert rep["verdict"] == verdict and rep["regime"] == "Medium"
    head = (d / "trajectory.csv").read_text().splitlines()[0]
    assert head == "t,g,h,g_dot,h_dot,sup_u,chi_m"
    assert any((d / "snapshots").iterdir())


def test_rerun_is_byte_identical(tmp_path, medium_beta):
    cfg = medium_sim(tmp_path, medium_beta, 1.0, "s.json")
    assert run_cli("simulate", "-c", cfg, "-o", tmp_path / "a", "--t-max", 10) == 0
    assert run_cli("simulate", "-c", cfg, "-o", tmp_path / "b", "--t-max", 10) == 0
    da, db = out_dir(tmp_path / "a"), out_dir(tmp_path / "b")
    assert da.name == db.name
    files = sorted(p.relative_to(da) for p in da.rglob("*") if p.is_file())
    assert files == sorted(p.relative_to(db) for p in db.rglob("*") if p.is_file())
    for rel in files:
        assert (da / rel).read_bytes() == (db / rel).read_bytes(), rel


def test_override_changes_hash(tmp_path, medium_beta):
    cfg = medium_sim(tmp_path, medium_beta, 1.0, "s.json")
    base = cli.load_config(cfg)
    assert cli.config_hash(base) != cli.config_hash(cli.load_config(cfg, t_max=11.0))
    assert cli.config_hash(base) == cli.config_hash(json.loads(json.dumps(base)))


def test_commands_share_manifest(tmp_path, medium_beta):
    cfg = write_cfg(tmp_path, {
        "problem": {"beta": medium_beta},
        "initial": {"h0": 3.0, "sigma": 1.0},
        "solver": {"n_grid": 200, "t_max": 5.0},
    })
    assert run_cli("waves", "-c", cfg, "-o", tmp_path / "o") == 0
    assert run_cli("simulate", "-c", cfg, "-o", tmp_path / "o") == 0
    d = out_dir(tmp_path / "o")
    man = json.loads((d / "manifest.json").read_text())
    assert man["commands"] == ["simulate", "waves"]
    assert {"catalog.json", "trajectory.csv", "classification.json"} <= set(man["files"])


def test_threshold_unbounded(tmp_path, medium_beta):
    cfg = write_cfg(tmp_path, {
        "problem": {"beta": medium_beta},
        "initial": {"h0": 3.0},
        "solver": {"n_grid": 300, "t_max": 30.0},
        "threshold": {"sigma_max": 0.2},
    })
    assert run_cli("threshold", "-c", cfg, "-o", tmp_path / "out") == cli.EXIT_UNBOUNDED
    res = json.loads((out_dir(tmp_path / "out") / "threshold.json").read_text())
    assert "inf" in json.dumps(res)


@pytest.mark.parametrize("cfg", [
    {"problem": {"beta": 1.0}, "colour": "red"},
    {"problem": {"beta": -1.0}},
    {"problem": {"mu": 1.0}},
    {"problem": {"beta": 1.0}, "solver": {"n_grid": 10}},
    {"problem": {"beta": 1.0}, "threshold": {"rel_tol": 1e-5}},
])
def test_bad_config_is_usage_error(tmp_path, cfg):
    p = write_cfg(tmp_path, cfg)
    assert run_cli("waves", "-c", p, "-o", tmp_path / "out") == cli.EXIT_USAGE


def test_non_kpp_nonlinearity(tmp_path):
    p = write_cfg(tmp_path, {"problem": {"beta": 1.0},
                             "nonlinearity": {"name": "polynomial", "params": {"coeffs": [0.0, -1.0, 1.0]}}})
    assert run_cli("waves", "-c", p, "-o", tmp_path / "out") == cli.EXIT_USAGE


def test_usage_errors(tmp_path):
    assert run_cli("waves", "-o", tmp_path) == cli.EXIT_USAGE
    assert run_cli("waves", "-c", tmp_path / "missing.json", "-o", tmp_path) == cli.EXIT_USAGE
    with pytest.raises(SystemExit) as info:
        cli.main(["bogus"])
    assert info.value.code == cli.EXIT_USAGE
    assert "nope" not in SUITES
    assert run_cli("verify", "nope", "-o", tmp_path) == cli.EXIT_USAGE
