import csv

import numpy as np
import pytest

from symstress import cli
from symstress.cli import (
    ELASTICITY_HEADER,
    STOKES_HEADER,
    ExperimentConfig,
    load_config,
    main,
    parse_levels,
    rate_table,
    run_all_paper_experiments,
)

SMALL_ROSTER = """
[ex1]
case = rigid_body_motion
schemes = jm, afw1
n = 2
levels = 0-1

[stokes]
mode = stokes
case = no_flow
schemes = sv
n = 1
levels = 0-4

[tr]
mode = transient
case = transient_polar
schemes = afw1
deltas = 1000
n = 2
dt = 0.1
T = 0.5
"""


def write(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


def test_headers_exact():
    assert ",".join(ELASTICITY_HEADER) == "ref,Bnd,sigma_error,displacement_error,omega_err"
    assert ",".join(STOKES_HEADER) == "ref,Ra,velocity_error,pressure_error,divergence_error"


def test_rates(tmp_path):
    rows = [(l, 10.0, 1.0 / 2**l, 1.0 / 4**l, "") for l in range(4)]
    out = rate_table(write(tmp_path / "a.csv", ELASTICITY_HEADER, rows))
    body = [r for r in out.splitlines() if r.startswith("| 10.0")]
    assert len(body) == 3
    for line in body:
        cells = [c.strip() for c in line.strip("|").split("|")]
        assert cells[2:] == ["1.00", "2.00", ""]


def test_rates_floor(tmp_path):
    rows = [(l, 1000.0, 1e-9 / 2**l, 1.0 / 2**l, 1.0 / 2**l) for l in range(3)]
    out = rate_table(write(tmp_path / "f.csv", ELASTICITY_HEADER, rows), mu=1e-4)
    line = [r for r in out.splitlines() if r.startswith("| 1000.0")][0]
    assert "floor" in line and "1.00" in line
    stokes = [(l, 10.0, 1e-15, 1.0 / 4**l, 1e-15) for l in range(3)]
    out = rate_table(write(tmp_path / "s.csv", STOKES_HEADER, stokes))
    assert out.count("floor") == 4 and "2.00" in out


@pytest.mark.parametrize("content", [
    "",
    "a,b,c\n1,2,3\n",
    "ref,Bnd,sigma_error,displacement_error,omega_err\n0,10.0,1.0\n",
    "ref,Bnd,sigma_error,displacement_error,omega_err\n0,10.0,x,1.0,\n1,10.0,1.0,1.0,\n",
    "ref,Bnd,sigma_error,displacement_error,omega_err\n0,10.0,1.0,1.0,\n",
])
def test_rates_malformed(tmp_path, content):
    p = tmp_path / "bad.csv"
    p.write_text(content)
    with pytest.raises(ValueError):
        rate_table(p)
    assert main(["rates", str(p)]) == 1


def test_parse_levels():
    assert parse_levels("0-3") == [0, 1, 2, 3]
    assert parse_levels("1,3") == [1, 3]
    assert parse_levels("2") == [0, 1, 2]
    assert parse_levels(1) == [0, 1]
    for bad in ("3-1", "x", "-1,2"):
        with pytest.raises(ValueError):
            parse_levels(bad)


def test_config_validation():
    ExperimentConfig("no_flow", "sv", mode="stokes")
    bad = [
        dict(case="no_flow", schemes="jm", mode="stokes"),
        dict(case="rigid_body_motion", schemes="sv"),
        dict(case="rigid_body_motion", schemes="jm", mode="fit"),
        dict(case="nowhere", schemes="jm"),
        dict(case="rigid_body_motion", schemes="jm", deltas="0"),
        dict(case="rigid_body_motion", schemes="jm", n=0),
        dict(case="rigid_body_motion", schemes="hz3"),
    ]
    for kw in bad:
        with pytest.raises(ValueError):
            ExperimentConfig(**kw)
    with pytest.raises(ValueError):
        load_config("[x]\ncase = polar\nschemes = jm\ncolour = red\n")


def test_builtin_roster_parses():
    configs = load_config(cli.ROSTER)
    names = [c.name for c in configs]
    assert names[0] == "rigid_body_motion" and "transient" in names
    tr = configs[names.index("transient")]
    assert tr.T == 1.5 and tr.dt == 0.01 and tr.n == 20


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("roster")
    produced = run_all_paper_experiments(out, SMALL_ROSTER)
    return out, produced


def test_small_roster_files(small_run):
    out, produced = small_run
    names = sorted(p.name for p in produced)
    assert names == sorted([
        "rigid_body_motion_jm_1.csv", "rigid_body_motion_afw_1.csv", "no_flow_sv.csv",
        "transient_afw_1.csv", "transient_afw_1_t0.5.dat"])
    with open(out / "no_flow_sv.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == STOKES_HEADER and len(rows) == 1 + 15
    # delta-major, levels ascending, shortest round-trip floats
    assert [r[1] for r in rows[1:6]] == ["10.0"] * 5
    assert [r[0] for r in rows[1:6]] == ["0", "1", "2", "3", "4"]
    assert rows[-1][1] == "100000.0"
    for r in rows[1:]:
        for v in r[2:]:
            assert repr(float(v)) == v
    with open(out / "rigid_body_motion_jm_1.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ELASTICITY_HEADER and len(rows) == 1 + 6
    assert all(r[4] == "" for r in rows[1:])
    with open(out / "rigid_body_motion_afw_1.csv") as fh:
        assert all(r[4] != "" for r in list(csv.reader(fh))[1:])
    assert not list(out.glob("*.partial"))


def test_manifest(small_run):
    out, produced = small_run
    with open(out / "manifest.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["file", "rows", "note"]
    listed = {r[0]: r for r in rows[1:]}
    for p, n in produced.items():
        assert listed[p.name][1] == str(n)
    assert listed["polar_hz_3.csv"][2].startswith("absent")
    assert rows[-1][0] in cli.ABSENT


def test_roster_deterministic(small_run, tmp_path):
    out, produced = small_run
    run_all_paper_experiments(tmp_path, SMALL_ROSTER)
    for p in list(produced) + [out / "manifest.csv"]:
        assert (tmp_path / p.name).read_bytes() == p.read_bytes(), p.name


def test_roster_failure_reported(tmp_path, monkeypatch):
    def boom(cfg):
        raise RuntimeError("solver exploded")

    monkeypatch.setattr(cli, "run_experiment", boom)
    with pytest.raises(RuntimeError):
        run_all_paper_experiments(tmp_path, SMALL_ROSTER)
    text = (tmp_path / "manifest.csv").read_text()
    assert "[ex1],,failed: solver exploded" in text


def test_cli_gen_mesh(tmp_path, capsys):
    stem = tmp_path / "m"
    assert main(["gen-mesh", "--n", "3", "--jitter", "0.1", "--levels", "1", "--out", str(stem)]) == 0
    nodes = np.loadtxt(tmp_path / "m_1.node")
    cells = np.loadtxt(tmp_path / "m_1.ele", dtype=int)
    assert nodes.shape == (49, 2) and cells.shape == (72, 3)
    assert main(["gen-mesh", "--n", "3", "--jitter", "0.5", "--out", str(stem)]) == 1
    assert "error" in capsys.readouterr().err


def test_cli_verbs(tmp_path, capsys):
    out = str(tmp_path)
    assert main(["converge", "--case", "example1", "--scheme", "peers", "--delta", "10",
                 "--n", "2", "--levels", "0-1", "--out", out]) == 0
    assert (tmp_path / "rigid_body_motion_peers_1.csv").exists()
    assert main(["rates", str(tmp_path / "rigid_body_motion_peers_1.csv")]) == 0
    assert "| Bnd | levels |" in capsys.readouterr().out
    assert main(["robustness", "--scheme", "jm", "--n", "2", "--levels", "0", "--out", out]) == 0
    rows = (tmp_path / "robustness_transverse_isotropic_jm_1.csv").read_text().splitlines()
    assert rows[0].startswith("scheme,level,Bnd,invariance_defect")
    assert len(rows) == 2
    assert main(["transient", "--scheme", "jm", "--n", "2", "--dt", "0.1", "--T", "0.5",
                 "--out", out]) == 0
    assert len((tmp_path / "transient_jm_1.csv").read_text().splitlines()) == 7
    assert main(["converge", "--case", "nowhere", "--out", out]) == 1
