import json
from pathlib import Path

import pytest

from redc import cli
from redc.config import load_config, parse_config
from redc.errors import ConfigError
from redc.recipes import RECIPES, recipe_configs
from redc.scheduling import divisors

REPO = Path(__file__).resolve().parents[1]
GOLDEN = Path(__file__).parent / "golden"

TINY = """
[scenario]
id = tiny
seed = 3
trials = 1
jobs = 1
[matrix]
r = 100
s = 100
l = 100
[strategy]
k_values = 100
m = sqrt
gamma = 1.1
[fleet]
count = 5
mu = 330, 290, 250, 200, 180
bandwidth = 500
[ewma]
warmup = 0
"""


def write(tmp_path, text, name="s.ini"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_divisibility_violation_reported(tmp_path):
    p = write(tmp_path, "[matrix]\nr = 100\n[strategy]\nk_values = 49\nm = 7\n")
    with pytest.raises(ConfigError) as exc:
        load_config(p)
    msg = str(exc.value)
    assert f"{p}:5:" in msg and "m=7 does not divide r=100" in msg


def test_negative_upsilon_rejected(tmp_path):
    p = write(tmp_path, "[system]\n\nupsilon = -1\n")
    with pytest.raises(ConfigError, match=r":3: \[system\] upsilon"):
        load_config(p)


def test_all_violations_listed():
    with pytest.raises(ConfigError) as exc:
        parse_config("[scenario]\ntrials = 0\npolicy = fastest\n[bogus]\nx = 1\n")
    msg = str(exc.value)
    assert "trials" in msg and "policy" in msg and "unknown section" in msg


def test_unknown_key_and_bad_number():
    with pytest.raises(ConfigError, match="unknown key"):
        parse_config("[fleet]\ncolour = red\n")
    with pytest.raises(ConfigError, match="cannot parse"):
        parse_config("[matrix]\nr = lots\n")


def test_mu_list_length_checked():
    with pytest.raises(ConfigError, match="lists 2 rates for 5 workers"):
        parse_config("[fleet]\ncount = 5\nmu = 1, 2\n")


def test_example_config_valid():
    cfg = load_config(REPO / "configs" / "example.ini")
    assert len(cfg.fleet()) == 5


def test_fig5_recipe_grid_size(tmp_path, capsys):
    p = write(tmp_path, RECIPES["fig5"], "fig5.ini")
    assert cli.main(["validate", str(p)]) == 0
    expected = sum(len(divisors(K)) for K in (49, 100, 225))
    assert f"ok: {p}: {expected} strategy points" in capsys.readouterr().out


def test_random_fleet_uses_seed():
    a = parse_config("[scenario]\nseed = 1\n[fleet]\ncount = 4\n").fleet()
    b = parse_config("[scenario]\nseed = 1\n[fleet]\ncount = 4\n").fleet()
    c = parse_config("[scenario]\nseed = 2\n[fleet]\ncount = 4\n").fleet()
    assert [w.service for w in a] == [w.service for w in b] != [w.service for w in c]
    assert all(0 < w.service.rate <= 2500 and 0 < w.bandwidth <= 1000 for w in a)


def test_run_one_row_and_determinism(tmp_path):
    p = write(tmp_path, TINY)
    out1, out2 = tmp_path / "a.csv", tmp_path / "b.csv"
    assert cli.main(["run", str(p), "--out", str(out1)]) == 0
    assert cli.main(["run", str(p), "--out", str(out2)]) == 0
    lines = out1.read_bytes().split(b"\n")
    assert lines[0].decode() == ",".join(cli.COLUMNS)
    assert len([x for x in lines[1:] if x]) == 1
    assert b"\r" not in out1.read_bytes()
    assert out1.read_bytes() == out2.read_bytes()
    summary = (tmp_path / "a.summary.csv").read_text().splitlines()
    assert summary[0].startswith("scenario_id,K,m,Gamma,policy")


def test_parallel_matches_serial(tmp_path, monkeypatch):
    p = write(tmp_path, TINY.replace("trials = 1", "trials = 3"))
    assert cli.main(["run", str(p), "--out", str(tmp_path / "serial.csv")]) == 0
    monkeypatch.setenv("REDC_THREADS", "2")
    assert cli.main(["run", str(p), "--out", str(tmp_path / "par.csv")]) == 0
    assert (tmp_path / "serial.csv").read_bytes() == (tmp_path / "par.csv").read_bytes()


def test_nine_significant_digits():
    assert cli.fmt(1 / 3) == "0.333333333"
    assert cli.fmt(True) == "1" and cli.fmt({2: 0.5, 1: 1.0}) == "1:1;2:0.5"


def test_exit_codes(tmp_path, capsys):
    bad = write(tmp_path, "[system]\nupsilon = 0\n", "bad.ini")
    assert cli.main(["validate", str(bad)]) == cli.EXIT_CONFIG
    assert cli.main(["validate", str(tmp_path / "missing.ini")]) == cli.EXIT_CONFIG
    assert cli.main(["figure", "fig10", "--out", str(tmp_path)]) == cli.EXIT_UNKNOWN_FIGURE
    starved = write(tmp_path, TINY.replace("gamma = 1.1", "gamma = 1.4"), "starved.ini")
    assert cli.main(["run", str(starved), "--out", str(tmp_path / "x.csv")]) == cli.EXIT_NO_STRATEGY
    saturated = write(tmp_path, TINY + "[system]\nqueue_bound = 1\n", "sat.ini")
    assert cli.main(["run", str(saturated), "--out", str(tmp_path / "y.csv")]) == cli.EXIT_SATURATION
    assert len({cli.EXIT_CONFIG, cli.EXIT_SATURATION, cli.EXIT_NO_STRATEGY, cli.EXIT_UNKNOWN_FIGURE}) == 4


def test_analyze_overhead(capsys):
    assert cli.main(["analyze", "overhead", "--m", "10", "--k", "10"]) == 0
    out = capsys.readouterr().out
    value = float(out.split("overhead=")[1].split()[0])
    assert 0 < value < 0.5 and "trace_length=" in out


def test_analyze_threshold_width(capsys):
    assert cli.main(["analyze", "threshold", "--m", "10", "--k", "10", "--tol", "1e-4"]) == 0
    out = capsys.readouterr().out
    assert float(out.split("width=")[1].split()[0]) < 1e-4


def test_analyze_large_k_sanity(capsys):
    assert cli.main(["analyze", "overhead", "--m", "100", "--k", "101"]) == 0
    assert "sanity=ok" in capsys.readouterr().out


def test_analyze_rejects_bad_params():
    assert cli.main(["analyze", "overhead", "--m", "0", "--k", "5"]) == cli.EXIT_CONFIG


@pytest.mark.parametrize("name", sorted(RECIPES))
def test_recipes_parse(name):
    for cfg in recipe_configs(name):
        assert cfg.grid()


@pytest.mark.parametrize("name", sorted(RECIPES))
def test_figure_schema_golden(name, tmp_path):
    out = tmp_path / name
    assert cli.main(["figure", name, "--out", str(out), "--trials", "2"]) == 0
    headers = {p.name: p.read_text().split("\n", 1)[0] for p in sorted(out.glob("*.csv"))}
    golden = json.loads((GOLDEN / f"{name}.json").read_text())
    assert headers == golden
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["figure"] == name and manifest["schema_version"] == cli.SCHEMA_VERSION
    if name == "fig5":
        assert [c["argmin_m"] for c in manifest["curves"]] == [7, 10, 15]
    if name == "fig8":
        runs = (out / "fig8_runs.csv").read_text().splitlines()
        policies = {line.split(",")[8] for line in runs[1:]}
        assert policies == {"redc", "uniform", "ideal", "fixed_threshold_mds"}
