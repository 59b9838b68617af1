import csv
import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from adaptdiag.cli import main
from adaptdiag.config import RunConfig, parse_config, serialize_config
from adaptdiag.diagnostics import DeltaSeries, DiminishingSeries, _verdicts, fitted_eta_star, Thresholds
from adaptdiag.errors import ConfigError
from adaptdiag.runner import run

SMALL = """
scenario = "{sid}"
n_grid = [10, 25, 50, 100]
M_grid = [1, 4, 10, 100]
cap = 2000
R = 12
seed = 5
"""


def small_config(tmp_path, sid="ToyFlip", **extra):
    text = SMALL.format(sid=sid) + "".join(f"{k} = {json.dumps(v)}\n" for k, v in extra.items())
    path = tmp_path / f"{sid}.toml"
    path.write_text(text)
    return path


# -- config ------------------------------------------------------------------


def test_minimal_config_takes_defaults():
    cfg = parse_config('scenario = "ToyFlip"')
    assert cfg.eps == (0.05,) and cfg.M_grid == (1, 2, 4, 10, 100, 1000) and cfg.n_grid[-1] == 1000
    assert cfg.n_burn == 250 and cfg.R == 100 and cfg.cap == 10_000 and cfg.workers == 1
    assert cfg.formats == ("json", "csv")


@pytest.mark.parametrize("text, field", [
    ('scenario = "ToyFlip"\nM_grid = [10, 5]', "M_grid"),
    ('scenario = "ToyFlip"\ncap = 10', "cap"),
    ('scenario = "ToyFlip"\nwhatever = 1', "whatever"),
    ('scenario = "Nope"', "scenario"),
    ('scenario = "ToyFlip"\neps = [0.0]', "eps"),
    ('scenario = "ToyFlip"\nn_burn = 5000', "n_burn"),
    ('scenario = "ToyFlip"\n[overrides]\ntheta = 0.2', "overrides.theta"),
    ('scenario = "ToyFlip"\nformats = ["xml"]', "formats"),
    ('n_grid = [1]', "scenario"),
])
def test_config_errors_name_the_field(text, field):
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert info.value.field == field
    assert field.split(".")[-1] in str(info.value)


def test_malformed_toml():
    with pytest.raises(ConfigError, match="malformed"):
        parse_config("scenario = ")


def test_scientific_digest_ignores_execution_fields():
    a = parse_config('scenario = "ToyFlip"')
    b = RunConfig("ToyFlip", workers=8, out_dir="elsewhere", formats=("json",))
    c = RunConfig("ToyFlip", seed=1)
    assert a.digest() == b.digest() != c.digest()


@st.composite
def configs(draw):
    sid = draw(st.sampled_from(["ToyFlip", "ToyFlipTo1", "AlternatingPI", "NonAdaptiveControl"]))
    n_grid = tuple(sorted(draw(st.sets(st.integers(1, 5000), min_size=1, max_size=6))))
    M_grid = tuple(sorted(draw(st.sets(st.integers(1, 2000), min_size=1, max_size=6))))
    eps = tuple(draw(st.lists(st.floats(1e-6, 0.999), min_size=1, max_size=3, unique=True)))
    overrides = draw(st.sampled_from([{}, {"x0": 1}]))
    return RunConfig(
        scenario=sid, overrides=overrides, eps=eps, n_grid=n_grid, M_grid=M_grid,
        cap=draw(st.integers(M_grid[-1], 10**6)), R=draw(st.integers(1, 10**4)), seed=draw(st.integers(0, 2**40)),
        n_burn=draw(st.integers(n_grid[0], n_grid[-1])), delta_star=draw(st.floats(0, 0.99)),
        eta_star=draw(st.none() | st.floats(0, 1)), out_dir=draw(st.sampled_from(["out", "a/b"])),
        formats=draw(st.sampled_from([("json",), ("csv",), ("json", "csv")])), workers=draw(st.integers(1, 16)),
    )


@settings(max_examples=150, suppress_health_check=[HealthCheck.too_slow])
@given(configs())
def test_config_round_trip(cfg):
    assert parse_config(serialize_config(cfg)) == cfg


# -- run ---------------------------------------------------------------------


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_run_writes_all_files(tmp_path):
    cfg = parse_config(small_config(tmp_path).read_text())
    files = run(RunConfig(**{**cfg.__dict__, "out_dir": str(tmp_path / "out")}))
    names = {Path(p).name for p in files.paths}
    assert names == {"report.json", "diminishing.csv", "containment.csv", "adapfail.csv", "manifest.json"}
    assert files.verify()
    out = tmp_path / "out"
    assert list(_read_csv(out / "diminishing.csv")[0]) == ["n", "D_median", "D_q95"]
    assert list(_read_csv(out / "containment.csv")[0]) == ["n", "M", "eps", "tail_prob", "censored_frac"]
    assert list(_read_csv(out / "adapfail.csv")[0]) == ["M", "delta"]
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 5 and manifest["config_hash"] == cfg.digest()
    assert not any(p.name.startswith(".staging") for p in out.iterdir())


@pytest.mark.parametrize("sid", ["ToyFlip", "NonAdaptiveControl", "AlternatingPI"])
def test_csv_reingest_reproduces_verdicts(tmp_path, sid):
    out = tmp_path / "out"
    assert main(["run", "--config", str(small_config(tmp_path, sid)), "--out", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    primary = report["reports"][0]
    n_burn = primary["n_burn"]

    dim_rows = _read_csv(out / "diminishing.csv")
    dim = DiminishingSeries(np.array([int(r["n"]) for r in dim_rows]),
                            np.array([float(r["D_median"]) for r in dim_rows]),
                            np.array([float(r["D_q95"]) for r in dim_rows]), 0, 0, True)
    rows = [r for r in _read_csv(out / "containment.csv") if float(r["eps"]) == report["primary_eps"]]
    M_grid = sorted({int(r["M"]) for r in rows})
    tail = {(int(r["n"]), int(r["M"])): float(r["tail_prob"]) for r in rows}
    window = [n for n in sorted({n for n, _ in tail}) if n >= n_burn]
    cont = np.minimum.accumulate([max(tail[n, M] for n in window) for M in M_grid])
    af = np.array([float(r["delta"]) for r in _read_csv(out / "adapfail.csv")])

    eta_star, _ = fitted_eta_star(dim, n_burn, Thresholds())
    got = _verdicts(dim, DeltaSeries(tuple(M_grid), cont, float(cont[-1]), (), True),
                    DeltaSeries(tuple(M_grid), af, float(af[-1]), (), True), eta_star, 0.05)
    assert got == report["verdicts"]


def test_run_json_only(tmp_path):
    out = tmp_path / "o"
    assert main(["run", "--config", str(small_config(tmp_path)), "--out", str(out), "--format", "json"]) == 0
    assert sorted(p.name for p in out.iterdir()) == ["manifest.json", "report.json"]


def test_failed_run_leaves_no_outputs(tmp_path):
    out = tmp_path / "o"
    path = small_config(tmp_path, "AlternatingPI")
    path.write_text(path.read_text() + "[overrides]\np_theta = 1.0\n")
    assert main(["run", "--config", str(path), "--out", str(out)]) == 3
    assert not out.exists() or not any(out.iterdir())


# -- CLI ---------------------------------------------------------------------


def test_cli_list(capsys):
    assert main(["list"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0].startswith("ToyFlip\t") and len(lines) == 4


@pytest.mark.parametrize("argv, expected", [
    (["meps", "--scenario", "ToyFlip", "--theta", "0.1", "--eps", "0.01"], "18"),
    (["meps", "--scenario", "NonAdaptiveControl", "--theta", "0", "--eps", "0.1", "--cap", "1000"],
     "EXCEEDS_CAP(1000)"),
    (["meps", "--scenario", "AlternatingPI", "--theta", "P", "--eps", "0.01"], "1"),
    (["adaptime", "--scenario", "ToyFlip", "--theta", "0.5", "--eps", "0.01"], "9"),
    (["adaptime", "--scenario", "AlternatingPI", "--theta", "P", "--eps", "0.01", "--x", "1"], "2"),
    (["adaptime", "--scenario", "NonAdaptiveControl", "--theta", "0.25", "--eps", "0.05", "--R", "5000"], "4"),
])
def test_cli_queries_print_one_line(capsys, argv, expected):
    assert main(argv) == 0
    out = capsys.readouterr().out
    assert out == expected + "\n"


def test_cli_telescope(capsys):
    assert main(["telescope", "--scenario", "ToyFlip", "--thetas", "0.2,0.25,0.3"]) == 0
    out = capsys.readouterr().out.strip()
    assert out.endswith("ok=true") and "eta=0.05" in out


@pytest.mark.parametrize("argv, code", [
    (["run", "--config", "/nonexistent.toml"], 2),
    (["meps", "--scenario", "ToyFlip", "--theta", "abc", "--eps", "0.1"], 2),
    (["meps", "--scenario", "Nope", "--theta", "0.1", "--eps", "0.1"], 3),
    (["meps", "--scenario", "ToyFlip", "--theta", "1.5", "--eps", "0.1"], 3),
    (["meps", "--scenario", "ToyFlip", "--theta", "0.1", "--eps", "2"], 3),
    (["adaptime", "--scenario", "ToyFlip", "--theta", "0.5", "--eps", "0.1", "--R", "1000", "--budget", "10"], 4),
])
def test_cli_exit_codes(capsys, argv, code):
    assert main(argv) == code
    assert capsys.readouterr().err.startswith("error:")


def test_cli_bad_config_field(tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text('scenario = "ToyFlip"\nM_grid = [4, 2]\n')
    assert main(["run", "--config", str(path)]) == 2
