import json
from pathlib import Path

import pytest

from entrofield.cli import main
from entrofield.config import (ConfigError, config_hash, dump_config, hbar_of, normalize,
                               parse_config, provenance_text)
from entrofield.report import Metric, RunReport, fmt_float, to_csv, to_json

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

FREE = """
scenario = "free-field"
[lattice]
dims = [4, 4]
spacing = 0.5
[physics]
m = 1.0
"""


def test_minimal_free_field_defaults():
    cfg = parse_config(FREE)
    assert cfg["physics"]["eta"] == 1.0 and cfg["physics"]["xi"] == 0.125
    assert hbar_of(cfg) == pytest.approx(1.0, abs=1e-15)
    assert cfg["seed"] == 0 and cfg["output"]["format"] == "csv"


def test_free_field_requires_lattice():
    with pytest.raises(ConfigError, match="lattice.dims"):
        parse_config('scenario = "free-field"\n[physics]\nm = 1.0\n')


def test_ensemble_without_n_names_n():
    with pytest.raises(ConfigError, match="'n'"):
        parse_config('scenario = "ensemble"\n[physics]\nm = 1.0\n')


def test_duplicate_key_is_an_error():
    with pytest.raises(ConfigError, match="duplicate"):
        parse_config(FREE + "[physics]\nm = 2.0\n")
    with pytest.raises(ConfigError, match="duplicate"):
        parse_config('scenario = "kernel-check"\n[physics]\neta = 1.0\neta = 2.0\n')


def test_unknown_key_names_path():
    with pytest.raises(ConfigError, match="physics.mass"):
        parse_config(FREE.replace("m = 1.0", "mass = 1.0"))
    with pytest.raises(ConfigError, match="extras"):
        parse_config(FREE + "[extras]\nx = 1\n")
    with pytest.raises(ConfigError, match="unknown scenario"):
        parse_config('scenario = "nope"\n')


@pytest.mark.parametrize("line,path", [("dims = 4", "lattice.dims"), ('spacing = "0.5"', "lattice.spacing"),
                                       ("dims = [4, 2.5]", "lattice.dims[1]")])
def test_type_mismatch_names_path(line, path):
    text = FREE.replace("dims = [4, 4]", line) if "dims" in line else FREE.replace("spacing = 0.5", line)
    with pytest.raises(ConfigError, match=path.replace("[", r"\[").replace("]", r"\]")):
        parse_config(text)


def test_invalid_values_rejected():
    with pytest.raises(ConfigError, match="physics.xi"):
        parse_config(FREE.replace("m = 1.0", "m = 1.0\nxi = -1.0"))
    with pytest.raises(ConfigError, match="seed"):
        parse_config("seed = -3\n" + FREE)
    with pytest.raises(ConfigError, match="finite"):
        parse_config(FREE.replace("m = 1.0", "m = nan"))


def test_round_trip_idempotent():
    for path in CONFIGS.glob("*.toml"):
        cfg = parse_config(path.read_text())
        once = dump_config(cfg)
        assert parse_config(once) == cfg
        assert dump_config(parse_config(once)) == once


def test_hash_ignores_output_table():
    a = parse_config(FREE)
    b = parse_config(FREE + '[output]\npath = "x.csv"\nformat = "json"\n')
    assert config_hash(a) == config_hash(b)
    assert config_hash(a) != config_hash(parse_config(FREE.replace("m = 1.0", "m = 1.5")))
    assert "[output]" not in provenance_text(a)


def test_float_formatting():
    assert fmt_float(0.1) == "0.10000000000000001"
    assert float(fmt_float(1 / 3)) == 1 / 3
    assert fmt_float(float("nan")) == "nan"


def test_report_exit_codes_and_json_mirror():
    r = RunReport("x", {"scenario": "x", "config": "a = 1\n"})
    r.check("ok", lambda: 0.5, "< 1", lambda v: v < 1)
    assert r.exit_code == 0
    r.check("bad", lambda: 2.0, "< 1", lambda v: v < 1)
    assert r.exit_code == 1
    r.check("boom", lambda: 1 / 0, "< 1", lambda v: v < 1)
    assert r.exit_code == 3
    doc = json.loads(to_json(r))
    assert [m["metric"] for m in doc["metrics"]] == ["ok", "bad", "boom"]
    assert doc["metrics"][2]["value"] == "nan" and "ZeroDivisionError" in doc["metrics"][2]["error"]
    csv = to_csv(r).splitlines()
    assert csv[0] == "# entrofield report v1" and "# config | a = 1" in csv


def run_cli(args, tmp_path, name="out.csv"):
    out = tmp_path / name
    code = main(["run", *args, "--out", str(out)])
    return code, out.read_bytes() if out.exists() else b""


def test_kernel_check_passes(tmp_path):
    code, body = run_cli(["--config", str(CONFIGS / "kernel-check.toml")], tmp_path)
    assert code == 0
    text = body.decode()
    assert "# status = pass" in text
    for name in ("sample_var_z", "cross_cov_z", "fisher_identity_error", "maxent_min_gap"):
        assert f"\n{name}," in text


def test_same_config_and_seed_identical_reports(tmp_path, monkeypatch):
    cfg = str(CONFIGS / "ensemble.toml")
    args = ["--config", cfg, "--n", "5000", "--T", "0.05"]
    monkeypatch.setenv("ENTROFIELD_THREADS", "1")
    c1, a = run_cli(args, tmp_path, "a.csv")
    monkeypatch.setenv("ENTROFIELD_THREADS", "3")
    c2, b = run_cli(args, tmp_path, "b.csv")
    assert c1 == c2 == 0
    assert a == b
    _, c = run_cli(args + ["--seed", "8"], tmp_path, "c.csv")
    assert c != a


def test_json_output(tmp_path):
    code, body = run_cli(["--config", str(CONFIGS / "divergence-scan.toml"), "--format", "json"],
                         tmp_path, "o.json")
    assert code == 0
    doc = json.loads(body)
    assert doc["status"] == "pass" and doc["header"]["hbar"] == 1
    assert doc["columns"][0] == "a"


def test_divergence_guard_refuses_cleanly(tmp_path, capsys):
    code, body = run_cli(["--config", str(CONFIGS / "divergence-scan.toml"),
                          "--set", "numerics.spacings=[0.5, 0.03125]"], tmp_path)
    assert code == 2 and body == b""
    err = capsys.readouterr().err
    assert "refused" in err and "coarser spacing" in err


def test_config_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text('scenario = "ensemble"\n')
    code, _ = run_cli(["--config", str(bad)], tmp_path)
    assert code == 2
    assert "numerics.n" in capsys.readouterr().err
    assert run_cli(["--config", str(tmp_path / "missing.toml")], tmp_path)[0] == 2


def test_flags_override_config(tmp_path):
    code, body = run_cli(["--config", str(CONFIGS / "free-field.toml"), "--set", "lattice.dims=[4, 4]",
                          "--m", "2.0"], tmp_path)
    assert code == 0
    text = body.decode()
    assert "# config | m = 2.0" in text


def test_tolerance_failure_still_writes_report(tmp_path):
    # too few walkers for the fixed KS bound
    code, body = run_cli(["--config", str(CONFIGS / "ensemble.toml"), "--n", "20", "--T", "0.01",
                          "--seed", "2"], tmp_path)
    text = body.decode()
    assert text.startswith("# entrofield report v1")
    assert code in (0, 1)
    assert ("# status = pass" in text) == (code == 0)


def test_scenarios_listing(capsys):
    assert main(["scenarios"]) == 0
    out = capsys.readouterr().out
    assert "ensemble" in out and "numerics.n" in out
