import csv
import json
import math
import shutil

import pytest

from moserlab import cli


@pytest.fixture(scope="session")
def s1_bundle(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "s1"
    assert cli.run_scenario(cli.resolve_config(cli.default_config("S1")), out) == 0
    return out


@pytest.fixture(scope="session")
def s4_bundle(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "s4"
    assert cli.run_scenario(cli.resolve_config(cli.default_config("S4")), out) == 0
    return out


def _write(tmp_path, obj, name="c.json"):
    p = tmp_path / name
    p.write_text(json.dumps(obj))
    return p


# ---------------------------------------------------------------- configuration

def test_minimal_config_resolves_to_defaults():
    cfg = cli.resolve_config({"schema_version": 1, "scenario": "S2"})
    assert cfg == cli.resolve_config(cli.default_config("S2"))
    assert cfg["coefficients"]["d_exponent"] == 4.0


@pytest.mark.parametrize("bad, field", [
    ({"scenario": "S1"}, "schema_version"),
    ({"schema_version": 2, "scenario": "S1"}, "schema_version"),
    ({"schema_version": 1, "scenario": "S9"}, "scenario"),
    ({"schema_version": 1, "scenario": "S1", "solver": {"rtol": "tight"}}, "solver.rtol"),
    ({"schema_version": 1, "scenario": "S1", "space": {"dimz": [4, 4]}}, "space.dimz"),
    ({"schema_version": 1, "scenario": "S1", "geometry": {"tau": [0.1, 0.2]}}, "geometry.tau"),
    ({"schema_version": 1, "scenario": "S1", "exponents": {"gamma": 0.0}}, "exponents.gamma"),
    ({"schema_version": 1, "scenario": "S1", "ledger_overrides": {"C1": "x"}}, "ledger_overrides"),
])
def test_malformed_config_names_field(bad, field):
    with pytest.raises(cli.ConfigError, match=field.replace(".", r"\.")):
        cli.resolve_config(bad)


def test_bad_config_exit_code(tmp_path, capsys):
    p = tmp_path / "broken.json"
    p.write_text("{not json")
    assert cli.main(["run", str(p)]) == 3
    p = _write(tmp_path, {"schema_version": 1, "scenario": "S1", "seed": "one"})
    assert cli.main(["run", str(p)]) == 3
    assert "seed" in capsys.readouterr().err


def test_config_command_prints_defaults(capsys):
    assert cli.main(["config", "S3"]) == 0
    cfg = json.loads(capsys.readouterr().out)
    assert cfg["scenario"] == "S3" and cfg["coefficients"]["drift"] == [[0.0, 0.0], [1.0, 0.0]]


# ---------------------------------------------------------------- bundles

def test_bundle_files(s4_bundle):
    for name in cli.BUNDLE_FILES + ("metadata.json",):
        assert (s4_bundle / name).exists()
    summary = json.loads((s4_bundle / "summary.json").read_text())
    assert summary["exit_status"] == 0 and summary["failures"] == []


def test_run_via_main_with_seed(tmp_path, capsys):
    p = _write(tmp_path, {"schema_version": 1, "scenario": "S4"})
    out = tmp_path / "b"
    assert cli.main(["run", str(p), "--seed", "7", "--out-dir", str(out)]) == 0
    assert json.loads((out / "config.json").read_text())["seed"] == 7
    assert "bundle written" in capsys.readouterr().out
    assert cli.main(["replay", str(out)]) == 0


def test_replay_detects_tampering(s4_bundle, tmp_path):
    copy = tmp_path / "copy"
    shutil.copytree(s4_bundle, copy)
    led = json.loads((copy / "ledger.json").read_text())
    led["kappa"]["value"] *= 2
    (copy / "ledger.json").write_text(json.dumps(led))
    ok, diffs = cli.replay_bundle(copy)
    assert not ok and "ledger.json" in diffs


def test_strict_mode_fails_on_unverified(tmp_path):
    cfg = cli.resolve_config(cli.default_config("S3"))
    assert cli.run_scenario(cfg, tmp_path / "s3", strict=True) == 1
    summary = json.loads((tmp_path / "s3" / "summary.json").read_text())
    assert summary["failures"] == [] and "H2" in summary["unverified"]


def test_override_that_breaks_a_check_fails(tmp_path):
    cfg = cli.resolve_config({"schema_version": 1, "scenario": "S4",
                              "ledger_overrides": {"C_SI": 1e-9, "C_SI0": 1e-9}})
    # understated Sobolev constants shrink the maximum-principle bound below the observed sup
    assert cli.run_scenario(cfg, tmp_path / "s4") == 1
    summary = json.loads((tmp_path / "s4" / "summary.json").read_text())
    assert [f["check"] for f in summary["failures"]] == ["max_principle"]
    led = json.loads((tmp_path / "s4" / "ledger.json").read_text())
    assert led["C_SI"]["formula"] == "override"


# ---------------------------------------------------------------- tables

def _rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_margins_sorted(s1_bundle):
    (path,) = cli.emit_tables(s1_bundle, ["margins"])
    margins = [math.inf if r["margin"] == "" else float(r["margin"]) for r in _rows(path)]
    assert margins == sorted(margins) and len(margins) > 50


def test_ledger_table_has_formulas(s1_bundle):
    (path,) = cli.emit_tables(s1_bundle, ["ledger"])
    rows = {r["name"]: r for r in _rows(path)}
    for name in ("A0[early]", "log_A3[early]", "loglog_C_PHI", "C1", "C2"):
        assert rows[name]["formula"]
    assert rows["loglog_C_PHI"]["rule"] == "loglog_C_PHI"


def test_iteration_trace_rows(s1_bundle):
    (path,) = cli.emit_tables(s1_bundle, ["iteration_trace"])
    rows = _rows(path)
    levels = cli.default_config("S1")["checks"]["mve_levels"]
    by_report = {}
    for r in rows:
        by_report.setdefault(r["report"], []).append(int(r["level"]))
    assert by_report and all(sorted(v) == list(range(len(v))) and len(v) >= levels
                             for v in by_report.values())


def test_tables_are_reproducible(s1_bundle):
    first = [p.read_bytes() for p in cli.emit_tables(s1_bundle, list(cli.TABLE_KINDS))]
    again = [p.read_bytes() for p in cli.emit_tables(s1_bundle, list(cli.TABLE_KINDS))]
    assert first == again


def test_unknown_table_kind(s1_bundle, capsys):
    with pytest.raises(cli.ConfigError, match="unknown kind"):
        cli.emit_tables(s1_bundle, ["margins", "pie"])
    assert cli.main(["tables", str(s1_bundle), "--kinds", "pie"]) == 3
