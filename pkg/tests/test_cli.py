import csv
import json

import pytest

from bspdelab.cli import (
    SchemaError,
    load_config,
    main,
    resolve_config_path,
)

REQUIRED_IDS = {
    "heat_smoke", "heat_quadratic", "sin_decay", "stochastic_sinWT",
    "variable_a_sin", "transport_decay", "semilinear_mode", "beta_sweep",
    "kernel_suite", "apriori_study", "time_shift_sweep",
}


class TestConfigSchema:
    def test_bundled_names_resolve(self):
        assert resolve_config_path("heat_smoke").name == "heat_smoke.ini"

    def test_unknown_config_rejected(self):
        with pytest.raises(SchemaError):
            resolve_config_path("definitely_not_a_config")

    def test_missing_run_section(self, tmp_path):
        p = tmp_path / "c.ini"
        p.write_text("[scenario.sin_decay]\nseed = 1\n")
        with pytest.raises(SchemaError, match=r"\[run\]"):
            load_config(p)

    def test_unknown_scenario_anchored(self, tmp_path):
        p = tmp_path / "c.ini"
        p.write_text("[run]\nscenarios = nope\n")
        with pytest.raises(SchemaError) as exc:
            load_config(p)
        assert exc.value.line == 2
        assert "unknown scenario" in str(exc.value)

    def test_unknown_override_key(self, tmp_path):
        p = tmp_path / "c.ini"
        p.write_text("[run]\nscenarios = sin_decay\n"
                     "[scenario.sin_decay]\ncolour = red\n")
        with pytest.raises(SchemaError, match="unknown key"):
            load_config(p)

    def test_nonpositive_lam_cites_ellipticity(self, tmp_path):
        p = tmp_path / "c.ini"
        p.write_text("[run]\nscenarios = sin_decay\n"
                     "[scenario.sin_decay]\nlam = 0.0\n")
        with pytest.raises(SchemaError) as exc:
            load_config(p)
        assert "ellipticity" in str(exc.value)
        assert exc.value.line == 4

    def test_type_errors_anchored(self, tmp_path):
        p = tmp_path / "c.ini"
        p.write_text("[run]\nscenarios = sin_decay\n"
                     "[scenario.sin_decay]\nnum_steps = many\n")
        with pytest.raises(SchemaError, match="int"):
            load_config(p)

    def test_valid_config_parses(self, tmp_path):
        p = tmp_path / "c.ini"
        p.write_text("[run]\nscenarios = sin_decay, kernel_suite\nseed = 3\n"
                     "[scenario.sin_decay]\nnum_steps = 20\n")
        cfg = load_config(p)
        assert cfg["seed"] == 3
        assert [s.scenario_id for s, _ in cfg["scenarios"]] \
            == ["sin_decay", "kernel_suite"]
        assert cfg["scenarios"][0][1] == {"num_steps": 20}


class TestList:
    def test_catalog_contains_required_ids(self, capsys):
        assert main(["list"]) == 0
        out = capsys.readouterr().out
        for sid in REQUIRED_IDS:
            assert sid in out

    def test_json_catalog(self, capsys):
        assert main(["list", "--json"]) == 0
        entries = json.loads(capsys.readouterr().out)
        ids = {e["id"] for e in entries}
        assert REQUIRED_IDS <= ids
        assert all(e["provenance"] for e in entries)

    def test_empty_custom_catalog(self, tmp_path, capsys):
        p = tmp_path / "cat.ini"
        p.write_text("")
        assert main(["list", "--catalog", str(p)]) == 0
        assert capsys.readouterr().out == ""


@pytest.fixture(scope="module")
def smoke_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run") / "out"
    code = main(["run", "heat_smoke", "--out", str(out)])
    return code, out


class TestRun:
    def test_smoke_exit_zero(self, smoke_run):
        code, out = smoke_run
        assert code == 0

    def test_manifest_written_with_artifact_index(self, smoke_run):
        code, out = smoke_run
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["status"] == "completed"
        assert manifest["seed"] == 0
        assert "heat_smoke/solution.csv" in manifest["artifacts"]
        assert "kernel_suite/verdicts.json" in manifest["artifacts"]

    def test_solution_csv_format(self, smoke_run):
        code, out = smoke_run
        with open(out / "heat_smoke" / "solution.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["path_id", "t", "x", "u", "v_1"]
        assert len(rows) > 100

    def test_verdicts_json_parses(self, smoke_run):
        code, out = smoke_run
        verdicts = json.loads((out / "kernel_suite" / "verdicts.json").read_text())
        assert all(v["provenance"] for v in verdicts)
        assert all(v["status"] == "pass" for v in verdicts)

    def test_nonempty_out_dir_refused(self, smoke_run, capsys):
        code, out = smoke_run
        assert main(["run", "heat_smoke", "--out", str(out)]) == 2
        assert "--force" in capsys.readouterr().err

    def test_schema_violation_exits_two(self, tmp_path, capsys):
        p = tmp_path / "bad.ini"
        p.write_text("[run]\nscenarios = sin_decay\n"
                     "[scenario.sin_decay]\nlam = -1\n")
        code = main(["run", str(p), "--out", str(tmp_path / "o")])
        assert code == 2
        err = capsys.readouterr().err
        assert "ellipticity" in err
        assert "bad.ini:4" in err

    def test_beta_sweep_plot_csv(self, tmp_path):
        out = tmp_path / "o"
        assert main(["run", "semilinear_beta_sweep", "--out", str(out)]) == 0
        with open(out / "beta_sweep" / "contraction_vs_beta.csv",
                  newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["beta", "contraction_factor", "iterations"]
        assert len(rows) == 4
        factors = [float(r[1]) for r in rows[1:]]
        assert factors[0] > factors[1] > factors[2]

    def test_byte_identical_verdicts_across_runs(self, tmp_path, smoke_run):
        code, out1 = smoke_run
        out2 = tmp_path / "o2"
        assert main(["run", "heat_smoke", "--out", str(out2)]) == 0
        for rel in ("heat_smoke/verdicts.json", "kernel_suite/verdicts.json"):
            a = (out1 / rel).read_bytes()
            b = (out2 / rel).read_bytes()
            assert a == b

    def test_seed_flag_overrides_config(self, tmp_path):
        out = tmp_path / "o"
        p = tmp_path / "c.ini"
        p.write_text("[run]\nscenarios = heat_smoke\nseed = 5\n")
        assert main(["run", str(p), "--seed", "9", "--out", str(out)]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["seed"] == 9
