import json
import math

import numpy as np
import pytest

from brlab import __version__
from brlab.cli import (
    KNOBS,
    classify,
    config_from_metadata,
    load_config_from_output,
    main,
    parse_matrix,
    parse_model_config,
    run_subcommand,
)
from brlab.ensembles import EnsembleSpec, ModelSpec
from brlab.errors import BadMatrixFile, IoError, MissingRequired, UnknownFlag, UsageError
from brlab.io import Records, emit_records, read_csv_metadata, render_csv
from brlab.lyapunov import free_L0

SMALL = ["--pool-size", "200", "--burn-in", "20", "--replicas", "4", "--n", "200"]

RUNS = {
    "sets": ["sets", "--K", "2", "--W", "2", "--A", "diag:0,4", "--eps", "0.5"],
    "lyapunov": ["lyapunov", "--W", "2", "--A", "diag:0,1", "--lambda", "0.4", "--E", "0.5,2.5", *SMALL],
    "phase": ["phase", "--lambdas", "0.2,0.6", "--E-min", "2.6", "--E-max", "3.0", "--E-step", "0.2", *SMALL],
    "phi": ["phi", "--lambda", "0.3", "--E", "2.9", "--s", "0.25,0.5", "--d-max", "8", "--samples", "100",
            "--pool-size", "200", "--burn-in", "20"],
    "resonance": ["resonance", "--lambda", "0.5", "--E", "2.9", "--radii", "2,3", "--trees", "30", *SMALL],
    "sw": ["sw", "--lambda", "0.2", "--E", "0,4", "--depth", "10", "--replicas", "4", "--pool-size", "100",
           "--burn-in", "10"],
    "selftest": ["selftest"],
}


def run_to(tmp_path, argv, name="out.csv"):
    path = tmp_path / name
    code = main([*argv, "--output", str(path)])
    return code, path


class TestParse:
    def test_model_example(self):
        cfg = parse_model_config(["sets", "--K", "2", "--W", "2", "--A", "diag:0,4", "--ensemble", "goe",
                                  "--lambda", "0.3"])
        m = cfg.model
        assert m == ModelSpec(2, 2, np.diag([0.0, 4.0]), EnsembleSpec("goe", 2), 0.3)

    def test_matrix_file(self, tmp_path):
        f = tmp_path / "a.txt"
        f.write_text("0 1\n1 0\n")
        assert np.array_equal(parse_matrix(f"file:{f}", 2), [[0, 1], [1, 0]])
        cfg = parse_model_config(["sets", "--W", "2", "--A", f"file:{f}"])
        assert np.array_equal(cfg.model.A, [[0, 1], [1, 0]])

    @pytest.mark.parametrize("body", ["0 1\n0 0\n", "0 1 2\n1 0 0\n", "0 1\n1 0\n2 2\n", "1\n"])
    def test_bad_matrix_file(self, tmp_path, body):
        f = tmp_path / "a.txt"
        f.write_text(body)
        with pytest.raises(BadMatrixFile):
            parse_matrix(f"file:{f}", 2)

    def test_missing_matrix_file(self, tmp_path):
        with pytest.raises(BadMatrixFile):
            parse_matrix(f"file:{tmp_path / 'none'}", 2)

    def test_symmetry_tolerance(self):
        A = parse_matrix("rows:0,1;1.0000000000001,0", 2)
        assert np.array_equal(A, A.T)
        with pytest.raises(BadMatrixFile):
            parse_matrix("rows:0,1;1.001,0", 2)

    def test_diag_count(self):
        with pytest.raises(UsageError):
            parse_matrix("diag:1,2,3", 2)
        with pytest.raises(UsageError):
            parse_matrix("other:1", 2)

    def test_unknown_flag(self):
        with pytest.raises(UnknownFlag):
            parse_model_config(["sets", "--bogus", "1"])

    def test_unknown_config_key(self, tmp_path):
        f = tmp_path / "c.conf"
        f.write_text("bogus=1\n")
        with pytest.raises(UnknownFlag):
            parse_model_config(["sets", "--config", str(f)])

    def test_missing_subcommand(self):
        with pytest.raises(MissingRequired):
            parse_model_config([])
        with pytest.raises(MissingRequired):
            parse_model_config(text="K=2\n")

    def test_missing_energy(self):
        with pytest.raises(MissingRequired):
            parse_model_config(["lyapunov"])
        with pytest.raises(MissingRequired):
            parse_model_config(["lyapunov", "--E-min", "0"])

    def test_bad_value(self):
        with pytest.raises(UsageError):
            parse_model_config(["sets", "--K", "two"])

    def test_config_file_and_override(self, tmp_path):
        f = tmp_path / "c.conf"
        f.write_text("# comment line\nK = 3\nW=2  # trailing\nA=diag:1,2\nlambda=0.2\n")
        cfg = parse_model_config(["sets", "--config", str(f), "--K", "4"])
        assert cfg["K"] == 4 and cfg["W"] == 2 and cfg["lambda"] == 0.2
        assert np.array_equal(cfg.model.A, np.diag([1.0, 2.0]))

    def test_underscore_alias(self):
        a = parse_model_config(["phi", "--E", "0", "--d-max", "9"])
        b = parse_model_config(["phi", "--E", "0", "--d_max", "9"])
        assert a.knobs == b.knobs

    def test_energy_grid(self):
        cfg = parse_model_config(["lyapunov", "--E-min", "-1", "--E-max", "1", "--E-step", "0.25"])
        assert np.allclose(cfg.energies(), np.arange(-1, 1.01, 0.25))

    def test_defaults_materialized(self):
        cfg = parse_model_config(["sets"])
        assert set(cfg.knobs) == {k for k, *_ in KNOBS}
        assert cfg["A"] == "rows:0.0"


class TestRoundTrip:
    def test_text(self):
        cfg = parse_model_config(RUNS["phase"])
        back = parse_model_config(text=f"subcommand=phase\n{cfg.to_text()}")
        assert back.knobs == cfg.knobs and back.subcommand == "phase"

    def test_through_output(self, tmp_path):
        for name in ("lyapunov", "sets"):
            code, path = run_to(tmp_path, RUNS[name], f"{name}.csv")
            assert code == 0
            cfg = parse_model_config([*RUNS[name], "--output", str(path)])
            back = load_config_from_output(path)
            assert back.subcommand == name and back.knobs == cfg.knobs

    def test_metadata_dict(self):
        cfg = parse_model_config(["sets", "--A", "rows:0.5,0.1;0.1,-2", "--W", "2", "--seed", "17"])
        rec, _ = run_subcommand(cfg)
        meta = {k: v for k, v in (ln[2:].split("=", 1) for ln in render_csv(rec).splitlines()
                                  if ln.startswith("# "))}
        assert config_from_metadata(meta).knobs == cfg.knobs


class TestEmit:
    def test_empty(self, tmp_path):
        rec = Records(("a", "b"), meta={"tool": "brlab", "seed": 0})
        emit_records(rec, "csv", tmp_path / "e.csv")
        assert (tmp_path / "e.csv").read_text() == "# tool=brlab\n# seed=0\na,b\n"

    def test_json(self, tmp_path):
        rec = Records(("x", "flag"), meta={"k": 1.5})
        rec.add(0.1, True)
        rec.add(math.inf, False)
        emit_records(rec, "json", tmp_path / "o.json")
        obj = json.loads((tmp_path / "o.json").read_text())
        assert obj == {"meta": {"k": 1.5}, "rows": [{"x": 0.1, "flag": True}, {"x": "inf", "flag": False}]}

    def test_float_round_trip(self, tmp_path):
        rec = Records(("x",))
        rec.add(0.1 + 0.2)
        emit_records(rec, "csv", tmp_path / "f.csv")
        assert float((tmp_path / "f.csv").read_text().splitlines()[-1]) == 0.1 + 0.2

    def test_row_width(self):
        with pytest.raises(UsageError):
            Records(("a",)).add(1, 2)

    def test_io_error(self, tmp_path):
        with pytest.raises(IoError):
            emit_records(Records(("a",)), "csv", tmp_path / "missing" / "x.csv")
        with pytest.raises(UsageError):
            emit_records(Records(("a",)), "xml", tmp_path / "x")


class TestSubcommands:
    def test_sets_report(self, capsys):
        assert main(RUNS["sets"]) == 0
        out = capsys.readouterr().out
        assert "# S_eps=[-2.5, 6.5]" in out
        assert "# S_eps_minus=[1.67157, 2.32843]" in out
        assert f"# version={__version__}" in out

    def test_lyapunov_edge(self, tmp_path):
        code, path = run_to(tmp_path, ["lyapunov", "--K", "2", "--W", "1", "--lambda", "0", "--E", "3",
                                       "--eta", "1e-4", "--n", "500", "--replicas", "4", "--pool-size", "100",
                                       "--burn-in", "10"])
        assert code == 0
        lines = [ln for ln in path.read_text().splitlines() if not ln.startswith("#")]
        assert lines[0] == "E,eta,lambda,L_hat,stderr,n,replicas"
        row = dict(zip(lines[0].split(","), lines[1].split(",")))
        L, se = float(row["L_hat"]), float(row["stderr"])
        assert abs(L - 0.69315) <= 3 * se + 1e-3
        assert abs(L - free_L0(3.0, ModelSpec(2, 1), 1e-4)) <= 3 * se + 1e-8

    def test_phase_columns(self, tmp_path):
        code, path = run_to(tmp_path, RUNS["phase"])
        assert code == 0
        lines = [ln for ln in path.read_text().splitlines() if not ln.startswith("#")]
        assert lines[0] == "E,lambda,eta,L_hat,stderr,logK,class"
        assert len(lines) == 1 + 2 * 3
        assert {ln.split(",")[-1] for ln in lines[1:]} <= {"deloc", "loc", "boundary"}

    def test_classify(self):
        lk = math.log(2)
        assert classify(lk - 0.1, 0.01, 2) == "deloc"
        assert classify(lk + 0.1, 0.01, 2) == "loc"
        assert classify(lk + 0.02, 0.01, 2) == "boundary"

    @pytest.mark.parametrize("name", list(RUNS))
    def test_byte_identical(self, tmp_path, name):
        # the output path is part of the recorded config, so both runs write to it
        c1, path = run_to(tmp_path, RUNS[name])
        first = path.read_bytes()
        c2, _ = run_to(tmp_path, RUNS[name])
        assert c1 == c2 == 0
        assert path.read_bytes() == first

    def test_seed_changes_output(self, tmp_path):
        _, p1 = run_to(tmp_path, RUNS["lyapunov"], "a.csv")
        _, p2 = run_to(tmp_path, [*RUNS["lyapunov"], "--seed", "1"], "b.csv")
        assert p1.read_bytes() != p2.read_bytes()

    def test_json_output(self, tmp_path):
        code, path = run_to(tmp_path, [*RUNS["resonance"], "--format", "json"], "r.json")
        assert code == 0
        obj = json.loads(path.read_text())
        assert obj["meta"]["subcommand"] == "resonance" and len(obj["rows"]) == 2
        assert {"r1", "r2", "pz_holds"} <= set(obj["rows"][0])

    def test_selftest(self, tmp_path):
        code, path = run_to(tmp_path, RUNS["selftest"])
        assert code == 0
        rows = [ln.split(",", 2) for ln in path.read_text().splitlines() if not ln.startswith("#")][1:]
        assert rows and all(r[1] == "PASS" for r in rows)
        assert read_csv_metadata(path)["failed"] == "0"

    def test_checkpoint_resume(self, tmp_path):
        ck = tmp_path / "pool"
        argv = ["lyapunov", "--W", "2", "--lambda", "0.3", "--E", "1.0", "--pool-size", "50", "--burn-in", "150",
                "--replicas", "2", "--n", "50"]
        code, p1 = run_to(tmp_path, [*argv, "--checkpoint", str(ck)], "a.csv")
        assert code == 0 and (tmp_path / "pool.0").exists()
        code, p2 = run_to(tmp_path, [*argv, "--resume", str(ck)], "b.csv")
        assert code == 0
        strip = lambda p: [ln for ln in p.read_text().splitlines() if not ln.startswith("# config.")]
        assert strip(p1) == strip(p2)


class TestExitCodes:
    def test_usage_error(self, capsys):
        assert main(["sets", "--bogus"]) == 1
        err = json.loads(capsys.readouterr().err)
        assert err["error"] == "UnknownFlag" and err["exit_code"] == 1

    def test_bad_matrix(self, tmp_path, capsys):
        f = tmp_path / "a.txt"
        f.write_text("0 1\n0 0\n")
        assert main(["sets", "--W", "2", "--A", f"file:{f}"]) == 1
        assert json.loads(capsys.readouterr().err)["error"] == "BadMatrixFile"

    def test_module_error(self, capsys):
        assert main(["phi", "--E", "0", "--s", "3", "--pool-size", "10", "--burn-in", "1"]) == 1
        assert json.loads(capsys.readouterr().err)["error"] == "InvalidExponent"

    def test_io_error(self, tmp_path, capsys):
        assert main(["sets", "--output", str(tmp_path / "no" / "x.csv")]) == 1
        assert json.loads(capsys.readouterr().err)["error"] == "IoError"

    def test_selftest_failure(self, monkeypatch, capsys):
        import brlab.selftest

        monkeypatch.setattr(brlab.selftest, "run_checks", lambda seed=0: [("broken", False, "forced")])
        assert main(["selftest"]) == 3
        assert "broken,FAIL,forced" in capsys.readouterr().out
