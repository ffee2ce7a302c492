import json
import math

import numpy as np
import pytest

from gswdesign import build_setup, ht_estimate, run_gsw
from gswdesign._jsonio import dumps
from gswdesign.cli import load_dataset, load_matrix_csv, load_outcomes_csv, main, read_config_file
from gswdesign.errors import DataError, ParameterError


@pytest.fixture
def dataset(tmp_path):
    rng = np.random.default_rng(0)
    X = rng.standard_normal((8, 2))
    a = rng.standard_normal(8)
    b = rng.standard_normal(8)
    x_path = tmp_path / "X.csv"
    out_path = tmp_path / "outcomes.csv"
    x_path.write_text("\n".join(",".join(repr(float(v)) for v in row) for row in X) + "\n")
    out_path.write_text("a,b\n" + "\n".join(f"{float(ai)!r},{float(bi)!r}" for ai, bi in zip(a, b)) + "\n")
    return {"X": X, "a": a, "b": b, "x": str(x_path), "outcomes": str(out_path), "dir": tmp_path}


class TestLoaders:
    def test_matrix_roundtrip(self, dataset):
        np.testing.assert_allclose(load_matrix_csv(dataset["x"]), dataset["X"])

    def test_ragged_row_named(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("1,2\n3\n")
        with pytest.raises(DataError, match="row 2"):
            load_matrix_csv(str(p))

    def test_non_numeric_location(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("1,2\n3,x\n")
        with pytest.raises(DataError, match="row 2, column 2"):
            load_matrix_csv(str(p))

    def test_outcomes_header_required(self, tmp_path):
        p = tmp_path / "o.csv"
        p.write_text("a,c\n1,2\n")
        with pytest.raises(DataError, match="header"):
            load_outcomes_csv(str(p))

    def test_mu_only_disables_estimation(self, dataset, tmp_path):
        p = tmp_path / "mu.csv"
        p.write_text("mu\n" + "\n".join("1.0" for _ in range(8)) + "\n")
        ds = load_dataset(dataset["x"], str(p))
        assert ds.a is None and ds.mu is not None

    def test_mu_consistency_checked(self, dataset, tmp_path):
        p = tmp_path / "o.csv"
        p.write_text("a,b,mu\n" + "\n".join("1,1,3" for _ in range(8)) + "\n")
        with pytest.raises(DataError, match="mu column disagrees"):
            load_dataset(dataset["x"], str(p))

    def test_length_mismatch(self, dataset, tmp_path):
        p = tmp_path / "o.csv"
        p.write_text("mu\n1.0\n")
        with pytest.raises(DataError, match="length"):
            load_dataset(dataset["x"], str(p))


class TestConfigFile:
    def test_parse_and_override(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text("phi = 0.4\nseed = 11\nreplications=100\n# comment\n")
        values = read_config_file(str(p))
        assert values == {"phi": "0.4", "seed": "11", "replications": "100"}

    def test_unknown_key_rejected_by_name(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text("phy = 0.4\n")
        with pytest.raises(ParameterError, match="phy"):
            read_config_file(str(p))

    def test_cli_flag_overrides_file(self, dataset, tmp_path, capsys):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("phi=0.9\nseed=1\n")
        out1 = tmp_path / "z1.csv"
        out2 = tmp_path / "z2.csv"
        # file phi 0.9 vs flag phi 0.5 must give different designs in general
        assert main(["design", "--x", dataset["x"], "--config", str(cfg), "--out", str(out1)]) == 0
        assert main(["design", "--x", dataset["x"], "--config", str(cfg), "--phi", "0.5",
                     "--out", str(out2)]) == 0
        setup_09 = build_setup(dataset["X"], 0.9)
        np.testing.assert_allclose(load_matrix_csv(str(out1))[:, 0], run_gsw(setup_09, 1))


class TestDesignCommand:
    def test_deterministic_output(self, dataset, tmp_path):
        out1, out2 = tmp_path / "z1.csv", tmp_path / "z2.csv"
        args = ["design", "--x", dataset["x"], "--phi", "0.5", "--seed", "7"]
        assert main(args + ["--out", str(out1)]) == 0
        assert main(args + ["--out", str(out2)]) == 0
        assert out1.read_bytes() == out2.read_bytes()

    def test_signs_match_library(self, dataset, tmp_path):
        out = tmp_path / "z.csv"
        main(["design", "--x", dataset["x"], "--phi", "0.5", "--seed", "3", "--out", str(out)])
        z = load_matrix_csv(str(out))[:, 0]
        np.testing.assert_array_equal(z, run_gsw(build_setup(dataset["X"], 0.5), 3))

    def test_manifest_sidecar(self, dataset, tmp_path):
        out = tmp_path / "z.csv"
        main(["design", "--x", dataset["x"], "--phi", "0.5", "--seed", "3", "--out", str(out)])
        manifest = json.loads((tmp_path / "z.csv.manifest.json").read_text())
        assert manifest["manifest"]["command"] == "design"
        assert dataset["x"] in manifest["manifest"]["input_digests"]


class TestEstimateCommand:
    def test_round_trip_bit_identical(self, dataset, tmp_path):
        z_path = tmp_path / "z.csv"
        report_path = tmp_path / "report.json"
        main(["design", "--x", dataset["x"], "--phi", "0.5", "--seed", "9", "--out", str(z_path)])
        rc = main(["estimate", "--x", dataset["x"], "--outcomes", dataset["outcomes"],
                   "--z", str(z_path), "--phi", "0.5", "--out", str(report_path)])
        assert rc == 0
        report = json.loads(report_path.read_text())
        z = run_gsw(build_setup(dataset["X"], 0.5), 9)
        assert report["tau_hat"] == ht_estimate(z, dataset["a"], dataset["b"])

    def test_missing_outcomes_is_data_error(self, dataset, tmp_path):
        rc = main(["estimate", "--x", dataset["x"], "--phi", "0.5",
                   "--out", str(tmp_path / "r.json")])
        assert rc == 2


class TestSimulateCommand:
    def test_report_schema(self, dataset, tmp_path):
        out = tmp_path / "sim.json"
        samples = tmp_path / "samples.csv"
        rc = main(["simulate", "--x", dataset["x"], "--outcomes", dataset["outcomes"],
                   "--phi", "0.5", "--seed", "2", "--reps", "200", "--mode", "gsw",
                   "--out", str(out), "--samples-csv", str(samples)])
        assert rc == 0
        report = json.loads(out.read_text())
        for key in ("schema_version", "config", "mean", "variance", "mc_standard_error",
                    "checks", "manifest"):
            assert key in report
        assert report["config"]["mode"] == "gsw"
        assert len(samples.read_text().strip().splitlines()) == 201

    def test_byte_identical_with_pinned_epoch(self, dataset, tmp_path, monkeypatch):
        monkeypatch.setenv("SOURCE_DATE_EPOCH", "1700000000")
        out1, out2 = tmp_path / "s1.json", tmp_path / "s2.json"
        args = ["simulate", "--x", dataset["x"], "--outcomes", dataset["outcomes"],
                "--phi", "0.5", "--seed", "2", "--reps", "50", "--mode", "iid"]
        assert main(args + ["--out", str(out1)]) == 0
        assert main(args + ["--out", str(out2)]) == 0
        assert out1.read_bytes() == out2.read_bytes()


class TestSkeletalCommand:
    def test_trajectory_and_summary(self, dataset, tmp_path):
        traj = tmp_path / "traj.csv"
        summary = tmp_path / "summary.json"
        rc = main(["skeletal", "--x", dataset["x"], "--outcomes", dataset["outcomes"],
                   "--phi", "0.5", "--seed", "4", "--out", str(traj), "--summary", str(summary)])
        assert rc == 0
        lines = traj.read_text().strip().splitlines()
        assert lines[0] == "t,case,pivot_gs,pivot_sk,g1,g2,delta,eta,M_gs,M_tilde,M"
        assert len(lines) == 9  # header + one row per round
        payload = json.loads(summary.read_text())
        assert payload["qv_sum"] == pytest.approx(payload["v_norm_sq"], rel=1e-8)


class TestVerifyCommand:
    def test_single_suite(self, capsys):
        assert main(["verify", "--suite", "srswor"]) == 0
        out = capsys.readouterr().out
        assert "formula_vs_bruteforce" in out and "ok" in out

    def test_all_suites_pass(self, capsys):
        assert main(["verify", "--suite", "all"]) == 0


class TestErrorsAndExitCodes:
    def test_usage_error_is_exit_1(self, dataset, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["simulate", "--x", dataset["x"], "--mode", "bogus",
                  "--out", str(tmp_path / "x.json")])
        assert exc.value.code == 1

    def test_missing_phi_is_exit_1(self, dataset, tmp_path):
        rc = main(["design", "--x", dataset["x"], "--seed", "1", "--out", str(tmp_path / "z.csv")])
        assert rc == 1

    def test_bad_data_is_exit_2(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("1,2\n3\n")
        rc = main(["design", "--x", str(p), "--phi", "0.5", "--seed", "1",
                   "--out", str(tmp_path / "z.csv")])
        assert rc == 2

    def test_no_mkdir_flag(self, dataset, tmp_path):
        rc = main(["--no-mkdir", "design", "--x", dataset["x"], "--phi", "0.5", "--seed", "1",
                   "--out", str(tmp_path / "missing" / "z.csv")])
        assert rc == 2


class TestJsonEmission:
    def test_nan_becomes_null_with_warning(self):
        text = dumps({"value": math.nan, "ok": 1.5})
        payload = json.loads(text)
        assert payload["value"] is None
        assert any("non-finite" in w for w in payload["warnings"])

    def test_seventeen_digit_floats(self):
        text = dumps({"x": 0.1})
        assert "0.10000000000000001" in text

    def test_stable_field_order(self):
        assert dumps({"b": 1, "a": 2}).index('"b"') < dumps({"b": 1, "a": 2}).index('"a"')

    def test_arrays_serialized(self):
        payload = json.loads(dumps({"xs": np.array([1.5, 2.5])}))
        assert payload["xs"] == [1.5, 2.5]
