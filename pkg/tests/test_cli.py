import csv
import json
import os

import numpy as np
import pytest

from sottac.cli import CSV_HEADER, csv_body_without_timing, main


def read_csv(path):
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


class TestRun:
    def test_writes_per_seed_csvs_and_manifest(self, tmp_path):
        out = tmp_path / "results"
        code = main([
            "run", "--env", "tinymdp", "--method", "reinforce",
            "--seeds", "1,2,3", "--episodes", "40", "--out", str(out),
        ])
        assert code == 0
        for seed in (1, 2, 3):
            header, rows = read_csv(out / f"returns_reinforce_tinymdp_{seed}.csv")
            assert tuple(header) == CSV_HEADER
            assert len(rows) == 40
        manifest = json.loads((out / "manifest_reinforce_tinymdp.json").read_text())
        assert manifest["seeds"] == [1, 2, 3]
        assert manifest["config"]["method"] == "reinforce"
        assert len(manifest["aggregate"]["return_mean"]) == 40

    def test_zero_episodes_empty_csv_exit_zero(self, tmp_path):
        out = tmp_path / "r"
        code = main([
            "run", "--env", "tinymdp", "--method", "reinforce",
            "--seeds", "5", "--episodes", "0", "--out", str(out),
        ])
        assert code == 0
        header, rows = read_csv(out / "returns_reinforce_tinymdp_5.csv")
        assert tuple(header) == CSV_HEADER
        assert rows == []

    def test_rerun_is_bitwise_identical_modulo_timing(self, tmp_path):
        args = [
            "run", "--env", "tinymdp", "--method", "acgn2",
            "--seeds", "7,8", "--episodes", "60",
        ]
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert main(args + ["--out", str(out1)]) == 0
        assert main(args + ["--out", str(out2)]) == 0
        for seed in (7, 8):
            name = f"returns_acgn2_tinymdp_{seed}.csv"
            assert csv_body_without_timing(out1 / name) == csv_body_without_timing(out2 / name)

    def test_parallel_and_serial_identical(self, tmp_path, monkeypatch):
        args = [
            "run", "--env", "tinymdp", "--method", "natural",
            "--seeds", "11,12", "--episodes", "40",
        ]
        out_par, out_ser = tmp_path / "par", tmp_path / "ser"
        monkeypatch.delenv("SOTTAC_WORKERS", raising=False)
        assert main(args + ["--out", str(out_par)]) == 0
        monkeypatch.setenv("SOTTAC_WORKERS", "1")
        assert main(args + ["--out", str(out_ser)]) == 0
        for seed in (11, 12):
            name = f"returns_natural_tinymdp_{seed}.csv"
            assert csv_body_without_timing(out_par / name) == csv_body_without_timing(out_ser / name)

    def test_unknown_method_exits_two(self, tmp_path, capsys):
        code = main([
            "run", "--env", "tinymdp", "--method", "reinforce",
            "--config", "/nonexistent.json", "--out", str(tmp_path),
        ])
        assert code == 2  # unreadable config surfaces as usage error
        with pytest.raises(SystemExit) as exc:
            main(["run", "--env", "mars", "--out", str(tmp_path)])
        assert exc.value.code == 2

    def test_manifest_aggregates_recomputable_from_csvs(self, tmp_path):
        out = tmp_path / "res"
        assert main([
            "run", "--env", "tinymdp", "--method", "reinforce",
            "--seeds", "1,2,3,4", "--episodes", "30", "--out", str(out),
        ]) == 0
        manifest = json.loads((out / "manifest_reinforce_tinymdp.json").read_text())
        returns = []
        for seed in (1, 2, 3, 4):
            _, rows = read_csv(out / f"returns_reinforce_tinymdp_{seed}.csv")
            returns.append([float(r[1]) for r in rows])
        returns = np.array(returns)
        np.testing.assert_allclose(
            manifest["aggregate"]["return_mean"], returns.mean(axis=0), atol=1e-9
        )
        np.testing.assert_allclose(
            manifest["aggregate"]["return_std"], returns.std(axis=0), atol=1e-9
        )

    def test_config_file_overridden_by_flags(self, tmp_path):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps({"total_episodes": 20, "gamma": 0.9, "seed": 0}))
        out = tmp_path / "out"
        assert main([
            "run", "--env", "tinymdp", "--method", "reinforce", "--seeds", "1",
            "--config", str(cfg_path), "--episodes", "40", "--out", str(out),
        ]) == 0
        manifest = json.loads((out / "manifest_reinforce_tinymdp.json").read_text())
        assert manifest["config"]["total_episodes"] == 40  # flag wins
        assert manifest["config"]["gamma"] == 0.9  # file beats preset

    def test_unknown_config_key_rejected(self, tmp_path):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps({"learning_rate": 1.0}))
        code = main([
            "run", "--env", "tinymdp", "--method", "reinforce",
            "--config", str(cfg_path), "--out", str(tmp_path / "o"),
        ])
        assert code == 2

    def test_csv_uses_lf_and_utf8(self, tmp_path):
        out = tmp_path / "o"
        assert main([
            "run", "--env", "tinymdp", "--method", "reinforce",
            "--seeds", "1", "--episodes", "20", "--out", str(out),
        ]) == 0
        blob = (out / "returns_reinforce_tinymdp_1.csv").read_bytes()
        assert b"\r" not in blob
        blob.decode("utf-8")


class TestBench:
    def test_single_method_one_row_per_seed(self, tmp_path, capsys):
        out = tmp_path / "bench"
        code = main([
            "bench", "--env", "tinymdp", "--method", "acgn2",
            "--seeds", "1,2,3", "--episodes", "30", "--out", str(out),
        ])
        assert code == 0
        header, rows = read_csv(out / "bench_tinymdp.csv")
        assert header == ["method", "seed", "total_seconds", "mean_step_ns"]
        assert [r[0] for r in rows] == ["acgn2"] * 3
        assert "per-update cost ordering" in capsys.readouterr().out

    def test_all_methods_matched_budgets(self, tmp_path):
        out = tmp_path / "bench"
        code = main([
            "bench", "--env", "tinymdp", "--seeds", "1,2",
            "--episodes", "30", "--out", str(out),
        ])
        assert code == 0
        _, rows = read_csv(out / "bench_tinymdp.csv")
        assert len(rows) == 8  # 4 methods x 2 seeds
        methods = {r[0] for r in rows}
        assert methods == {"reinforce", "natural", "acgn1", "acgn2"}


class TestCheck:
    def test_only_hessian_decomposition(self, capsys):
        code = main(["check", "--only", "hessian-decomposition", "--trials", "2"])
        assert code == 0
        out = capsys.readouterr().out
        assert "check hessian-decomposition: PASS" in out

    def test_custom_dimension_and_trials(self, capsys):
        code = main(["check", "--only", "gradient-fd", "--d", "16", "--trials", "10"])
        assert code == 0

    def test_unknown_check_exits_two(self, capsys):
        assert main(["check", "--only", "nonsense"]) == 2

    def test_full_suite_passes(self, capsys):
        code = main(["check", "--trials", "3"])
        out = capsys.readouterr().out
        assert code == 0
        assert out.count("PASS") == 6
        assert "FAIL" not in out
