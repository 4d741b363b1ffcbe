import json
import os

import numpy as np
import pytest

from vctest.cli import main
from vctest.datasets import dataset_path


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def write_csv(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(str(v) for v in row) + "\n")


@pytest.fixture()
def toy_csv(tmp_path):
    # balanced nested 4 x 3 x 2 with a simulated response
    rng = np.random.default_rng(42)
    rows = []
    k = 0
    for b in range(4):
        ub = rng.normal() * 0.8
        for p in range(3):
            vp = rng.normal() * 0.5
            for _ in range(2):
                rows.append([f"{ub + vp + rng.normal():.6f}", f"b{b}", f"p{p}"])
                k += 1
    path = tmp_path / "toy.csv"
    write_csv(path, ["y", "blk", "plt"], rows)
    return str(path)


class TestFit:
    def test_pastes_fit(self, capsys):
        code, out, err = run_cli(
            capsys,
            "fit", str(dataset_path("pastes.csv")),
            "--response", "strength", "--nested", "batch/cask",
        )
        assert code == 0, err
        report = json.loads(out)
        assert report["schema"] == 1
        assert report["command"] == "fit"
        tau = np.sort(report["fit"]["tau_hat"])
        assert abs(tau[0] - 2.44) <= 0.01 * 2.44
        assert abs(tau[1] - 12.49) <= 0.01 * 12.49
        assert report["model"]["factors"] == ["batch", "cask-in-batch"]

    def test_oats_fit(self, capsys):
        code, out, err = run_cli(
            capsys,
            "fit", str(dataset_path("oats.csv")),
            "--response", "yield", "--nested", "block/variety",
            "--fixed", "nitro", "--fixed", "variety",
        )
        assert code == 0, err
        tau = np.sort(json.loads(out)["fit"]["tau_hat"])
        assert abs(tau[0] - 0.675) <= 0.01 * 0.675
        assert abs(tau[1] - 1.32) <= 0.01 * 1.32

    def test_constant_response_exits_2(self, capsys, tmp_path):
        path = tmp_path / "const.csv"
        write_csv(path, ["y", "g"], [[1.0, f"g{i % 3}"] for i in range(9)])
        code, out, err = run_cli(
            capsys, "fit", str(path), "--response", "y", "--random", "g"
        )
        assert code == 2
        assert "column space" in err

    def test_too_few_rows_exits_2(self, capsys, tmp_path):
        path = tmp_path / "tiny.csv"
        write_csv(path, ["y", "g"], [[1.2, "a"], [0.7, "b"]])
        code, _, err = run_cli(
            capsys, "fit", str(path), "--response", "y", "--random", "g"
        )
        assert code == 2
        assert "too few rows" in err

    def test_missing_column_exits_2(self, capsys, toy_csv):
        code, _, err = run_cli(
            capsys, "fit", toy_csv, "--response", "nope", "--random", "blk"
        )
        assert code == 2
        assert "no column" in err

    def test_confounded_design_exits_4(self, capsys, toy_csv):
        code, _, err = run_cli(
            capsys, "fit", toy_csv, "--response", "y",
            "--random", "blk", "--random", "blk",
        )
        assert code == 4

    def test_report_written_atomically(self, capsys, toy_csv, tmp_path):
        out_path = tmp_path / "report.json"
        code, _, _ = run_cli(
            capsys, "fit", toy_csv, "--response", "y", "--nested", "blk/plt",
            "--out", str(out_path),
        )
        assert code == 0
        assert json.loads(out_path.read_text())["command"] == "fit"
        # error path must not leave a file
        out_path2 = tmp_path / "never.json"
        code, _, _ = run_cli(
            capsys, "fit", toy_csv, "--response", "nope", "--random", "blk",
            "--out", str(out_path2),
        )
        assert code == 2
        assert not out_path2.exists()


class TestTest:
    def test_machines_two_sided(self, capsys):
        code, out, err = run_cli(
            capsys,
            "test", str(dataset_path("machines.csv")),
            "--response", "score", "--crossed", "machine,worker",
            "--contrast", "1,-1", "--alt", "two-sided",
            "--bootstrap", "60", "--seed", "7",
        )
        assert code == 0, err
        report = json.loads(out)
        block = report["test"]
        assert 0.0 <= block["p_two"] <= 1.0
        assert block["p_one"] is None
        assert block["b"] == 60 and block["seed"] == 7
        null_tau = report["test"]["tau_null"]
        assert abs(null_tau[0] - null_tau[1]) < 1e-9

    def test_one_sided_and_draws(self, capsys, toy_csv, tmp_path):
        draws = tmp_path / "draws.csv"
        code, out, err = run_cli(
            capsys,
            "test", toy_csv, "--response", "y", "--nested", "blk/plt",
            "--contrast", "1,-1", "--alt", "greater",
            "--bootstrap", "40", "--seed", "3", "--dump-draws", str(draws),
        )
        assert code == 0, err
        report = json.loads(out)
        assert report["test"]["p_one"] is not None
        lines = draws.read_text().splitlines()
        assert lines[0] == "b,tau_star_1,tau_star_2,lambda_star"
        assert len(lines) == 41

    def test_seed_reproducibility(self, capsys, toy_csv):
        args = (
            "test", toy_csv, "--response", "y", "--nested", "blk/plt",
            "--contrast", "1,-1", "--bootstrap", "30", "--seed", "11",
        )
        code1, out1, _ = run_cli(capsys, *args)
        code2, out2, _ = run_cli(capsys, *args)
        assert code1 == code2 == 0
        r1, r2 = json.loads(out1), json.loads(out2)
        del r1["timing_seconds"], r2["timing_seconds"]
        assert r1 == r2

    def test_rank_deficient_contrast_exits_2(self, capsys, toy_csv):
        code, _, err = run_cli(
            capsys,
            "test", toy_csv, "--response", "y", "--nested", "blk/plt",
            "--contrast", "1,-1;2,-2", "--bootstrap", "10", "--seed", "1",
        )
        assert code == 2
        assert "rank deficient" in err

    def test_bad_alt_count_exits_2(self, capsys, toy_csv):
        code, _, err = run_cli(
            capsys,
            "test", toy_csv, "--response", "y", "--nested", "blk/plt",
            "--contrast", "1,-1", "--alt", "greater,less",
            "--bootstrap", "10", "--seed", "1",
        )
        assert code == 2

    def test_nonconvergence_exits_3(self, capsys, toy_csv, tmp_path):
        # drop a row so the moment start is inexact, then forbid iterating
        lines = open(toy_csv).read().splitlines()
        unbalanced = tmp_path / "unbalanced.csv"
        unbalanced.write_text("\n".join(lines[:-1]) + "\n")
        code, _, err = run_cli(
            capsys, "fit", str(unbalanced), "--response", "y",
            "--nested", "blk/plt", "--max-iter", "0",
        )
        assert code == 3
        assert "converge" in err

    def test_bootstrap_failure_exits_5(self, capsys, toy_csv, monkeypatch):
        import vctest.cli as cli_module
        from vctest.errors import BootstrapFailureError

        def boom(*args, **kwargs):
            raise BootstrapFailureError("9 of 10 bootstrap replicates failed")

        monkeypatch.setattr(cli_module, "bootstrap_test", boom)
        code, _, err = run_cli(
            capsys,
            "test", toy_csv, "--response", "y", "--nested", "blk/plt",
            "--contrast", "1,-1", "--bootstrap", "10", "--seed", "1",
        )
        assert code == 5
        assert "bootstrap" in err


class TestSimulate:
    def manifest(self, tmp_path, **overrides):
        doc = {
            "family": "nested",
            "sizes": [[4, 3, 2]],
            "taus": [[0.5, 0.5]],
            "s": 3,
            "b": 9,
            "contrast": {"a": [[1.0, -1.0]], "alternative": "two-sided"},
            "seed": 99,
        }
        doc.update(overrides)
        path = tmp_path / "grid.json"
        path.write_text(json.dumps(doc))
        return str(path)

    def test_toy_manifest(self, capsys, tmp_path):
        cfg = self.manifest(tmp_path)
        out = tmp_path / "results.csv"
        code, _, err = run_cli(
            capsys, "simulate", "--config", cfg, "--out", str(out)
        )
        assert code == 0, err
        lines = out.read_text().splitlines()
        assert len(lines) == 2
        assert lines[0].startswith("family,m,n,r_or_rho")
        assert os.path.exists(str(out) + ".manifest.json")

    def test_deterministic_rerun(self, capsys, tmp_path):
        cfg = self.manifest(tmp_path)
        out1, out2 = tmp_path / "r1.csv", tmp_path / "r2.csv"
        assert run_cli(capsys, "simulate", "--config", cfg, "--out", str(out1))[0] == 0
        assert run_cli(capsys, "simulate", "--config", cfg, "--out", str(out2))[0] == 0
        assert out1.read_bytes() == out2.read_bytes()

    def test_malformed_manifest_exits_2(self, capsys, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"family": "weird"}')
        code, _, err = run_cli(
            capsys, "simulate", "--config", str(path), "--out", str(tmp_path / "x.csv")
        )
        assert code == 2
        assert "malformed manifest" in err


class TestEncodingStability:
    def test_first_appearance_order(self, capsys, tmp_path):
        # levels encoded by first appearance, so component labels are stable
        path = tmp_path / "order.csv"
        rng = np.random.default_rng(0)
        rows = [[f"{rng.normal():.4f}", g] for g in ["z", "z", "a", "a", "m", "m"] * 3]
        write_csv(path, ["y", "g"], rows)
        code, out, _ = run_cli(
            capsys, "fit", str(path), "--response", "y", "--random", "g"
        )
        assert code == 0
        assert json.loads(out)["model"]["block_sizes"] == [3]
