"""Command-line front end: reports, CSV tables, exit codes and determinism."""

import csv
import io
import math
import os
import subprocess
import sys

import numpy as np
import pytest

from kfprice.cli import EXIT_IO, EXIT_NUMERICAL, EXIT_OK, EXIT_VALIDATION, main, parse_config_text
from kfprice.errors import ValidationError
from oracles import BS_CALL

BS = """
model.spot = 100
model.rate = 0.05
model.sigma = 0.2
contract.kind = call
contract.strike = 100
contract.maturity = 1
"""
MERTON = BS + """
model.intensity_q = 1
model.law = normal:-0.1:0.15
"""


def write(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def report(out):
    return dict(line.split("=", 1) for line in out.splitlines() if "=" in line and not line.startswith("#"))


def read_csv(text):
    rows = list(csv.reader(io.StringIO(text)))
    return rows[0], np.array(rows[1:], dtype=float)


class TestConfig:
    def test_defaults_filled(self):
        values = parse_config_text(BS)
        assert values["numerics.n_points"] == "4096" and values["mc.seed"] == "0"

    @pytest.mark.parametrize("text,key", [
        ("model.spot = 100\nmodel.rate = 0.05", "model.sigma"),
        (BS + "model.colour = red\n", "model.colour"),
        (BS + "model.spot = 90\n", "model.spot"),
        ("model.spot 100\n", "line 1"),
    ])
    def test_rejected(self, text, key):
        with pytest.raises(ValidationError) as info:
            parse_config_text(text)
        assert info.value.key == key

    def test_comments_and_blank_lines(self):
        values = parse_config_text("# header\n\n" + BS.replace("0.2", "0.2  # vol"))
        assert values["model.sigma"] == "0.2"


class TestPrice:
    def test_black_scholes(self, capsys, tmp_path):
        code, out, _ = run(capsys, "price", "--config", write(tmp_path, BS))
        rep = report(out)
        assert code == EXIT_OK
        assert rep["price"].startswith("10.45058") and rep["route"] == "series"
        assert float(rep["price"]) == pytest.approx(BS_CALL, rel=1e-6)

    def test_reports_all_settings(self, capsys, tmp_path):
        _, out, _ = run(capsys, "price", "--config", write(tmp_path, BS))
        settings = [line for line in out.splitlines() if line.startswith("# ")]
        assert "# numerics.tail_tolerance=1e-12" in settings and "# mc.n_steps=512" in settings

    def test_quadrature_route(self, capsys, tmp_path):
        _, out, _ = run(capsys, "price", "--route", "quadrature", "--config", write(tmp_path, BS))
        rep = report(out)
        assert rep["route"] == "quadrature" and float(rep["price"]) == pytest.approx(BS_CALL, rel=1e-5)

    def test_already_knocked_out(self, capsys, tmp_path):
        cfg = BS.replace("kind = call", "kind = down_and_out_call") + "contract.barrier = 105\n"
        code, out, _ = run(capsys, "price", "--config", write(tmp_path, cfg))
        rep = report(out)
        assert code == EXIT_OK and float(rep["price"]) == 0.0 and rep["knocked_out"] == "true"

    def test_bad_law_parameter(self, capsys, tmp_path):
        cfg = BS + "model.intensity_q = 0.5\nmodel.law = geometric:1.5\n"
        code, _, err = run(capsys, "price", "--config", write(tmp_path, cfg))
        assert code == EXIT_VALIDATION and "model.law" in err

    def test_bad_numbers_name_their_key(self, capsys, tmp_path):
        code, _, err = run(capsys, "price", "--config", write(tmp_path, BS.replace("sigma = 0.2", "sigma = -1")))
        assert code == EXIT_VALIDATION and "model" in err

    def test_missing_config_file(self, capsys, tmp_path):
        code, _, _ = run(capsys, "price", "--config", str(tmp_path / "absent.cfg"))
        assert code == EXIT_IO

    def test_check_passes(self, capsys, tmp_path):
        code, out, _ = run(capsys, "price", "--check", "--config", write(tmp_path, MERTON))
        checks = [line for line in out.splitlines() if line.startswith("check.")]
        assert code == EXIT_OK
        assert {c.split("=")[0] for c in checks} == {"check.normalization", "check.martingale", "check.route_agreement"}
        assert all("=pass" in c for c in checks)

    def test_check_fails_on_coarse_grid(self, capsys, tmp_path):
        code, out, _ = run(capsys, "check", "--config", write(tmp_path, MERTON + "numerics.n_points = 128\n"))
        assert code == EXIT_NUMERICAL and "check.route_agreement=FAIL" in out

    def test_starved_truncation(self, capsys, tmp_path):
        code, _, err = run(capsys, "price", "--config", write(tmp_path, MERTON + "numerics.max_terms = 1\n"))
        assert code == EXIT_NUMERICAL and "tail" in err

    def test_barrier_checks(self, capsys, tmp_path):
        cfg = MERTON.replace("kind = call", "kind = down_and_out_call") + "contract.barrier = 90\n"
        code, out, _ = run(capsys, "price", "--check", "--config", write(tmp_path, cfg))
        assert code == EXIT_OK and "check.in_out_parity=pass" in out and "reflection-approximation" in out

    def test_numbers_round_trip(self, capsys, tmp_path):
        _, out, _ = run(capsys, "price", "--check", "--config", write(tmp_path, MERTON))
        for line in out.splitlines():
            if line.startswith("check.martingale"):
                text = line.split("ratio=")[1]
                assert repr(float(text)) == text

    def test_batch(self, capsys, tmp_path):
        folder = tmp_path / "jobs"
        folder.mkdir()
        write(folder, BS, "a.cfg")
        write(folder, MERTON, "b.cfg")
        write(folder, BS + "model.intensity_q = 0.5\nmodel.law = geometric:1.5\n", "c.cfg")
        outdir = tmp_path / "reports"
        code, _, _ = run(capsys, "price", "--batch", str(folder), "--out", str(outdir))
        assert code == EXIT_VALIDATION
        assert report((outdir / "a.txt").read_text())["price"].startswith("10.45058")
        assert "model.law" in (outdir / "c.txt").read_text()
        first = {p.name: p.read_bytes() for p in outdir.iterdir()}
        run(capsys, "price", "--batch", str(folder), "--out", str(outdir))
        assert first == {p.name: p.read_bytes() for p in outdir.iterdir()}


class TestDensity:
    def test_pure_diffusion(self, capsys, tmp_path):
        code, out, _ = run(capsys, "density", "--config", write(tmp_path, BS))
        header, table = read_csv(out)
        assert code == EXIT_OK and header == ["y", "density", "atom_mass"]
        h = table[1, 0] - table[0, 0]
        assert abs(table[:, 1].sum() * h - 1) < 1e-8 and not table[:, 2].any()

    def test_poisson_atoms(self, capsys, tmp_path):
        cfg = BS.replace("sigma = 0.2", "sigma = 1e-9") + (
            "model.intensity_q = 1\nmodel.law = unit:1\ndensity.process = levy\nnumerics.grid = -8:24\n"
            "numerics.n_points = 1024\n")
        code, out, _ = run(capsys, "density", "--t", "1", "--config", write(tmp_path, cfg))
        _, table = read_csv(out)
        assert code == EXIT_OK
        for n in range(8):
            row = np.flatnonzero(table[:, 0] == n)
            assert row.size == 1
            assert table[row[0], 2] == pytest.approx(math.exp(-1) / math.factorial(n), rel=1e-12)
        assert table[:, 2].sum() == pytest.approx(1.0, abs=1e-12)

    def test_near_delta(self, capsys, tmp_path):
        cfg = BS + "density.process = levy\ndensity.x = 0\nnumerics.grid = -1:1\nnumerics.n_points = 256\n"
        code, out, _ = run(capsys, "density", "--s", str(1 - 1e-12), "--t", "1", "--config", write(tmp_path, cfg))
        _, table = read_csv(out)
        assert code == EXIT_OK and not table[:, 1].any()
        assert table[:, 2].sum() == pytest.approx(1.0, abs=1e-12)
        assert table[np.argmax(table[:, 2]), 0] == 0.0

    def test_reversed_times(self, capsys, tmp_path):
        code, _, _ = run(capsys, "density", "--s", "1", "--t", "0.5", "--config", write(tmp_path, BS))
        assert code == EXIT_VALIDATION

    def test_to_file_and_unwritable(self, capsys, tmp_path):
        target = tmp_path / "d.csv"
        assert run(capsys, "density", "--config", write(tmp_path, BS), "--out", str(target))[0] == EXIT_OK
        assert target.read_text().startswith("y,density,atom_mass\n")
        code, _, _ = run(capsys, "density", "--config", write(tmp_path, BS), "--out", str(tmp_path / "no" / "d.csv"))
        assert code == EXIT_IO


class TestSimulate:
    def test_byte_identical(self, capsys, tmp_path):
        cfg = write(tmp_path, MERTON + "mc.n_paths = 20000\n")
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        run(capsys, "simulate", "--config", cfg, "--seed", "17", "--out", str(a))
        run(capsys, "simulate", "--config", cfg, "--seed", "17", "--out", str(b))
        assert a.read_bytes() == b.read_bytes()
        run(capsys, "simulate", "--config", cfg, "--seed", "18", "--out", str(b))
        assert a.read_bytes() != b.read_bytes()

    def test_single_path(self, capsys, tmp_path):
        code, out, _ = run(capsys, "simulate", "--config", write(tmp_path, BS + "mc.n_paths = 1\n"))
        header, row = out.splitlines()
        assert code == EXIT_OK and header == "estimate,std_error,n_paths,seed"
        assert row.split(",")[1] == "nan"

    def test_black_scholes_estimate(self, capsys, tmp_path):
        _, out, _ = run(capsys, "simulate", "--config", write(tmp_path, BS + "mc.n_paths = 400000\n"))
        est, se = (float(v) for v in out.splitlines()[1].split(",")[:2])
        assert abs(est - BS_CALL) < 3 * se

    def test_unwritable_output(self, capsys, tmp_path):
        code, _, err = run(capsys, "simulate", "--config", write(tmp_path, BS + "mc.n_paths = 10\n"),
                           "--out", str(tmp_path / "missing" / "x.csv"))
        assert code == EXIT_IO and "cannot write" in err

    def test_bad_mc_setting(self, capsys, tmp_path):
        code, _, err = run(capsys, "simulate", "--config", write(tmp_path, BS + "mc.n_paths = 0\n"))
        assert code == EXIT_VALIDATION and "mc.n_paths" in err


class TestEntryPoint:
    def test_console_script(self, tmp_path):
        proc = subprocess.run([sys.executable, "-m", "kfprice.cli", "price", "--config", write(tmp_path, BS)],
                              capture_output=True, text=True, env={**os.environ, "PYTHONHASHSEED": "0"})
        assert proc.returncode == 0 and "price=10.45058" in proc.stdout

    def test_exit_code_propagates(self, tmp_path):
        cfg = write(tmp_path, BS + "model.intensity_q = 0.5\nmodel.law = geometric:1.5\n")
        proc = subprocess.run([sys.executable, "-m", "kfprice.cli", "price", "--config", cfg], capture_output=True, text=True)
        assert proc.returncode == EXIT_VALIDATION
