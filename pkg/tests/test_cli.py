import subprocess
import sys

import numpy as np
import pytest

from lspe_kit.cli import main
from lspe_kit.fileio import read_matrix, write_matrix, write_measurements


def write(path, text):
    path.write_text(text)
    return str(path)


def test_sweep_to_file_and_seed_override(tmp_path, capsys):
    cfg = write(tmp_path / "c.cfg", "n = 3\ntrials = 20\n[sweep]\ndelta_grid = 2\nestimators = lspe-c\n")
    out = tmp_path / "out.csv"
    assert main(["sweep", "--config", cfg, "--output", str(out), "--seed", "9", "--threads", "2"]) == 0
    rows = out.read_text().splitlines()
    assert len(rows) == 2 and rows[1].endswith(",20,9")


def test_sweep_to_stdout(tmp_path, capsys):
    cfg = write(tmp_path / "c.cfg", "n = 3\ntrials = 5\ndelta_grid = 2\nestimators = si:identity\n")
    assert main(["sweep", "--config", cfg, "--average-matrices", "2"]) == 0
    assert capsys.readouterr().out.splitlines()[1].startswith("si:identity,3,6,2,")


def test_validate_prints_summary(tmp_path, capsys):
    cfg = write(tmp_path / "c.cfg", "n_grid = 3\ndelta = 4\ntrials = 50\nnoise_y_var = 0.1\n")
    assert main(["validate", "--config", cfg]) == 0
    captured = capsys.readouterr()
    assert "bound_violations" in captured.err
    assert len(captured.out.splitlines()) == 3


def test_estimate_writes_matrix(tmp_path):
    write_matrix(tmp_path / "A.txt", np.array([[1.0]]))
    write_measurements(tmp_path / "y.txt", np.array([3.0]))
    cfg = write(tmp_path / "e.cfg", "matrix = A.txt\nmeasurements = y.txt\nestimator = lspe-r\n")
    assert main(["estimate", "--config", cfg, "--output", str(tmp_path / "x.txt")]) == 0
    assert read_matrix(tmp_path / "x.txt")[0, 0] == pytest.approx(np.sqrt(3))


def test_config_error_exit_code(tmp_path, capsys):
    cfg = write(tmp_path / "c.cfg", "n = 3\nwat = 1\n")
    assert main(["sweep", "--config", cfg]) == 1
    assert "c.cfg:2:" in capsys.readouterr().err
    assert main(["sweep", "--config", str(tmp_path / "missing.cfg")]) == 1


def test_numerical_failure_exit_code(tmp_path, capsys):
    write_matrix(tmp_path / "A.txt", np.array([[0.0]]))
    write_measurements(tmp_path / "y.txt", np.array([0.0]))
    cfg = write(tmp_path / "e.cfg", "matrix = A.txt\nmeasurements = y.txt\nestimator = lspe-r\n")
    assert main(["estimate", "--config", cfg]) == 2
    assert "numerical failure" in capsys.readouterr().err


def test_console_script_runs(tmp_path):
    cfg = write(tmp_path / "c.cfg", "samples = 20000\n")
    proc = subprocess.run([sys.executable, "-m", "lspe_kit.cli", "moments", "--config", cfg],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "overall: PASS" in proc.stdout
