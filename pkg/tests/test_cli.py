import json
from pathlib import Path

import pytest

from stochosc.cli import main
from stochosc.io import read_csv

CONFIGS = Path(__file__).resolve().parents[1] / "scripts" / "configs"


def _write(tmp_path, body: str) -> Path:
    p = tmp_path / "run.toml"
    p.write_text(body)
    return p


SMALL_FP = """
[run]
scenario = "fp-evolve"
[model]
eps_r = 0.1
mu = 0.1
[grid]
n = 32
dt = 0.02
[scenario]
t_bar_end = 1.0
record_bar = [0.5]
n_trace = 5
"""

SMALL_MC = """
[run]
scenario = "mc-validate"
[model]
eps_r = 0.1
[grid]
n = 32
dt = 0.02
[mc]
n_traj = 3000
dt = 0.01
seed = 11
[scenario]
t_bar_end = 0.5
coarse_bins = 8
"""


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.toml")), ids=lambda p: p.stem)
def test_shipped_configs_validate(path, capsys):
    assert main(["validate", "--config", str(path)]) == 0
    assert "[run]" in capsys.readouterr().out


def test_fp_evolve_run(tmp_path):
    cfg = _write(tmp_path, SMALL_FP)
    assert main(["fp-evolve", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    man = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert man["status"] == "ok" and "density_t0.5.csv" in man["artifacts"]
    _, mass = read_csv(tmp_path / "o" / "trace_mass.csv")
    assert abs(mass[:, 1] - 1).max() < 1e-12
    assert set(man["warnings"]) == {"escape_rate", "boundary_mass", "cutoff_band_mass"}


def test_config_errors_exit_2(tmp_path, capsys):
    cfg = _write(tmp_path, SMALL_FP.replace("mu = 0.1", "mu = 1.5"))
    assert main(["fp-evolve", "--config", str(cfg)]) == 2
    assert "model.mu" in capsys.readouterr().err
    cfg = _write(tmp_path, SMALL_FP)
    assert main(["q-state", "--config", str(cfg)]) == 2
    with pytest.raises(SystemExit) as ei:
        main(["mc-validate", "--config", str(cfg), "--seed", "-1"])
    assert ei.value.code == 2


SPLIT_COARSE = """
[run]
scenario = "spectrum"
[model]
profile = "step"
omega_minus = 0.25
omega_plus = 1.0
eps_r = 0.001
[grid]
n = 32
dt = 0.02
[scenario]
t_bar_end = 1.0
"""


def test_numerical_failure_exits_3_with_partial_artifacts(tmp_path, capsys):
    cfg = _write(tmp_path, SPLIT_COARSE)
    assert main(["spectrum", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 3
    assert "ResolutionError" in capsys.readouterr().err
    man = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert man["status"] == "failed" and "[stage observables]" in man["error"]
    assert man["artifacts"] and all(a.endswith(".partial") for a in man["artifacts"])


def test_io_failure_exits_4(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    cfg = _write(tmp_path, SMALL_FP)
    assert main(["fp-evolve", "--config", str(cfg), "--out", str(blocker / "sub")]) == 4
    assert main(["fp-evolve", "--config", str(tmp_path / "nope.toml")]) == 4


def test_mc_validate_is_thread_count_independent(tmp_path):
    cfg = _write(tmp_path, SMALL_MC)
    outs = []
    for th in ("1", "3"):
        d = tmp_path / f"t{th}"
        assert main(["mc-validate", "--config", str(cfg), "--out", str(d), "--threads", th]) == 0
        outs.append(d)
    csvs = sorted(p.name for p in outs[0].glob("*.csv"))
    assert csvs and csvs == sorted(p.name for p in outs[1].glob("*.csv"))
    for name in csvs:
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes(), name
