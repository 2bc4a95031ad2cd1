import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from stochosc.config import parse_config, validate_config
from stochosc.errors import ArtifactIOError, ConfigError, UsageError
from stochosc.grids import ComplexGrid, GridSpec, delta
from stochosc.io import (WARNING_KEYS, ArtifactWriter, RunManifest, fmt, read_csv, read_grid_binary,
                         write_grid_binary, write_grid_csv)

BASE = {"run": {"scenario": "fp-evolve"}, "model": {"eps_r": 0.1}, "grid": {"n": 32}}


def _with(**patch):
    d = json.loads(json.dumps(BASE))
    for k, v in patch.items():
        sec, key = k.split("__")
        d.setdefault(sec, {})[key] = v
    return d


def test_minimal_config_parses():
    cfg = parse_config(BASE)
    assert cfg.grid.n == 32 and cfg.mc is None and cfg.model.eps_r == 0.1


def test_out_of_range_mu_names_the_key():
    with pytest.raises(ConfigError) as ei:
        parse_config(_with(model__mu=1.5))
    assert any(p.startswith("model.mu") for p in ei.value.problems)


def test_every_problem_is_reported():
    d = _with(model__colour="red", scenario__oscillator=3)
    del d["grid"]
    with pytest.raises(ConfigError) as ei:
        parse_config(d)
    probs = "\n".join(ei.value.problems)
    assert "model.colour: unknown key" in probs and "grid: missing section" in probs
    assert "scenario.oscillator" in probs


def test_type_errors_and_mc_requirement():
    with pytest.raises(ConfigError, match=r"grid.n: expected int"):
        parse_config(_with(grid__n="big"))
    d = _with(run__scenario="mc-validate")
    with pytest.raises(ConfigError, match=r"mc: missing section"):
        parse_config(d)
    with pytest.raises(ConfigError, match=r"mc.seed"):
        parse_config(_with(run__scenario="mc-validate", mc__seed=2 ** 64))


def test_round_trip_and_digest(tmp_path):
    cfg = parse_config(_with(scenario__record_bar=[1.0, 2.0], mc__seed=7))
    p = tmp_path / "c.toml"
    p.write_text(cfg.dumps())
    again = validate_config(p)
    assert again == cfg and again.digest() == cfg.digest()
    assert cfg.with_overrides(seed=9).digest() != cfg.digest()
    assert cfg.with_overrides(out_dir="x").output.dir == "x"


def test_unreadable_and_malformed_files(tmp_path):
    with pytest.raises(ArtifactIOError):
        validate_config(tmp_path / "missing.toml")
    bad = tmp_path / "bad.toml"
    bad.write_text("[run\nscenario=")
    with pytest.raises(ConfigError):
        validate_config(bad)


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_fmt_round_trips_doubles(x):
    assert float(fmt(x)) == x


def test_fmt_special_cases():
    assert fmt(True) == "1" and fmt(np.int64(3)) == "3" and fmt("a") == "a"
    assert fmt(math.inf) == "inf"


def test_grid_binary_and_csv_round_trip(tmp_path):
    g = GridSpec(n=16, dt=0.05)
    f = delta(g, 0.1, 1.0, kind="probability")
    hdr, back = read_grid_binary(write_grid_binary(tmp_path / "f.grid", f, {"tag": 1}))
    assert hdr["meta"] == {"tag": 1} and np.array_equal(back.values, f.values) and back.kind == f.kind
    c = ComplexGrid.from_values(g, f.values * (1 - 2j), 0.5)
    _, cb = read_grid_binary(write_grid_binary(tmp_path / "c.grid", c))
    assert np.array_equal(cb.values, c.values) and cb.time == 0.5
    header, data = read_csv(write_grid_csv(tmp_path / "f.csv", f))
    assert header == ["u1", "u2", "value"]
    assert data[:, 2].sum() * g.geometry.h ** 2 == pytest.approx(f.mass(), rel=1e-14)
    (tmp_path / "junk.grid").write_bytes(b"nothing")
    with pytest.raises(ArtifactIOError):
        read_grid_binary(tmp_path / "junk.grid")


def test_manifest_warning_keys():
    m = RunManifest("fp-evolve", "abc")
    assert set(m.warnings) == set(WARNING_KEYS)
    m.warn("escape_rate", 0.2)
    m.warn("escape_rate", 0.1)
    assert m.warnings["escape_rate"] == 0.2
    with pytest.raises(UsageError):
        m.warn("other", 1.0)


def test_failed_run_marks_partial_artifacts(tmp_path):
    m = RunManifest("fp-evolve", "abc")
    w = ArtifactWriter(tmp_path, m)
    w.trace("trace_mass.csv", "mass", [0.0, 1.0], [1.0, 1.0])
    with pytest.raises(RuntimeError):
        with w.timed("pde"):
            raise RuntimeError("boom")
    try:
        with w.timed("pde"):
            raise RuntimeError("boom")
    except RuntimeError as exc:
        w.finish(exc)
    doc = json.loads((tmp_path / "manifest.json").read_text())
    assert doc["status"] == "failed" and "[stage pde]" in doc["error"]
    assert doc["artifacts"] == ["trace_mass.csv.partial"]
    assert (tmp_path / "trace_mass.csv.partial").exists() and not (tmp_path / "trace_mass.csv").exists()
    assert doc["stages"]["pde"] >= 0.0


def test_successful_run_manifest(tmp_path):
    m = RunManifest("fp-evolve", "abc")
    w = ArtifactWriter(tmp_path / "sub", m)
    w.json("summary.json", {"x": np.float64(1.5), "bad": math.nan})
    w.finish()
    doc = json.loads((tmp_path / "sub" / "manifest.json").read_text())
    assert doc["status"] == "ok" and doc["error"] is None and doc["artifacts"] == ["summary.json"]
    assert json.loads((tmp_path / "sub" / "summary.json").read_text()) == {"bad": "nan", "x": 1.5}
