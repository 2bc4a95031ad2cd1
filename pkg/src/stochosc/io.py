"""Artifact persistence: fixed-precision CSV, versioned JSON, binary grid blocks, manifests."""
from __future__ import annotations

import json
import math
import os
import platform
import struct
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from . import __version__
from .errors import ArtifactIOError, UsageError
from .grids import ComplexGrid, DensityGrid, GridSpec

FORMAT_VERSION = 1
GRID_MAGIC = b"STOCHGRD"
WARNING_KEYS = ("escape_rate", "boundary_mass", "cutoff_band_mass")


def fmt(x: Any) -> str:
    """17 significant digits; integers and strings pass through."""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    p = Path(path)
    try:
        with open(p, "w", newline="\n", encoding="utf-8") as fh:
            fh.write(",".join(header) + "\n")
            for r in rows:
                fh.write(",".join(fmt(v) for v in r) + "\n")
    except OSError as exc:
        raise ArtifactIOError(f"cannot write {p}: {exc}") from exc
    return p


def read_csv(path: str | Path) -> tuple[list[str], np.ndarray]:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return header, data


def _jsonable(x: Any) -> Any:
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return v if math.isfinite(v) else repr(v)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, complex):
        return {"re": x.real, "im": x.imag}
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    return x


def write_json(path: str | Path, doc: dict) -> Path:
    p = Path(path)
    try:
        p.write_text(json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as exc:
        raise ArtifactIOError(f"cannot write {p}: {exc}") from exc
    return p


def grid_rows(f: DensityGrid | ComplexGrid):
    """(u1, u2, value[, imag]) per active cell in fixed row-major order."""
    geo = f.grid.geometry
    ii, jj = np.nonzero(geo.active)
    u1, u2 = geo.u1[ii, jj], geo.u2[ii, jj]
    if isinstance(f, ComplexGrid):
        v = f.values[ii, jj]
        return ("u1", "u2", "re", "im"), zip(u1, u2, v.real, v.imag)
    return ("u1", "u2", "value"), zip(u1, u2, f.values[ii, jj])


def write_grid_csv(path: str | Path, f: DensityGrid | ComplexGrid) -> Path:
    header, rows = grid_rows(f)
    return write_csv(path, header, rows)


def write_grid_binary(path: str | Path, f: DensityGrid | ComplexGrid, meta: dict | None = None) -> Path:
    """Magic, u32 header length, JSON header, then little-endian float64 cell values (n x n, C order)."""
    is_c = isinstance(f, ComplexGrid)
    header = {"format_version": FORMAT_VERSION, "n": f.grid.n, "dt": f.grid.dt, "smoothing": f.grid.smoothing,
              "time": f.time, "layout": "disk-cayley", "dtype": "<c16" if is_c else "<f8",
              "kind": "complex" if is_c else f.kind, "meta": meta or {}}
    hb = json.dumps(_jsonable(header), sort_keys=True).encode()
    arr = np.ascontiguousarray(f.values, dtype="<c16" if is_c else "<f8")
    try:
        with open(path, "wb") as fh:
            fh.write(GRID_MAGIC + struct.pack("<I", len(hb)) + hb + arr.tobytes())
    except OSError as exc:
        raise ArtifactIOError(f"cannot write {path}: {exc}") from exc
    return Path(path)


def read_grid_binary(path: str | Path) -> tuple[dict, DensityGrid | ComplexGrid]:
    raw = Path(path).read_bytes()
    if not raw.startswith(GRID_MAGIC):
        raise ArtifactIOError(f"{path} is not a grid block")
    k = len(GRID_MAGIC)
    (hl,) = struct.unpack("<I", raw[k:k + 4])
    header = json.loads(raw[k + 4:k + 4 + hl])
    if header.get("format_version") != FORMAT_VERSION:
        raise ArtifactIOError(f"unsupported grid format version {header.get('format_version')}")
    n = header["n"]
    vals = np.frombuffer(raw[k + 4 + hl:], dtype=header["dtype"]).reshape(n, n).copy()
    grid = GridSpec(n=n, dt=header["dt"], smoothing=header["smoothing"])
    if header["kind"] == "complex":
        return header, ComplexGrid.from_values(grid, vals, header["time"])
    return header, DensityGrid(grid, vals, header["time"], header["kind"])


@dataclass
class RunManifest:
    scenario: str
    config_hash: str
    tool_version: str = __version__
    format_version: int = FORMAT_VERSION
    status: str = "running"
    error: str | None = None
    wall_time: float = 0.0
    stages: dict = field(default_factory=dict)
    warnings: dict = field(default_factory=lambda: {k: 0.0 for k in WARNING_KEYS})
    artifacts: list = field(default_factory=list)
    results: dict = field(default_factory=dict)
    environment: dict = field(default_factory=lambda: {"python": platform.python_version(),
                                                       "numpy": np.__version__})

    def warn(self, key: str, value: float) -> None:
        if key not in WARNING_KEYS:
            raise UsageError(f"unknown warning source {key!r}")
        self.warnings[key] = max(float(self.warnings[key]), float(value))


class ArtifactWriter:
    """Collects artifacts in ``out_dir``; on failure every artifact gets a ``.partial`` suffix."""

    def __init__(self, out_dir: str | Path, manifest: RunManifest, binary: bool = False):
        self.dir = Path(out_dir)
        self.manifest = manifest
        self.binary = binary
        self._t0 = time.perf_counter()
        try:
            self.dir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ArtifactIOError(f"cannot create {self.dir}: {exc}") from exc
        if not os.access(self.dir, os.W_OK):
            raise ArtifactIOError(f"{self.dir} is not writable")

    def _track(self, p: Path) -> Path:
        self.manifest.artifacts.append(p.name)
        return p

    def csv(self, name: str, header: Sequence[str], rows) -> Path:
        return self._track(write_csv(self.dir / name, header, rows))

    def text(self, name: str, body: str) -> Path:
        p = self.dir / name
        try:
            p.write_text(body, encoding="utf-8")
        except OSError as exc:
            raise ArtifactIOError(f"cannot write {p}: {exc}") from exc
        return self._track(p)

    def json(self, name: str, doc: dict) -> Path:
        return self._track(write_json(self.dir / name, doc))

    def grid(self, stem: str, f: DensityGrid | ComplexGrid, meta: dict | None = None) -> None:
        self._track(write_grid_csv(self.dir / f"{stem}.csv", f))
        if self.binary:
            self._track(write_grid_binary(self.dir / f"{stem}.grid", f, meta))

    def trace(self, name: str, column: str, times: Sequence[float], values: Sequence[float]) -> Path:
        return self.csv(name, ("t_bar", column), zip(times, values))

    def stage(self, name: str, seconds: float) -> None:
        self.manifest.stages[name] = self.manifest.stages.get(name, 0.0) + seconds

    @contextmanager
    def timed(self, name: str):
        """Accumulate wall time under ``name``; failures are tagged with the stage."""
        t = time.perf_counter()
        try:
            yield
        except Exception as exc:
            if not hasattr(exc, "stage"):
                exc.stage = name
            raise
        finally:
            self.stage(name, time.perf_counter() - t)

    def finish(self, error: BaseException | None = None) -> Path:
        m = self.manifest
        m.wall_time = time.perf_counter() - self._t0
        if error is None:
            m.status = "ok"
        else:
            m.status = "failed"
            stage = getattr(error, "stage", None)
            m.error = f"{type(error).__name__}: {error}" + (f" [stage {stage}]" if stage else "")
            renamed = []
            for name in m.artifacts:
                src = self.dir / name
                if src.exists():
                    src.replace(self.dir / (name + ".partial"))
                renamed.append(name + ".partial")
            m.artifacts = renamed
        return write_json(self.dir / "manifest.json", asdict(m))
