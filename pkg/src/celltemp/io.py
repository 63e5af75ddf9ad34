"""CSV series files, file hashing and run manifests."""
from __future__ import annotations

import csv
import hashlib
import json
import os
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DomainError
from .sim import Measurements, TimeSeries

COLUMNS = ("time_s", "current_a", "voltage_v", "surf_temp_c", "core_temp_c", "coolant_temp_c")
REQUIRED = tuple(c for c in COLUMNS if c != "core_temp_c")
_FIELD = {
    "time_s": "t",
    "current_a": "current",
    "voltage_v": "voltage",
    "surf_temp_c": "t_surf",
    "core_temp_c": "t_core",
    "coolant_temp_c": "t_fluid",
}


class IngestError(DomainError):
    """A series file that does not follow the schema."""


class ResampleWarning(UserWarning):
    pass


def fmt(x) -> str:
    """Shortest decimal that round-trips to the same double."""
    return repr(float(x))


def write_series_csv(series: Measurements, path):
    cols = [c for c in COLUMNS if c != "core_temp_c" or series.labeled]
    arrays = [getattr(series, _FIELD[c]) for c in cols]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(cols)
        for row in zip(*arrays):
            wr.writerow([fmt(v) for v in row])


def write_table(path, header, rows):
    """Generic CSV writer; floats are written round-trip exact."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for row in rows:
            wr.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])


def ingest_csv(path, rate_hz=1.0) -> Measurements:
    """Read a series file; returns a TimeSeries when core_temp_c is present.

    Samples not on a ``1/rate_hz`` grid are linearly resampled onto one,
    with a ResampleWarning.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise IngestError(f"{path}:1: empty file") from None
        missing = [c for c in REQUIRED if c not in header]
        if missing:
            raise IngestError(f"{path}:1: missing columns {missing}")
        unknown = [c for c in header if c not in COLUMNS]
        if unknown:
            raise IngestError(f"{path}:1: unknown columns {unknown}")
        cols = {c: [] for c in header}
        for row in reader:
            line = reader.line_num
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise IngestError(f"{path}:{line}: expected {len(header)} fields, got {len(row)}")
            for name, cell in zip(header, row):
                try:
                    value = float(cell)
                except ValueError:
                    raise IngestError(f"{path}:{line}: bad value {cell!r} for {name}") from None
                if not np.isfinite(value):
                    raise IngestError(f"{path}:{line}: non-finite value for {name}")
                cols[name].append(value)
    data = {c: np.array(v) for c, v in cols.items()}
    t = data["time_s"]
    if t.size == 0:
        raise IngestError(f"{path}: no data rows")
    if t.size > 1 and np.any(np.diff(t) <= 0):
        bad = int(np.flatnonzero(np.diff(t) <= 0)[0]) + 3  # header + 1-based
        raise IngestError(f"{path}:{bad}: time is not strictly increasing")
    step = 1.0 / rate_hz
    if t.size > 1 and not np.allclose(np.diff(t), step, rtol=0, atol=1e-9 * step):
        grid = t[0] + step * np.arange(int(np.floor((t[-1] - t[0]) / step + 1e-9)) + 1)
        warnings.warn(f"{path}: resampling {t.size} samples onto a {rate_hz:g} Hz grid ({grid.size} samples)", ResampleWarning, stacklevel=2)
        data = {c: np.interp(grid, t, v) for c, v in data.items()}
    kw = {_FIELD[c]: v for c, v in data.items()}
    if "t_core" in kw:
        return TimeSeries(**kw)
    return Measurements(**kw)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def hash_tree(root, paths):
    """``{relative path: sha256}`` for the given files, sorted by path."""
    out = {}
    for p in sorted(paths):
        out[os.path.relpath(p, root)] = sha256_file(p)
    return out


@dataclass
class RunManifest:
    """Provenance of one CLI run. ``runtime_s`` is the only volatile field."""

    command: str
    config_hash: str
    seeds: dict
    version: str
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    parameters: dict = field(default_factory=dict)
    runtime_s: float = 0.0

    def write(self, run_dir):
        path = os.path.join(run_dir, "manifest.json")
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True)
            fh.write("\n")
        return path

    @classmethod
    def read(cls, path):
        with open(path) as fh:
            return cls(**json.load(fh))
