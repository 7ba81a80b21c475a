"""Dataset file format: one CSV per dataset plus a key-value sidecar.

Columns are the 7 raw parameters, then M time values, M ln Kd values,
M gamma1 (pH) and M gamma2 (log10 Ca) values; one row per sample. The
sidecar records the grid size and bounds and the generator seed. Floats
are written with repr so a load/save round trip is byte-identical.
"""

from __future__ import annotations

import csv
import logging
from pathlib import Path

import numpy as np

from .data import (
    PARAM_NAMES,
    DataError,
    Dataset,
    ParameterVector,
    TimeGrid,
    Trajectory,
    is_valid_trajectory,
)

log = logging.getLogger(__name__)


def dataset_header(m: int) -> list[str]:
    cols = list(PARAM_NAMES)
    for stem in ("t", "ln_kd", "gamma1", "gamma2"):
        cols += [f"{stem}_{k}" for k in range(1, m + 1)]
    return cols


def meta_path(csv_path) -> Path:
    return Path(csv_path).with_suffix(".meta")


def write_meta(path, entries: dict) -> None:
    lines = [f"{key} = {value}" for key, value in entries.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_meta(path) -> dict[str, str]:
    entries: dict[str, str] = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DataError(f"malformed metadata line: {line!r}")
        key, value = line.split("=", 1)
        entries[key.strip()] = value.strip()
    return entries


def save_dataset(ds: Dataset, csv_path, meta: dict | None = None) -> None:
    csv_path = Path(csv_path)
    m = len(ds.samples[0].grid) if ds.samples else 0
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(dataset_header(m))
        for traj in ds.samples:
            row = [repr(float(v)) for v in traj.params.as_array()]
            for series in (traj.grid.times, traj.ln_kd, traj.gamma1, traj.gamma2):
                row += [repr(float(v)) for v in series]
            writer.writerow(row)
    entries = {"m": m, "n_samples": len(ds.samples)}
    if ds.samples:
        entries["t_min"] = repr(float(ds.samples[0].grid.times[0]))
        entries["t_max"] = repr(float(ds.samples[0].grid.times[-1]))
    entries.update(meta or {})
    write_meta(meta_path(csv_path), entries)


def load_dataset(csv_path) -> Dataset:
    """Read a dataset CSV, dropping rows that fail the false-run filter."""
    csv_path = Path(csv_path)
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        n_cols = len(header)
        if (n_cols - 7) % 4 != 0 or n_cols < 7:
            raise DataError(f"unexpected column count {n_cols}")
        m = (n_cols - 7) // 4
        if header != dataset_header(m):
            raise DataError("header does not match the dataset schema")
        samples: list[Trajectory] = []
        dropped = 0
        for row in reader:
            if len(row) != n_cols:
                raise DataError(f"row has {len(row)} fields, expected {n_cols}")
            values = np.array([float(v) for v in row])
            gamma1 = values[7 + 2 * m : 7 + 3 * m]
            # False-run filter on the raw row, before any constructor runs.
            if not np.all(np.isfinite(values)) or np.any(gamma1 < 0) or np.any(gamma1 > 14):
                dropped += 1
                continue
            traj = Trajectory(
                params=ParameterVector.from_array(values[:7]),
                grid=TimeGrid(values[7 : 7 + m]),
                ln_kd=values[7 + m : 7 + 2 * m],
                gamma1=gamma1,
                gamma2=values[7 + 3 * m : 7 + 4 * m],
            )
            if is_valid_trajectory(traj):
                samples.append(traj)
            else:
                dropped += 1
        if dropped:
            log.warning("dropped %d invalid trajectories from %s", dropped, csv_path)
    return Dataset(tuple(samples))
