"""Measurement datasets: sparse received-power samples with a channel label."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

EARTH_RADIUS_M = 6371000.0  # local equirectangular projection constant


@dataclass
class Dataset:
    """Columnar measurement records: planar coordinates and observed dB power."""

    x: np.ndarray
    y: np.ndarray
    rssi_db: np.ndarray
    channel: str = "C0"
    elevation: np.ndarray | None = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        self.rssi_db = np.asarray(self.rssi_db, dtype=float)
        if not (len(self.x) == len(self.y) == len(self.rssi_db)):
            raise DataError("measurement columns must have equal length")
        for name, col in (("x", self.x), ("y", self.y), ("rssi_db", self.rssi_db)):
            if col.size and not np.all(np.isfinite(col)):
                raise DataError(f"non-finite values in column {name}")
        if not self.channel:
            raise DataError("channel label must be nonempty")

    def __len__(self) -> int:
        return len(self.x)

    @property
    def points(self) -> np.ndarray:
        return np.column_stack([self.x, self.y])

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices)
        elev = self.elevation[idx] if self.elevation is not None else None
        return Dataset(self.x[idx], self.y[idx], self.rssi_db[idx], self.channel, elev)

    def bounding_box(self):
        return (
            float(self.x.min()),
            float(self.x.max()),
            float(self.y.min()),
            float(self.y.max()),
        )


def project_latlon(lat, lon, lat0=None, lon0=None):
    """Local equirectangular projection to planar meters, anchored at the
    dataset centroid unless an anchor is given."""
    lat = np.asarray(lat, dtype=float)
    lon = np.asarray(lon, dtype=float)
    if lat0 is None:
        lat0 = float(lat.mean())
    if lon0 is None:
        lon0 = float(lon.mean())
    x = EARTH_RADIUS_M * np.radians(lon - lon0) * np.cos(np.radians(lat0))
    y = EARTH_RADIUS_M * np.radians(lat - lat0)
    return x, y


def read_measurements_csv(path, latlon: bool = False) -> Dataset:
    """Load measurements from CSV.

    Expected header: ``x,y,rssi_db,channel[,elevation]`` (or ``lat,lon,...``
    with ``latlon=True``, converted through the local projection).
    """
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataError(f"cannot open measurement file: {exc}") from exc
    with fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataError(f"empty measurement file: {path}")
        cols = {name: [] for name in reader.fieldnames}
        for row in reader:
            for name in cols:
                cols[name].append(row[name])
    ax_name, ay_name = ("lat", "lon") if latlon else ("x", "y")
    for required in (ax_name, ay_name, "rssi_db"):
        if required not in cols:
            raise DataError(f"measurement file {path} lacks column {required!r}")
    try:
        ax = np.array(cols[ax_name], dtype=float)
        ay = np.array(cols[ay_name], dtype=float)
        rssi = np.array(cols["rssi_db"], dtype=float)
    except ValueError as exc:
        raise DataError(f"non-numeric measurement value in {path}: {exc}") from exc
    if latlon:
        x, y = project_latlon(ax, ay)
    else:
        x, y = ax, ay
    channel = cols["channel"][0] if cols.get("channel") else "C0"
    elevation = None
    if "elevation" in cols:
        elevation = np.array(cols["elevation"], dtype=float)
    if len(x) == 0:
        raise DataError(f"no measurement rows in {path}")
    return Dataset(x, y, rssi, channel, elevation)


def write_measurements_csv(dataset: Dataset, path):
    """Write measurements with fixed 6-decimal formatting (reproducible bytes)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["x", "y", "rssi_db", "channel"]
        if dataset.elevation is not None:
            header.append("elevation")
        writer.writerow(header)
        for i in range(len(dataset)):
            row = [
                f"{dataset.x[i]:.6f}",
                f"{dataset.y[i]:.6f}",
                f"{dataset.rssi_db[i]:.6f}",
                dataset.channel,
            ]
            if dataset.elevation is not None:
                row.append(f"{dataset.elevation[i]:.6f}")
            writer.writerow(row)
