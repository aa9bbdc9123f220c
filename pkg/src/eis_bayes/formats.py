"""
On-disk formats.

* spectrum: CSV ``freq_hz,re_ohm,im_ohm[,dispersion_ohm]``, one row per
  frequency, strictly increasing frequency.
* time series: CSV ``t_s,value`` per channel plus a JSON sidecar with the
  sample rate and channel tag (same stem, ``.json`` suffix).
* JSON documents: sorted keys, a ``schema_version`` field, no NaN/inf.

All floats are written with 17 significant digits so a write/read cycle
reproduces every double exactly.
"""
from __future__ import annotations

import json
import math
import warnings
from pathlib import Path
from typing import Any, Optional

import numpy as np

from .signal import CHANNELS, ImpedanceSpectrum, TimeSeriesRecord

SCHEMA_VERSION = 1
FLOAT_FMT = "%.17g"
SPECTRUM_HEADER = ("freq_hz", "re_ohm", "im_ohm")
DISPERSION_COLUMN = "dispersion_ohm"
TIMESERIES_HEADER = ("t_s", "value")


class FormatError(ValueError):
    """A file does not follow the expected layout."""


def read_header(path) -> list[str]:
    """Column names from the first line of a CSV file."""
    with open(path, "r", encoding="utf-8") as fh:
        line = fh.readline()
    if not line:
        raise FormatError(f"{path}: empty file")
    return [c.strip() for c in line.strip().split(",")]


def _read_table(path: Path, n_cols: int) -> np.ndarray:
    try:
        with warnings.catch_warnings():
            # an empty body is reported below as a format error
            warnings.simplefilter("ignore", UserWarning)
            data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if data.size == 0:
        raise FormatError(f"{path}: no data rows")
    if data.shape[1] != n_cols:
        raise FormatError(f"{path}: expected {n_cols} columns, found {data.shape[1]}")
    if not np.all(np.isfinite(data)):
        raise FormatError(f"{path}: non-finite values")
    return data


def write_spectrum(path, spectrum: ImpedanceSpectrum) -> Path:
    path = Path(path)
    cols = [spectrum.freqs_hz, spectrum.z.real, spectrum.z.imag]
    header = list(SPECTRUM_HEADER)
    if spectrum.dispersion is not None:
        disp = spectrum.dispersion
        if not np.all(np.isfinite(disp)):
            raise FormatError("dispersion contains non-finite values")
        cols.append(disp)
        header.append(DISPERSION_COLUMN)
    np.savetxt(path, np.column_stack(cols), fmt=FLOAT_FMT, delimiter=",",
               header=",".join(header), comments="")
    return path


def read_spectrum(path) -> ImpedanceSpectrum:
    path = Path(path)
    header = read_header(path)
    if tuple(header[:3]) != SPECTRUM_HEADER or header[3:] not in ([], [DISPERSION_COLUMN]):
        raise FormatError(
            f"{path}: header must be {','.join(SPECTRUM_HEADER)}[,{DISPERSION_COLUMN}], got {','.join(header)}"
        )
    data = _read_table(path, len(header))
    if np.any(np.diff(data[:, 0]) <= 0) or np.any(data[:, 0] <= 0):
        raise FormatError(f"{path}: frequencies must be positive and strictly increasing")
    disp = data[:, 3] if data.shape[1] == 4 else None
    return ImpedanceSpectrum(data[:, 0], data[:, 1] + 1j * data[:, 2], disp)


def sidecar_path(path) -> Path:
    return Path(path).with_suffix(".json")


def write_timeseries(path, record: TimeSeriesRecord, extra: Optional[dict] = None) -> Path:
    """Write ``t_s,value`` rows and the JSON sidecar next to them."""
    path = Path(path)
    t = np.arange(len(record)) / record.sample_rate_hz
    np.savetxt(path, np.column_stack([t, record.samples]), fmt=FLOAT_FMT, delimiter=",",
               header=",".join(TIMESERIES_HEADER), comments="")
    meta = {
        "channel": record.channel,
        "sample_rate_hz": record.sample_rate_hz,
        "n_samples": len(record),
    }
    meta.update(extra or {})
    write_json(sidecar_path(path), meta)
    return path


def read_timeseries(path) -> tuple[TimeSeriesRecord, dict]:
    """Read a channel file and its sidecar; returns the record and the sidecar dict."""
    path = Path(path)
    side = sidecar_path(path)
    if not side.exists():
        raise FormatError(f"{path}: missing sidecar {side.name}")
    meta = read_json(side)
    for key in ("channel", "sample_rate_hz"):
        if key not in meta:
            raise FormatError(f"{side}: missing field {key!r}")
    if meta["channel"] not in CHANNELS:
        raise FormatError(f"{side}: channel must be one of {CHANNELS}, got {meta['channel']!r}")
    header = read_header(path)
    if tuple(header) != TIMESERIES_HEADER:
        raise FormatError(f"{path}: header must be {','.join(TIMESERIES_HEADER)}")
    data = _read_table(path, 2)
    fs = float(meta["sample_rate_hz"])
    if not fs > 0:
        raise FormatError(f"{side}: sample rate must be positive")
    expected = np.arange(data.shape[0]) / fs
    if not np.allclose(data[:, 0], expected, rtol=1e-9, atol=1e-12 / fs):
        raise FormatError(f"{path}: time column does not match the sidecar sample rate")
    return TimeSeriesRecord(data[:, 1], fs, meta["channel"]), meta


def _clean(obj: Any) -> Any:
    # plain JSON types only; non-finite floats become null
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def write_json(path, obj: dict) -> Path:
    path = Path(path)
    doc = {"schema_version": SCHEMA_VERSION}
    doc.update(_clean(obj))
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")
    return path


def read_json(path) -> dict:
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise FormatError(f"{path}: top level must be an object")
    return doc


def write_columns(path, columns: dict) -> Path:
    """Plain numeric CSV from an ordered mapping of equal-length columns."""
    path = Path(path)
    names = list(columns)
    data = np.column_stack([np.asarray(columns[n], dtype=float) for n in names])
    np.savetxt(path, data, fmt=FLOAT_FMT, delimiter=",", header=",".join(names), comments="")
    return path


def read_columns(path) -> dict:
    path = Path(path)
    header = read_header(path)
    data = _read_table(path, len(header))
    return {name: data[:, j] for j, name in enumerate(header)}
