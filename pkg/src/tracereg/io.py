"""Dataset files: a headerless CSV plus a JSON sidecar ``{"p1", "p2", "n"}``.

Row ``i`` of the CSV holds ``vec(X_i)`` (column-major, ``p1*p2`` values)
followed by ``y_i``. The sidecar sits next to the CSV with a ``.json``
suffix.
"""

import csv
import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from tracereg.weights import TraceDataset

BUILTIN_PREFIX = "builtin:"


class DatasetFormatError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class IngestResult:
    data: TraceDataset
    constant_columns: np.ndarray
    column_means: np.ndarray = None
    column_scales: np.ndarray = None
    response_mean: float = None
    response_scale: float = None


def sidecar_path(path):
    return Path(path).with_suffix(".json")


def resolve(path):
    """Map ``builtin:NAME`` to the packaged ``NAME.csv``; other paths pass through."""
    path = str(path)
    if path.startswith(BUILTIN_PREFIX):
        name = path[len(BUILTIN_PREFIX):]
        ref = resources.files("tracereg") / "data" / f"{name}.csv"
        if not ref.is_file():
            raise FileNotFoundError(f"no bundled dataset named {name!r}")
        return Path(str(ref))
    return Path(path)


def write_dataset(data, path):
    path = Path(path)
    rows = np.column_stack([data.design, data.responses])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in rows:
            writer.writerow([repr(float(v)) for v in row])
    with open(sidecar_path(path), "w") as fh:
        json.dump({"p1": data.p1, "p2": data.p2, "n": data.n}, fh, indent=2)
        fh.write("\n")
    return path


def _read_header(path):
    side = sidecar_path(path)
    try:
        with open(side) as fh:
            header = json.load(fh)
    except FileNotFoundError:
        raise DatasetFormatError(f"missing sidecar header {side}") from None
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"{side}: invalid JSON ({exc})") from None
    for key in ("p1", "p2", "n"):
        val = header.get(key)
        if not isinstance(val, int) or isinstance(val, bool) or val < 1:
            raise DatasetFormatError(f"{side}: {key!r} must be a positive integer")
    return header["p1"], header["p2"], header["n"]


def read_dataset(path):
    """Parse a dataset file into a :class:`TraceDataset`.

    Raises
    ------
    DatasetFormatError
        On a missing or bad header, a row with the wrong field count, a
        non-numeric or non-finite field (reported with its line number) or a
        row count that disagrees with the header.
    """
    path = resolve(path)
    p1, p2, n = _read_header(path)
    width = p1 * p2 + 1
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not f.strip() for f in row):
                continue
            if len(row) != width:
                raise DatasetFormatError(
                    f"{path}:{lineno}: expected {width} fields, found {len(row)}"
                )
            try:
                vals = [float(f) for f in row]
            except ValueError:
                raise DatasetFormatError(f"{path}:{lineno}: non-numeric field") from None
            if not all(math.isfinite(v) for v in vals):
                raise DatasetFormatError(f"{path}:{lineno}: NaN or infinite value")
            rows.append(vals)
    if len(rows) != n:
        raise DatasetFormatError(f"{path}: header says n={n} but found {len(rows)} rows")
    arr = np.array(rows, dtype=float)
    return TraceDataset.from_design(arr[:, :-1], arr[:, -1], p1, p2)


def standardize_design(design, tol=1e-12):
    """Center every column and scale nonconstant ones to unit variance.

    Returns ``(standardized, means, scales, constant_mask)``. Constant columns
    (population std below ``tol`` times the column scale) are centered only.
    """
    design = np.asarray(design, dtype=float)
    means = design.mean(axis=0)
    centered = design - means
    std = centered.std(axis=0)
    magnitude = np.maximum(np.abs(design).max(axis=0), 1.0)
    constant = std <= tol * magnitude
    scales = np.where(constant, 1.0, std)
    return centered / scales, means, scales, constant


def ingest(path, standardize=False, standardize_response=False):
    """Read a dataset, optionally standardizing design columns and the response."""
    data = read_dataset(path)
    if not (standardize or standardize_response):
        return IngestResult(data, np.zeros(data.p1 * data.p2, dtype=bool))
    design = data.design
    y = data.responses
    means = scales = None
    constant = np.zeros(design.shape[1], dtype=bool)
    y_mean = y_scale = None
    if standardize:
        design, means, scales, constant = standardize_design(design)
    if standardize_response:
        y_mean = float(y.mean())
        y_scale = float(y.std()) or 1.0
        y = (y - y_mean) / y_scale
    out = TraceDataset.from_design(design, y, data.p1, data.p2)
    return IngestResult(out, constant, means, scales, y_mean, y_scale)
