import json

import numpy as np
import pytest

from tracereg.io import (
    DatasetFormatError, ingest, read_dataset, resolve, sidecar_path, standardize_design,
    write_dataset,
)
from tracereg.weights import TraceDataset


def write_raw(tmp_path, rows, header):
    path = tmp_path / "d.csv"
    path.write_text("\n".join(rows) + "\n")
    sidecar_path(path).write_text(json.dumps(header))
    return path


def test_two_sample_round_trip(tmp_path):
    # X_1 = [[1, 3], [2, 4]], X_2 = [[5, 7], [6, 8]] in column-major rows
    path = write_raw(tmp_path, ["1,2,3,4,10", "5,6,7,8,-1.5"], {"p1": 2, "p2": 2, "n": 2})
    data = read_dataset(path)
    np.testing.assert_array_equal(data.predictors[0], [[1, 3], [2, 4]])
    np.testing.assert_array_equal(data.responses, [10, -1.5])
    out = write_dataset(data, tmp_path / "again.csv")
    again = read_dataset(out)
    assert np.array_equal(again.predictors, data.predictors)
    assert np.array_equal(again.responses, data.responses)


@pytest.mark.parametrize("rows, header, match", [
    (["1,2,3,4,5", "1,2,3"], {"p1": 2, "p2": 2, "n": 2}, ":2: expected 5 fields"),
    (["1,2,x,4,5"], {"p1": 2, "p2": 2, "n": 1}, ":1: non-numeric"),
    (["1,2,nan,4,5"], {"p1": 2, "p2": 2, "n": 1}, ":1: NaN"),
    (["1,2,3,4,5"], {"p1": 2, "p2": 2, "n": 3}, "header says n=3"),
    (["1,2,3,4,5"], {"p1": 2, "p2": 0, "n": 1}, "'p2' must be"),
])
def test_malformed_files(tmp_path, rows, header, match):
    path = write_raw(tmp_path, rows, header)
    with pytest.raises(DatasetFormatError, match=match):
        read_dataset(path)


def test_missing_sidecar(tmp_path):
    path = tmp_path / "x.csv"
    path.write_text("1,2\n")
    with pytest.raises(DatasetFormatError, match="sidecar"):
        read_dataset(path)


def test_standardize_columns():
    rng = np.random.default_rng(0)
    D = rng.normal(3.0, 2.0, size=(50, 4))
    D[:, 2] = 7.0
    Z, means, scales, const = standardize_design(D)
    assert const.tolist() == [False, False, True, False]
    keep = ~const
    np.testing.assert_allclose(Z[:, keep].mean(axis=0), 0, atol=1e-10)
    np.testing.assert_allclose(Z[:, keep].var(axis=0), 1, atol=1e-10)
    np.testing.assert_array_equal(Z[:, 2], 0.0)  # centered, not scaled
    assert scales[2] == 1.0


def test_ingest_standardize_flags(tmp_path):
    rng = np.random.default_rng(1)
    data = TraceDataset(rng.standard_normal((30, 2, 2)) + 5, rng.standard_normal(30) + 3)
    path = write_dataset(data, tmp_path / "d.csv")
    plain = ingest(path)
    assert np.array_equal(plain.data.responses, data.responses)
    std = ingest(path, standardize=True)
    np.testing.assert_allclose(std.data.design.mean(axis=0), 0, atol=1e-10)
    np.testing.assert_array_equal(std.data.responses, data.responses)
    both = ingest(path, standardize=True, standardize_response=True)
    assert abs(both.data.responses.mean()) < 1e-12


def test_builtin_toy():
    assert resolve("builtin:toy").name == "toy.csv"
    data = read_dataset("builtin:toy")
    assert (data.n, data.p1, data.p2) == (20, 3, 4)
    with pytest.raises(FileNotFoundError):
        resolve("builtin:nope")
