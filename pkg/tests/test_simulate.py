import json
import math

import numpy as np
import pytest

from tracereg.criteria import Method
from tracereg.linalg import truncated_svd
from tracereg.simulate import (
    Evaluation, GroundTruth, SimulationConfig, evaluate, generate, replicate_rng, replicate_study,
)


def small_cfg(**kw):
    base = dict(p1=3, p2=4, n=80, true_rank=1, replicates=2, grid_count=12, seed=1)
    base.update(kw)
    return SimulationConfig(**base)


def test_config_validation():
    with pytest.raises(ValueError):
        SimulationConfig(p1=2, p2=3, true_rank=3)
    with pytest.raises(ValueError):
        SimulationConfig(noise_std=0)
    with pytest.raises(ValueError):
        SimulationConfig(methods=("bic", "gcv"))


def test_generate_structure():
    cfg = small_cfg()
    data, truth = generate(cfg)
    assert data.predictors.shape == (80, 3, 4)
    assert all(np.linalg.matrix_rank(X) == 1 for X in data.predictors)
    assert truth.r_star == truncated_svd(truth.b_star, 1e-10).rank == 1


def test_noiseless_limit_has_zero_residuals():
    data, truth = generate(small_cfg(), noise_std=0.0)
    np.testing.assert_allclose(data.responses - data.fitted(truth.b_star), 0, atol=1e-12)


def test_generate_is_bit_reproducible():
    a, ta = generate(small_cfg(), replicate=3)
    b, tb = generate(small_cfg(), replicate=3)
    assert np.array_equal(a.predictors, b.predictors) and np.array_equal(a.responses, b.responses)
    assert np.array_equal(ta.b_star, tb.b_star)
    c, _ = generate(small_cfg(), replicate=4)
    assert not np.array_equal(a.responses, c.responses)


def test_replicate_streams_are_independent_of_count():
    # replicate k draws the same numbers however many replicates exist
    x = replicate_rng(5, 2).standard_normal(3)
    y = replicate_rng(5, 2).standard_normal(3)
    np.testing.assert_array_equal(x, y)


def test_gram_approaches_expectation():
    # E[vec(P q^T) vec(P q^T)^T] = I for standard normal P, q
    devs = []
    for n in (100, 1000):
        data, _ = generate(small_cfg(n=n, seed=11))
        devs.append(np.abs(data.gram - np.eye(12)).max())
    assert devs[1] < devs[0]


class FakeReport:
    def __init__(self, rank):
        self.chosen_rank = rank
        self.mse = 1.5
        self.wall_time_seconds = 0.25
        self.chosen_lambda = 0.1


def test_evaluate_examples():
    truth = GroundTruth(np.zeros((2, 2)), 2)
    ok = evaluate(FakeReport(2), truth)
    assert ok.rank_correct and ok.rank_error == 0 and ok.mse == 1.5
    bad = evaluate(FakeReport(15), truth)
    assert not bad.rank_correct and bad.rank_error == 13
    assert all(math.isfinite(v) for v in (bad.mse, bad.time, bad.lambda_star))


def test_single_method_single_replicate_gives_one_row():
    table = replicate_study(small_cfg(replicates=1, methods=("bic",)))
    assert len(table.rows) == 1
    row = table.row("bic")
    assert set(row) >= {"method", "lambda_star", "mse", "rank", "time_seconds", "rank_recovery_rate"}


def test_study_all_methods_and_outputs(tmp_path):
    table = replicate_study(small_cfg())
    assert [r["method"] for r in table.rows] == ["bic", "aic", "aicc", "cv5", "cv10"]
    for r in table.rows:
        assert 0 <= r["rank_recovery_rate"] <= 1
        assert r["replicates_failed"] == 0
    table.write_csv(tmp_path / "t.csv")
    header = (tmp_path / "t.csv").read_text().splitlines()[0]
    assert header == "method,lambda_star,mse,rank,time_seconds,rank_recovery_rate"
    table.write_json(tmp_path / "t.json")
    assert json.loads((tmp_path / "t.json").read_text())["rows"][0]["method"] == "bic"


def test_study_is_deterministic_up_to_timing():
    a = replicate_study(small_cfg(methods=("bic", "cv5")))
    b = replicate_study(small_cfg(methods=("bic", "cv5"), workers=2))
    da, db = a.to_dict(include_timing=False), b.to_dict(include_timing=False)
    da["config"].pop("workers"), db["config"].pop("workers")
    assert da == db


def test_failures_are_recorded_and_study_continues(monkeypatch):
    import tracereg.simulate as sim

    def boom(*a, **k):
        raise RuntimeError("solver exploded")

    monkeypatch.setattr(sim, "cross_validate", boom)
    table = replicate_study(small_cfg(methods=("bic", "cv5")))
    assert table.row("cv5")["replicates_failed"] == 2
    assert table.row("cv5")["rank_recovery_rate"] == 0.0
    assert table.row("bic")["replicates_failed"] == 0
    assert "solver exploded" in table.replicates[0]["cv5"]


@pytest.mark.slow
def test_bic_recovery_nondecreasing_in_n():
    rates = []
    for n in (200, 500, 2000):
        cfg = SimulationConfig(p1=8, p2=10, n=n, true_rank=2, replicates=4, seed=31,
                               grid_count=30, methods=("bic",))
        rates.append(replicate_study(cfg).row("bic")["rank_recovery_rate"])
    assert rates[0] <= rates[1] <= rates[2]
    assert rates[2] >= 0.75
