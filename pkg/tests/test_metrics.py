"""PCK metric against brute-force oracles; evaluation harness contract."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from textpose.config import ExperimentConfig
from textpose.dataset import synth_dataset, split_by_instance
from textpose.metrics import (PCK_THRESHOLDS, MetricsRow, evaluate,
                              metrics_csv_lines, metrics_header, pck,
                              read_metrics_csv, write_metrics_csv)
from textpose.model import init_model_params


def pck_oracle(pred, gt, bbox, tau):
    # independent scalar loop, inclusive boundary
    hits = 0
    limit = tau * max(bbox[2], bbox[3])
    for i in range(len(pred)):
        dx = pred[i][0] - gt[i][0]
        dy = pred[i][1] - gt[i][1]
        if (dx * dx + dy * dy) ** 0.5 <= limit:
            hits += 1
    return hits / len(pred)


# ----------------------------------------------------------------------- pck

def test_pck_exact_match_is_one():
    gt = np.array([[0.2, 0.3], [0.7, 0.9]])
    assert pck(gt.copy(), gt, np.array([0.1, 0.1, 0.5, 0.4]), 0.2) == 1.0


def test_pck_boundary_is_inclusive():
    # limit = 0.25 * 0.5 = 0.125, all quantities exactly representable:
    # a displacement of exactly the limit counts, anything above misses
    gt = np.array([[0.5, 0.5], [0.25, 0.5]])
    pred = gt + np.array([[0.125, 0.0], [0.0, 0.0]])
    bbox = np.array([0.2, 0.2, 0.5, 0.25])
    assert pck(pred, gt, bbox, 0.25) == 1.0
    pred[0, 0] = gt[0, 0] + 0.12501
    assert pck(pred, gt, bbox, 0.25) == 0.5


def test_pck_matches_bruteforce_oracle():
    rng = np.random.default_rng(4)
    for _ in range(200):
        n = int(rng.integers(1, 12))
        pred = rng.random((n, 2))
        gt = rng.random((n, 2))
        bbox = rng.uniform(0.05, 0.5, size=4)
        tau = float(rng.uniform(0.01, 0.5))
        assert pck(pred, gt, bbox, tau) == pck_oracle(pred, gt, bbox, tau)


def test_pck_normalizes_by_longest_side():
    gt = np.array([[0.5, 0.5]])
    pred = np.array([[0.5 + 0.09, 0.5]])
    tall = np.array([0.0, 0.0, 0.1, 0.5])   # max side 0.5 -> limit 0.1
    wide = np.array([0.0, 0.0, 0.5, 0.1])
    assert pck(pred, gt, tall, 0.2) == 1.0
    assert pck(pred, gt, wide, 0.2) == 1.0
    small = np.array([0.0, 0.0, 0.1, 0.1])  # limit 0.02
    assert pck(pred, gt, small, 0.2) == 0.0


def test_pck_input_errors():
    gt = np.zeros((3, 2))
    with pytest.raises(ValueError):
        pck(np.zeros((2, 2)), gt, np.ones(4), 0.2)
    with pytest.raises(ValueError):
        pck(gt, gt, np.ones(4), 0.0)
    with pytest.raises(ValueError):
        pck(gt, gt, np.ones(4), -0.1)


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 2**32 - 1),
       st.floats(0.01, 0.6), st.floats(0.0, 0.4))
def test_pck_monotone_in_threshold(seed, tau1, delta):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 10))
    pred, gt = rng.random((n, 2)), rng.random((n, 2))
    bbox = rng.uniform(0.05, 0.6, size=4)
    assert pck(pred, gt, bbox, tau1) <= pck(pred, gt, bbox, tau1 + delta + 1e-9)


# ---------------------------------------------------------------- MetricsRow

def test_metrics_row_validation():
    with pytest.raises(ValueError):
        MetricsRow("a", "b", (0.2,), (), None, 0, 0, 0)
    with pytest.raises(ValueError):
        MetricsRow("a", "b", (0.2,), (1.5,), 1.5, 0, 0, 0)
    with pytest.raises(ValueError):
        MetricsRow("a,b", "c", (), (), None, 0, 0, 0)


def test_metrics_csv_roundtrip(tmp_path):
    rows = [MetricsRow("full", "held-out", (0.1, 0.2), (0.25, 0.5), 0.375,
                       0.01, 0.2, 0.22),
            MetricsRow("no-mixer", "held-out", (0.1, 0.2), (0.0, 1.0), 0.5,
                       0.02, 0.3, 0.34)]
    path = tmp_path / "m.csv"
    write_metrics_csv(path, rows)
    parsed = read_metrics_csv(path)
    assert len(parsed) == 2
    assert parsed[0]["config_id"] == "full"
    assert float(parsed[0]["pck@0.2"]) == 0.5
    assert float(parsed[1]["mean_pck"]) == 0.5
    assert parsed[1]["total_loss"] == repr(0.34)


def test_metrics_csv_rejects_mixed_thresholds():
    rows = [MetricsRow("a", "s", (0.2,), (0.5,), 0.5, 0, 0, 0),
            MetricsRow("b", "s", (0.1,), (0.5,), 0.5, 0, 0, 0)]
    with pytest.raises(ValueError):
        metrics_csv_lines(rows)


def test_metrics_header_names():
    assert metrics_header((0.05, 0.2)) == [
        "config_id", "split_id", "pck@0.05", "pck@0.2",
        "mean_pck", "heatmap_loss", "offset_loss", "total_loss"]


# ------------------------------------------------------------------ evaluate

@pytest.fixture(scope="module")
def tiny_eval():
    cfg = ExperimentConfig(config_id="tiny", seed=2, dim=8, image_tokens=4,
                           patch=4, image_size=16, encoder_layers=1,
                           decoder_layers=1)
    samples = synth_dataset(9, n_categories=2, instances=2, image_size=16)
    params = init_model_params(cfg, np.random.default_rng(5))
    return cfg, samples, params


def test_evaluate_row_structure(tiny_eval):
    cfg, samples, params = tiny_eval
    row = evaluate(params, samples, cfg, split_id="all")
    assert row.config_id == "tiny" and row.split_id == "all"
    assert row.thresholds == PCK_THRESHOLDS
    assert len(row.pck_values) == 5
    # monotone in the threshold by construction of PCK
    assert all(a <= b for a, b in zip(row.pck_values, row.pck_values[1:]))
    assert row.mean_pck == sum(row.pck_values) / 5
    assert row.total_loss > 0.0


def test_evaluate_empty_thresholds_gives_loss_only_row(tiny_eval):
    cfg, samples, params = tiny_eval
    row = evaluate(params, samples, cfg, thresholds=())
    assert row.pck_values == () and row.mean_pck is None
    assert row.total_loss > 0.0
    lines = metrics_csv_lines([row])
    assert lines[0] == "config_id,split_id,mean_pck,heatmap_loss,offset_loss,total_loss"
    assert ",,," not in lines[0]


def test_evaluate_is_deterministic(tiny_eval):
    cfg, samples, params = tiny_eval
    a = evaluate(params, samples, cfg)
    b = evaluate(params, samples, cfg)
    assert metrics_csv_lines([a]) == metrics_csv_lines([b])


def test_evaluate_rejects_empty_sample_list(tiny_eval):
    cfg, _, params = tiny_eval
    with pytest.raises(ValueError):
        evaluate(params, [], cfg)


def test_evaluate_mean_matches_per_sample_pck(tiny_eval):
    cfg, samples, params = tiny_eval
    from textpose.model import predict
    row = evaluate(params, samples, cfg, thresholds=(0.2,))
    per_sample = [pck(predict(params, s, cfg).final_coords, s.keypoints,
                      s.bbox, 0.2) for s in samples]
    assert row.pck_values[0] == sum(per_sample) / len(per_sample)


def test_untrained_model_is_near_chance_level():
    # chance level measured by a Monte-Carlo random-coordinate baseline
    cfg = ExperimentConfig(train_instances=2)
    samples = split_by_instance(synth_dataset(0, instances=3),
                                cfg.train_categories, cfg.train_instances)
    params = init_model_params(cfg, np.random.default_rng([cfg.seed, 0]))
    row = evaluate(params, samples, cfg, thresholds=(0.2,))

    rng = np.random.default_rng(123)
    trials = []
    for _ in range(1000):
        s = samples[rng.integers(0, len(samples))]
        trials.append(pck(rng.random(s.keypoints.shape), s.keypoints,
                          s.bbox, 0.2))
    chance = float(np.mean(trials))
    assert chance < 0.15
    assert row.pck_values[0] <= chance + 0.1
