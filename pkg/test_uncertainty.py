"""
MCD 不确定性提取测试

用法: pytest test_uncertainty.py
"""

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from app.exceptions import ConfigurationError, EmptyDataError
from app.services.neuralcore import DropoutMask, forward, init_model
from app.services.uncertainty import (
    UncertaintyCache,
    UncertaintyTable,
    argmax_bin_ids,
    export_table,
    extract_from_masks,
    extract_uncertainty,
    summarize_passes,
)


@pytest.fixture
def model():
    return init_model(2, 4, seed=3)


@pytest.fixture
def inputs():
    return np.random.default_rng(5).normal(size=(40, 2))


def _table(mean, std=None):
    mean = np.asarray(mean, dtype=float)
    return UncertaintyTable(mean=mean, std=np.zeros_like(mean) if std is None else np.asarray(std), iterations=2, snapshot_id="x")


def test_summary_of_hand_computed_passes():
    outputs = np.array([0.2, 0.4, 0.6, 0.8]).reshape(4, 1, 1)
    mean, std = summarize_passes(outputs)
    assert mean[0, 0] == pytest.approx(0.5, abs=1e-12)
    assert std[0, 0] == pytest.approx(0.258199, abs=1e-6)


def test_identical_passes_have_exactly_zero_sigma():
    outputs = np.tile(np.array([[0.1, 0.3, 0.6]]), (7, 1, 1))
    outputs[:, 0, 2] = [0.6, 0.6, 0.6, 0.6, 0.6, 0.6, 0.61]
    mean, std = summarize_passes(outputs)
    assert std[0, 0] == 0.0 and std[0, 1] == 0.0
    assert mean[0, 0] == 0.1
    assert std[0, 2] > 0.0


def test_all_ones_masks_collapse_to_deterministic_prediction(model, inputs):
    masks = [DropoutMask.ones(model.hidden_dim) for _ in range(5)]
    mean, std = extract_from_masks(model, inputs, masks)
    assert np.all(std == 0.0)
    assert np.array_equal(mean, forward(model, inputs))
    table = _table(mean)
    assert np.array_equal(argmax_bin_ids(table), np.argmax(forward(model, inputs), axis=1))


def test_extraction_properties(model, inputs):
    before = model.snapshot_id()
    table = extract_uncertainty(model, inputs, mcd_iterations=25, mcd_rate=0.75, seed=17)

    assert model.snapshot_id() == before
    assert table.snapshot_id == before
    assert table.mean.shape == table.std.shape == (40, 4)
    assert np.all(table.mean >= 0.0) and np.all(table.mean <= 1.0)
    assert np.all(np.abs(table.mean.sum(axis=1) - 1.0) <= 1e-6)
    assert np.all(table.std >= 0.0)


def test_same_seed_gives_identical_tables(model, inputs):
    a = extract_uncertainty(model, inputs, 10, 0.5, seed=2)
    b = extract_uncertainty(model, inputs, 10, 0.5, seed=2)
    c = extract_uncertainty(model, inputs, 10, 0.5, seed=3)
    assert np.array_equal(a.mean, b.mean) and np.array_equal(a.std, b.std)
    assert not np.array_equal(a.mean, c.mean)


def test_parallel_passes_match_sequential(model, inputs):
    a = extract_uncertainty(model, inputs, 12, 0.75, seed=4, workers=1)
    b = extract_uncertainty(model, inputs, 12, 0.75, seed=4, workers=3)
    assert np.array_equal(a.mean, b.mean) and np.array_equal(a.std, b.std)


def test_pass_masks_follow_seed_plus_index(model, inputs):
    table = extract_uncertainty(model, inputs, 3, 0.5, seed=100)
    masks = [DropoutMask.sample(model.hidden_dim, 0.5, 100 + m) for m in range(3)]
    mean, std = extract_from_masks(model, inputs, masks)
    assert np.array_equal(table.mean, mean) and np.array_equal(table.std, std)


def test_invalid_settings(model, inputs):
    with pytest.raises(ConfigurationError):
        extract_uncertainty(model, inputs, 1, 0.5, seed=0)
    with pytest.raises(ConfigurationError):
        extract_uncertainty(model, inputs, 5, 0.0, seed=0)
    with pytest.raises(ConfigurationError):
        extract_uncertainty(model, inputs, 5, 1.0, seed=0)
    with pytest.raises(EmptyDataError):
        extract_uncertainty(model, np.zeros((0, 2)), 5, 0.5, seed=0)


def test_argmax_bins_and_ties():
    table = _table([[0.1, 0.7, 0.2], [0.5, 0.5, 0.0], [0.2, 0.3, 0.5]])
    assert argmax_bin_ids(table).tolist() == [1, 0, 2]
    with pytest.raises(EmptyDataError):
        argmax_bin_ids(_table(np.zeros((0, 3))))


def test_text_export(tmp_path):
    table = _table([[0.25, 0.75]], [[0.1, 0.1]])
    path = tmp_path / "table.tsv"
    export_table(table, path)
    lines = path.read_text().splitlines()
    assert lines[1] == "sample\tclass\tmu\tsigma"
    assert lines[2] == "0\t0\t0.25\t0.1"
    assert len(lines) == 4


def test_cache_returns_stored_table(tmp_path, model, inputs):
    cache = UncertaintyCache(tmp_path / "cache")
    first = cache.extract(model, inputs, 6, 0.75, seed=9)
    second = cache.extract(model, inputs, 6, 0.75, seed=9)
    assert cache.misses == 1 and cache.hits == 1
    assert np.array_equal(first.mean, second.mean) and np.array_equal(first.std, second.std)
    assert second.snapshot_id == model.snapshot_id()


def test_cache_is_keyed_by_target_inputs(tmp_path, model, inputs):
    cache = UncertaintyCache(tmp_path / "cache")
    cache.extract(model, inputs, 4, 0.5, seed=1)
    other = cache.extract(model, inputs + 1.0, 4, 0.5, seed=1)
    assert cache.misses == 2 and cache.hits == 0
    assert np.array_equal(other.mean, extract_uncertainty(model, inputs + 1.0, 4, 0.5, seed=1).mean)
