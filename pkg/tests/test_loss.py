import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sloppyopt.loss import Dataset, DatasetError, load_dataset, objective, residuals, save_dataset
from sloppyopt.models import toy_kinetics_problem

nonzero = st.floats(0.01, 1e3) | st.floats(-1e3, -0.01)


@pytest.mark.parametrize("E, M, r", [([2], [1], [0.5]), ([1, 2], [2, 1], [-1, 0.5]), ([3, 4], [3, 4], [0, 0])])
def test_residual_examples(E, M, r):
    np.testing.assert_allclose(residuals(E, M), r)


def test_residual_rejects_zero_observed():
    with pytest.raises(DatasetError):
        residuals([0.0, 1.0], [1.0, 1.0])


@pytest.mark.parametrize("r, phi", [([0, 0], 0.0), ([1, -1, 2], 3.0)])
def test_objective_examples(r, phi):
    assert objective(r) == phi


def test_toy_kinetics_zero_noise_is_exact():
    prob = toy_kinetics_problem()
    assert objective(prob.evaluate(prob.theta_star)) == 0.0


@given(arrays(float, st.integers(1, 20), elements=st.floats(-100, 100)))
def test_objective_nonnegative_zero_iff_zero(r):
    phi = objective(r)
    assert phi >= 0
    assert (phi == 0) == bool(np.all(r == 0))


@given(arrays(float, st.integers(2, 20), elements=st.floats(-100, 100)), st.randoms())
def test_objective_permutation_invariant(r, rnd):
    perm = list(range(r.size))
    rnd.shuffle(perm)
    assert objective(r[perm]) == pytest.approx(objective(r), rel=1e-12, abs=1e-300)


@given(arrays(float, 5, elements=nonzero), arrays(float, 5, elements=st.floats(-1e3, 1e3)),
       st.floats(1e-3, 1e3))
def test_objective_scale_invariant(E, M, c):
    a = objective(residuals(E, M))
    b = objective(residuals(c * E, c * M))
    assert b == pytest.approx(a, rel=1e-9, abs=1e-12)


def test_weights():
    assert objective([1.0, 2.0], weights=[1.0, 0.0]) == 0.5
    with pytest.raises(ValueError):
        objective([1.0, 2.0], weights=[1.0])


def _sample():
    return Dataset(np.array([[1.0, 300.0], [2.0, 310.0]]), np.array([[0.1], [0.2]]),
                   ("p", "T"), ("g",))


def test_dataset_rejects_zero_observable():
    with pytest.raises(DatasetError, match="exactly 0"):
        Dataset(np.zeros((2, 1)), np.array([1.0, 0.0]), ("x",), ("y",))


def test_dataset_condition_index():
    d = Dataset(np.zeros((2, 1)), np.ones((2, 3)), ("x",), ("a", "b", "c"))
    assert d.condition_of(4) == (1, 1)


@pytest.mark.parametrize("suffix", [".csv", ".json"])
def test_dataset_roundtrip(tmp_path, suffix):
    d = _sample()
    path = tmp_path / f"data{suffix}"
    save_dataset(d, path)
    back = load_dataset(path)
    np.testing.assert_array_equal(back.inputs, d.inputs)
    np.testing.assert_array_equal(back.observed, d.observed)
    assert back.input_names == d.input_names and back.observable_names == d.observable_names


def test_load_rejects_zero_in_file(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"inputs": {"x": [1, 2]}, "observed": {"y": [1.0, 0.0]}}))
    with pytest.raises(DatasetError):
        load_dataset(path)


def test_missing_file_names_path(tmp_path):
    path = tmp_path / "nope.csv"
    with pytest.raises(FileNotFoundError, match="nope.csv"):
        load_dataset(path)
