import json

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.stats import ortho_group

from sloppyopt.subspace import (
    EmptySubspaceError,
    eigendecompose,
    lift,
    misalignment,
    partition,
    prune_sloppy,
    spectrum_json,
    split_stiff,
)

spectra = arrays(float, st.integers(2, 12), elements=st.floats(1e-12, 1e6))


def test_eigendecompose_diagonal():
    spec = eigendecompose(np.diag([1.0, 3.0]))
    np.testing.assert_allclose(spec.eigenvalues, [3, 1])
    np.testing.assert_allclose(np.abs(spec.eigenvectors), [[0, 1], [1, 0]])


def test_eigendecompose_2x2():
    spec = eigendecompose(np.array([[2.0, 1.0], [1.0, 2.0]]))
    np.testing.assert_allclose(spec.eigenvalues, [3, 1])
    np.testing.assert_allclose(spec.eigenvectors[:, 0], [1 / np.sqrt(2)] * 2)


@given(st.integers(0, 10_000))
def test_eigendecompose_reconstruction(seed):
    B = np.random.default_rng(seed).standard_normal((10, 10))
    H = B @ B.T
    spec = eigendecompose(H)
    V, lam = spec.eigenvectors, spec.eigenvalues
    assert np.max(np.abs(V @ np.diag(lam) @ V.T - H)) < 1e-8
    np.testing.assert_allclose(V.T @ V, np.eye(10), atol=1e-10)
    assert np.all(np.diff(lam) <= 0)
    # sign convention: largest-magnitude entry of each column is positive
    idx = np.argmax(np.abs(V), axis=0)
    assert np.all(V[idx, np.arange(10)] > 0)


def test_eigendecompose_rejects_asymmetric():
    with pytest.raises(ValueError):
        eigendecompose(np.array([[1.0, 2.0], [0.0, 1.0]]))


@pytest.mark.parametrize("lam, k", [((0.9, 0.05, 0.05), 1), ((0.5, 0.4, 0.1), 2), ((1, 1, 1, 1), 4)])
def test_split_examples(lam, k):
    assert split_stiff(np.array(lam), 0.90) == k


def test_split_default_gamma():
    assert split_stiff(np.array([0.89, 0.11])) == 2
    assert split_stiff(np.array([0.9, 0.1])) == 1


@given(spectra, st.floats(0.05, 0.95), st.floats(0.05, 0.95))
def test_split_monotone_in_gamma(lam, g1, g2):
    lam = np.sort(lam)[::-1]
    lo, hi = sorted((g1, g2))
    assert 1 <= split_stiff(lam, lo) <= split_stiff(lam, hi) <= lam.size


@given(spectra, st.floats(1e-3, 1e3), st.floats(0.1, 0.99))
def test_split_scale_invariant(lam, c, gamma):
    lam = np.sort(lam)[::-1]
    assert split_stiff(lam, gamma) == split_stiff(c * lam, gamma)


def test_prune_example():
    lam = np.array([1.0, 1e-3, 1e-5, 1e-9])
    np.testing.assert_array_equal(prune_sloppy(lam, 1, 1e-4), [1, 2])


def test_prune_equal_sloppy_all_retained():
    np.testing.assert_array_equal(prune_sloppy(np.array([5.0, 1, 1, 1]), 1), [1, 2, 3])


def test_prune_no_sloppy_directions_flagged():
    assert prune_sloppy(np.array([1.0, 1.0]), 2).size == 0
    part = partition(eigendecompose(np.eye(3)), gamma=1.0)
    assert part.k_s == 3 and part.n_sloppy == 0
    assert "no-sloppy-directions" in part.flags


@given(spectra, st.floats(1e-3, 1e3), st.floats(1e-8, 0.5))
def test_prune_scale_invariant(lam, c, tau):
    lam = np.sort(lam)[::-1]
    k_s = split_stiff(lam, 0.9)
    np.testing.assert_array_equal(prune_sloppy(lam, k_s, tau), prune_sloppy(c * lam, k_s, tau))


def test_lift_examples(rng):
    U = ortho_group.rvs(4, random_state=1)[:, :2]
    np.testing.assert_array_equal(lift(np.eye(4), U), U)
    om = np.linalg.qr(rng.standard_normal((7, 4)))[0]
    np.testing.assert_array_equal(lift(om, np.eye(4)), om)
    V = lift(om, U)
    np.testing.assert_allclose(V.T @ V, np.eye(2), atol=1e-10)
    with pytest.raises(ValueError):
        lift(om, np.eye(3))


def test_misalignment_examples():
    V = np.eye(3)[:, :2]
    assert misalignment(V, V) == pytest.approx(0.0, abs=1e-15)
    assert misalignment(np.array([[1.0], [0.0]]), np.array([[0.0], [1.0]])) == pytest.approx(1.0)
    with pytest.raises(EmptySubspaceError):
        misalignment(np.zeros((3, 0)), V)


@given(st.floats(0, np.pi / 2))
def test_misalignment_rotation(alpha):
    a = np.array([[1.0], [0.0]])
    b = np.array([[np.cos(alpha)], [np.sin(alpha)]])
    assert misalignment(a, b) == pytest.approx(1 - np.cos(alpha), abs=1e-12)


@given(st.integers(0, 10_000), st.integers(1, 4), st.integers(1, 4))
def test_misalignment_subspace_properties(seed, k1, k2):
    n = 6
    Q = ortho_group.rvs(n, random_state=seed)
    A, B = Q[:, :k1], np.linalg.qr(Q[:, 1:k2 + 1] + 0.1 * Q[:, :k2])[0]
    d = misalignment(A, B)
    assert 0 <= d <= 1
    assert misalignment(B, A) == pytest.approx(d, abs=1e-10)
    R1 = ortho_group.rvs(k1, random_state=seed + 1) if k1 > 1 else np.array([[-1.0]])
    R2 = ortho_group.rvs(k2, random_state=seed + 2) if k2 > 1 else np.array([[-1.0]])
    assert misalignment(A @ R1, B @ R2) == pytest.approx(d, abs=1e-10)


@given(st.integers(0, 10_000))
def test_partition_bases_orthonormal(seed):
    rng = np.random.default_rng(seed)
    lam = 10.0 ** -rng.uniform(0, 8, 8)
    Q = ortho_group.rvs(8, random_state=seed)
    part = partition(eigendecompose(Q @ np.diag(lam) @ Q.T))
    W = np.hstack([part.V_s, part.V_l])
    np.testing.assert_allclose(W.T @ W, np.eye(W.shape[1]), atol=1e-8)
    assert part.k_s >= 1 and part.n_sloppy >= 1


def test_partition_lifted(rng):
    om = np.linalg.qr(rng.standard_normal((9, 3)))[0]
    part = partition(eigendecompose(np.diag([100.0, 1.0, 1e-3])), omega=om)
    assert part.V_s.shape == (9, 1) and part.V_l.shape == (9, 2)
    np.testing.assert_allclose(np.abs(part.V_s[:, 0]), np.abs(om[:, 0]))


def test_spectrum_json():
    assert json.loads(spectrum_json([np.array([2.0, 1.0]), [3.0]])) == [[2.0, 1.0], [3.0]]


def test_sum_of_exponentials_spectrum_spans_decades():
    from sloppyopt.hessian import fd_jacobian, gauss_newton_hessian
    from sloppyopt.models import sum_of_exponentials_problem

    prob = sum_of_exponentials_problem(8)
    lam = eigendecompose(gauss_newton_hessian(fd_jacobian(prob, prob.theta_star), 0.0)).eigenvalues
    assert np.log10(lam[0] / max(lam[-1], 1e-300)) >= 6
