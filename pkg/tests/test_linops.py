import numpy as np
import pytest

from ibpg.linops import (
    LinearOperator,
    adjoint_mismatch,
    finite_difference,
    gaussian_matrix,
    haar_dictionary,
    load_operator_text,
    measurement_count,
    planted_signal,
    save_operator_text,
    substream,
)


def test_gaussian_deterministic_and_seed_sensitive():
    a = gaussian_matrix(5, 4, 7).matrix
    b = gaussian_matrix(5, 4, 7).matrix
    assert a.tobytes() == b.tobytes()
    assert not np.array_equal(a, gaussian_matrix(5, 4, 8).matrix)


def test_gaussian_column_variance():
    A = gaussian_matrix(2000, 10, 0).matrix
    v = A.var(axis=0, ddof=1)
    assert np.all((v > 0.8) & (v < 1.2))


def test_gaussian_normalize():
    A = gaussian_matrix(50, 16, 0, normalize=True).matrix
    assert np.allclose(A, gaussian_matrix(50, 16, 0).matrix / 4.0)


def test_substreams_independent():
    a = substream(0, "matrix").standard_normal(3)
    b = substream(0, "signal").standard_normal(3)
    assert not np.array_equal(a, b)
    np.testing.assert_array_equal(a, substream(0, "matrix").standard_normal(3))


@pytest.mark.parametrize("op", [gaussian_matrix(7, 5, 1), finite_difference(9), haar_dictionary(16, 2)])
def test_adjoint(op):
    assert adjoint_mismatch(op, probes=20) <= 1e-10
    basis = np.eye(op.shape[1])
    np.testing.assert_allclose(np.column_stack([op.apply(e) for e in basis]), op.to_dense())


def test_finite_difference():
    D = finite_difference(3)
    np.testing.assert_array_equal(D.apply(np.array([0.0, 1.0, 3.0])), [1.0, 2.0])
    np.testing.assert_array_equal(D.apply(np.full(3, 2.5)), [0.0, 0.0])
    M = finite_difference(6).matrix
    assert M.shape == (5, 6)
    assert np.linalg.matrix_rank(M) == 5
    null = np.linalg.svd(M)[2][-1]
    assert np.allclose(np.abs(null), 1 / np.sqrt(6))
    with pytest.raises(ValueError):
        finite_difference(1)


def test_haar_shape_and_norms():
    assert haar_dictionary(8, 1).shape == (8, 16)
    W = haar_dictionary(32, 3).matrix
    np.testing.assert_allclose(np.linalg.norm(W, axis=0), 1.0, atol=1e-12)
    for n, j in [(12, 1), (8, 3), (8, 0)]:
        with pytest.raises(ValueError):
            haar_dictionary(n, j)


def test_haar_shift_invariance():
    W = haar_dictionary(16, 2).matrix
    # column i of channel c is column 0 of that channel circularly shifted by i
    for c in range(3):
        base = W[:, 16 * c]
        for i in (1, 5, 11):
            np.testing.assert_allclose(W[:, 16 * c + i], np.roll(base, i), atol=1e-15)


def test_planted_signals():
    x = planted_signal("sparse", 128, 12, 0)
    assert np.count_nonzero(x) == 12
    xb = planted_signal("block-sparse", 128, 2, 0, block_size=8)
    active = sorted({i // 8 for i in np.flatnonzero(xb)})
    assert len(active) == 2 and np.count_nonzero(xb) == 16
    xt = planted_signal("piecewise-constant", 128, 12, 0)
    assert np.count_nonzero(np.diff(xt)) == 12
    nz = np.abs(x[x != 0])
    assert np.all((nz >= 0.5) & (nz <= 1.5))
    np.testing.assert_array_equal(x, planted_signal("sparse", 128, 12, 0))


@pytest.mark.parametrize("args", [("sparse", 4, 5), ("block-sparse", 10, 1), ("piecewise-constant", 4, 4),
                                  ("blob", 4, 1)])
def test_planted_signal_infeasible(args):
    with pytest.raises(ValueError):
        planted_signal(*args, seed=0, block_size=4)


def test_measurement_recipes():
    assert measurement_count("l1", 128, 12) == 101
    assert measurement_count("group", 128, 2, 8) == 622
    assert measurement_count("tv", 128, 12) == 350
    with pytest.raises(ValueError):
        measurement_count("nope", 8, 1)


def test_text_round_trip(tmp_path):
    A = gaussian_matrix(3, 4, 2).matrix
    save_operator_text(tmp_path / "a.txt", A)
    np.testing.assert_array_equal(load_operator_text(tmp_path / "a.txt"), A)
    first = (tmp_path / "a.txt").read_text().splitlines()[0]
    assert "3" in first and "4" in first


def test_linear_operator_rejects_non_matrix():
    with pytest.raises(ValueError):
        LinearOperator(np.zeros(3))
