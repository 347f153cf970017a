import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from sparserec.operators import (
    DenseOperator,
    FBIError,
    SparseSignal,
    SupportSet,
    column,
    gram,
    gram_entry,
    l1l1_norm,
    load_matrix,
    load_vector,
    normalize_columns,
    pinv_apply,
    restrict,
    restricted_gram_inverse,
    save_matrix,
    save_vector,
    smallest_restricted_singular_value,
    spectral_norm,
)


def test_rejects_non_finite_and_bad_shapes():
    with pytest.raises(ValueError):
        DenseOperator(np.array([[1.0, np.nan]]))
    with pytest.raises(ValueError):
        DenseOperator(np.ones(3))
    with pytest.raises(ValueError):
        DenseOperator(np.ones((2, 2)), normalized=True)


def test_column_norms_cached_and_accurate(rng):
    A = rng.standard_normal((7, 5))
    K = DenseOperator(A)
    ref = np.sqrt(np.sum(A**2, axis=0))
    np.testing.assert_allclose(K.column_norms, ref, rtol=1e-12)
    assert not K.entries.flags.writeable


def test_column_contract():
    K = DenseOperator(np.eye(3))
    np.testing.assert_array_equal(column(K, 1), [0, 1, 0])
    assert column(K, 1).flags.c_contiguous
    with pytest.raises(IndexError):
        column(K, 3)


def test_gram_entry_examples():
    K = DenseOperator(np.eye(4))
    assert gram_entry(K, 0, 2) == 0.0
    assert gram_entry(K, 3, 3) == 1.0
    h = np.sqrt(0.5)
    K2 = DenseOperator(np.array([[1.0, h], [0.0, h]]))
    assert gram_entry(K2, 0, 1) == pytest.approx(h, abs=1e-15)


def test_support_set_rules():
    assert SupportSet.of([3, 1]).indices == (1, 3)
    with pytest.raises(ValueError):
        SupportSet((2, 1))
    with pytest.raises(ValueError):
        SupportSet.of([1, 1])
    with pytest.raises(IndexError):
        SupportSet.of([5]).validate(5)
    assert SupportSet.of([0, 2]).complement(4).indices == (1, 3)


def test_sparse_signal_support_is_exact():
    u = SparseSignal([0.0, 3.0, 0.0, -1.0, 1e-300])
    assert u.support().indices == (1, 3, 4)


def test_restrict_examples(rng):
    A = rng.standard_normal((3, 4))
    K = DenseOperator(A)
    np.testing.assert_array_equal(restrict(K, range(4)).entries, A)
    np.testing.assert_array_equal(restrict(K, [1, 3]).entries, A[:, [1, 3]])
    with pytest.raises(ValueError):
        restrict(K, [])


@settings(max_examples=40, deadline=None)
@given(st.data())
def test_restrict_composes(data):
    cols = data.draw(st.integers(2, 12))
    outer = sorted(data.draw(st.sets(st.integers(0, cols - 1), min_size=1)))
    inner_pos = sorted(data.draw(st.sets(st.integers(0, len(outer) - 1), min_size=1)))
    A = np.arange(3 * cols, dtype=float).reshape(3, cols)
    K = DenseOperator(A)
    twice = restrict(restrict(K, outer), inner_pos)
    once = restrict(K, [outer[i] for i in inner_pos])
    np.testing.assert_array_equal(twice.entries, once.entries)


def test_pinv_examples(rng):
    Q, _ = np.linalg.qr(rng.standard_normal((6, 3)))
    KI = DenseOperator(Q)
    np.testing.assert_allclose(pinv_apply(KI, Q[:, 0]), [1, 0, 0], atol=1e-14)
    # vector orthogonal to range
    v = rng.standard_normal(6)
    v -= Q @ (Q.T @ v)
    np.testing.assert_allclose(pinv_apply(KI, v), 0, atol=1e-13)


def test_pinv_matches_normal_equations_oracle(rng):
    A = rng.standard_normal((6, 3))
    v = rng.standard_normal(6)
    oracle = np.linalg.solve(A.T @ A, A.T @ v)
    x = pinv_apply(DenseOperator(A), v)
    np.testing.assert_allclose(x, oracle, atol=1e-8)
    r = v - A @ x
    assert np.max(np.abs(A.T @ r)) <= 1e-8 * np.linalg.norm(v)


def test_pinv_left_inverse_and_fbi(rng):
    A = rng.standard_normal((8, 4))
    x = rng.standard_normal(4)
    np.testing.assert_allclose(pinv_apply(DenseOperator(A), A @ x), x, atol=1e-8)
    B = np.column_stack([A[:, 0], A[:, 0]])
    with pytest.raises(FBIError) as exc:
        pinv_apply(DenseOperator(B), np.ones(8))
    assert exc.value.smallest < 1e-10 * exc.value.largest


def test_restricted_gram_inverse_examples(rng):
    Q, _ = np.linalg.qr(rng.standard_normal((5, 5)))
    np.testing.assert_allclose(restricted_gram_inverse(DenseOperator(Q), [0, 2, 3]), np.eye(3), atol=1e-12)
    K = DenseOperator(np.array([[3.0], [0.0]]) * np.array([[1.0]]))
    np.testing.assert_allclose(restricted_gram_inverse(K, [0]), [[1 / 9]], rtol=1e-14)
    rho = 0.3
    K2 = DenseOperator(np.array([[1.0, rho], [0.0, np.sqrt(1 - rho**2)]]))
    closed = np.array([[1, -rho], [-rho, 1]]) / (1 - rho**2)
    np.testing.assert_allclose(restricted_gram_inverse(K2, [0, 1]), closed, atol=1e-12)


def test_restricted_gram_inverse_is_inverse(rng):
    K = DenseOperator(rng.standard_normal((10, 8)))
    I = [0, 3, 4, 7]
    prod = restricted_gram_inverse(K, I) @ gram(K, I)
    assert np.linalg.norm(prod - np.eye(4)) <= 1e-8


def test_l1l1_norm_examples(rng):
    assert l1l1_norm(np.eye(4)) == 1.0
    assert l1l1_norm([[1, -2], [3, 0]]) == 4.0
    M = rng.standard_normal((5, 5))
    oracle = max(sum(abs(M[i, j]) for i in range(5)) for j in range(5))
    assert l1l1_norm(M) == pytest.approx(oracle, rel=1e-14)


@settings(max_examples=60, deadline=None)
@given(
    arrays(np.float64, (4, 3), elements=st.floats(-1e3, 1e3)),
    arrays(np.float64, (4, 3), elements=st.floats(-1e3, 1e3)),
    st.floats(-1e3, 1e3),
)
def test_l1l1_subadditive_homogeneous(A, B, c):
    assert l1l1_norm(A + B) <= l1l1_norm(A) + l1l1_norm(B) + 1e-9
    assert l1l1_norm(c * A) == pytest.approx(abs(c) * l1l1_norm(A), rel=1e-12, abs=1e-9)


def test_smallest_singular_value(rng):
    Q, _ = np.linalg.qr(rng.standard_normal((6, 4)))
    assert smallest_restricted_singular_value(DenseOperator(Q), [0, 1, 2, 3]) == pytest.approx(1, abs=1e-12)
    A = rng.standard_normal((5, 3))
    D = DenseOperator(np.column_stack([A, A[:, 1]]))
    assert smallest_restricted_singular_value(D, [1, 3]) <= 1e-10
    B = rng.standard_normal((8, 3))
    K = DenseOperator(B)
    svd_oracle = np.linalg.svd(B, compute_uv=False)[-1]
    s = smallest_restricted_singular_value(K, [0, 1, 2])
    assert s == pytest.approx(svd_oracle, abs=1e-8)
    assert s**2 == pytest.approx(np.linalg.eigvalsh(B.T @ B)[0], abs=1e-8)


def test_spectral_norm_matches_svd(rng):
    for shape in [(40, 7), (7, 40)]:
        A = rng.standard_normal(shape)
        assert spectral_norm(DenseOperator(A)) == pytest.approx(np.linalg.norm(A, 2), rel=1e-12)


def test_normalize_columns(rng):
    A = rng.standard_normal((5, 3))
    Kn, s = normalize_columns(DenseOperator(A))
    assert Kn.normalized
    np.testing.assert_allclose(Kn.entries * s, A, rtol=1e-14)
    _, s1 = normalize_columns(Kn)
    np.testing.assert_allclose(s1, 1, atol=1e-12)
    B = A / np.linalg.norm(A, axis=0)
    B[:, 1] *= 3
    _, s3 = normalize_columns(DenseOperator(B))
    assert s3[1] == pytest.approx(3, rel=1e-14)
    with pytest.raises(ValueError):
        normalize_columns(DenseOperator(np.zeros((2, 2))))


def test_matrix_text_round_trip(tmp_path, rng):
    A = rng.standard_normal((4, 3))
    save_matrix(tmp_path / "a.txt", A)
    np.testing.assert_array_equal(load_matrix(tmp_path / "a.txt"), A)
    assert (tmp_path / "a.txt").read_text().splitlines()[0] == "4 3"
    save_vector(tmp_path / "v.txt", A[:, 0])
    np.testing.assert_array_equal(load_vector(tmp_path / "v.txt"), A[:, 0])
    (tmp_path / "bad.txt").write_text("2 2\n1 2 3\n")
    with pytest.raises(ValueError):
        load_matrix(tmp_path / "bad.txt")
