import numpy as np
import pytest

from mnmr.linalg import (
    BlockSplit,
    DimensionError,
    NotPositiveDefiniteError,
    kron,
    partition,
    spd_factor,
    spd_solve,
    unvec,
    vec,
)

from conftest import random_spd


def test_kron_identity_blocks():
    out = kron([[1, 2], [3, 4]], np.eye(2))
    expected = [[1, 0, 2, 0], [0, 1, 0, 2], [3, 0, 4, 0], [0, 3, 0, 4]]
    np.testing.assert_array_equal(out, expected)


def test_kron_with_scalar_identity(rng):
    b = rng.standard_normal((3, 2))
    np.testing.assert_array_equal(kron(np.eye(1), b), b)


def test_kron_scale_exchange(rng):
    V, U = random_spd(rng, 2), random_spd(rng, 2)
    np.testing.assert_allclose(kron(V / 2, 2 * U), kron(V, U), atol=1e-12, rtol=0)


@pytest.mark.parametrize("shape", [(2, 2), (3, 3), (2, 3)])
def test_kron_bilinear(rng, shape):
    a, b = rng.standard_normal(shape), rng.standard_normal(shape[::-1])
    np.testing.assert_allclose(kron(3.7 * a, b), 3.7 * kron(a, b))


def test_kron_mixed_product_inverse(rng):
    for n, m in [(2, 3), (4, 4), (3, 1)]:
        V, U = random_spd(rng, n), random_spd(rng, m)
        prod = kron(V, U) @ kron(np.linalg.inv(V), np.linalg.inv(U))
        np.testing.assert_allclose(prod, np.eye(n * m), atol=1e-8)


def test_vec_column_stacking():
    np.testing.assert_array_equal(vec([[1, 2], [3, 4]]), [1, 3, 2, 4])
    np.testing.assert_array_equal(vec(np.array([[1.0], [2.0], [3.0]])), [1, 2, 3])


def test_vec_element_index(rng):
    x = rng.standard_normal((3, 5))
    v = vec(x)
    for i in range(3):
        for j in range(5):
            assert v[i + 3 * j] == x[i, j]


def test_vec_stack_matches_single(rng):
    xs = rng.standard_normal((4, 3, 2))
    np.testing.assert_array_equal(vec(xs), np.stack([vec(x) for x in xs]))


def test_unvec_roundtrip(rng):
    x = rng.standard_normal((3, 5))
    np.testing.assert_array_equal(unvec(vec(x), 3, 5), x)
    np.testing.assert_array_equal(unvec([1, 3, 2, 4], 2, 2), [[1, 2], [3, 4]])
    v = rng.standard_normal(12)
    np.testing.assert_array_equal(vec(unvec(v, 4, 3)), v)


def test_unvec_length_mismatch():
    with pytest.raises(DimensionError):
        unvec(np.arange(5.0), 2, 2)


def test_spd_factor_identity():
    f = spd_factor(np.eye(3), ridge=0)
    np.testing.assert_array_equal(f.lower, np.eye(3))
    assert f.logdet == 0.0


def test_spd_factor_diagonal():
    f = spd_factor(np.diag([4.0, 9.0]), ridge=0)
    np.testing.assert_allclose(f.lower, np.diag([2.0, 3.0]))
    assert f.logdet == pytest.approx(np.log(36.0), abs=1e-12)


def test_spd_factor_indefinite_raises():
    with pytest.raises(NotPositiveDefiniteError, match="V11"):
        spd_factor([[1.0, 2.0], [2.0, 1.0]], ridge=0, name="V11")
    with pytest.raises(NotPositiveDefiniteError):
        spd_factor([[1.0, 2.0], [2.0, 1.0]])


def test_spd_factor_rejects_asymmetric():
    with pytest.raises(DimensionError):
        spd_factor([[1.0, 0.5], [0.0, 1.0]])


def test_spd_factor_ridge_fallback_on_singular():
    s = np.ones((3, 3))
    f = spd_factor(s)
    assert f.ridge == pytest.approx(1e-9)
    np.testing.assert_allclose(f.matrix(), s + f.ridge * np.eye(3), rtol=1e-8, atol=1e-14)


def test_spd_factor_reconstruction_and_logdet(rng):
    for n in (1, 3, 6):
        s = random_spd(rng, n, cond=1e3)
        f = spd_factor(s, ridge=0)
        np.testing.assert_allclose(f.matrix(), s, rtol=1e-8, atol=1e-10)
        assert f.logdet == pytest.approx(2 * np.sum(np.log(np.diag(f.lower))), abs=1e-10)
        assert f.logdet == pytest.approx(np.linalg.slogdet(s)[1], abs=1e-9)


def test_spd_solve():
    np.testing.assert_array_equal(spd_solve(spd_factor(np.eye(2)), [[1.0, 2.0], [3.0, 4.0]]), [[1, 2], [3, 4]])
    np.testing.assert_allclose(spd_solve(spd_factor(np.diag([4.0, 9.0])), [4.0, 9.0]), [1.0, 1.0])


def test_spd_solve_random(rng):
    s = random_spd(rng, 5, cond=100)
    b = rng.standard_normal((5, 3))
    x = spd_solve(spd_factor(s), b)
    np.testing.assert_allclose(s @ x, b, rtol=1e-8, atol=1e-10)


def test_spd_solve_dimension_mismatch():
    with pytest.raises(DimensionError):
        spd_solve(spd_factor(np.eye(3)), np.ones((2, 1)))


def test_block_split_and_partition(rng):
    with pytest.raises(DimensionError):
        BlockSplit(0, 3)
    s = random_spd(rng, 5)
    a, b, c, d = partition(s, BlockSplit(2, 3))
    assert a.shape == (2, 2) and b.shape == (2, 3) and c.shape == (3, 2) and d.shape == (3, 3)
    np.testing.assert_array_equal(np.block([[a, b], [c, d]]), s)
    with pytest.raises(DimensionError):
        partition(s, BlockSplit(2, 2))
