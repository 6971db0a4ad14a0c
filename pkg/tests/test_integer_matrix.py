import numpy as np
import pytest

from lattice_workbench.exceptions import DimensionMismatchError, NotUnimodularError
from lattice_workbench.modules.integer_matrix import (
    UnimodularMatrix,
    as_int_rows,
    bareiss_determinant,
    identity_rows,
    int_matmul,
)
from lattice_workbench.modules.sampling import make_rng


@pytest.mark.parametrize("rows, expected", [
    ([[5]], 5),
    ([[2, 0], [0, 3]], 6),
    ([[0, 1], [1, 0]], -1),
    ([[1, 2], [2, 4]], 0),
    ([[1, 2, 3], [4, 5, 6], [7, 8, 10]], -3),
    ([[0, 0, 1], [0, 1, 0], [1, 0, 0]], -1),
])
def test_bareiss_determinant_examples(rows, expected):
    assert bareiss_determinant(rows) == expected


def test_bareiss_matches_floating_determinant_on_small_entries():
    rng = make_rng(7)
    for _ in range(50):
        rows = rng.integers(-9, 10, size=(5, 5)).tolist()
        assert bareiss_determinant(rows) == int(round(np.linalg.det(np.array(rows, dtype=float))))


def test_bareiss_is_exact_beyond_64_bits():
    big = 10**30
    assert bareiss_determinant([[big, 1], [big - 1, 1]]) == 1


def test_as_int_rows_accepts_strings_and_integral_floats():
    assert as_int_rows([["12345678901234567890", 2.0], [-3, "4"]]) == ((12345678901234567890, 2), (-3, 4))
    with pytest.raises(ValueError):
        as_int_rows([[0.5]])


def test_int_matmul():
    assert int_matmul(((1, 2), (3, 4)), ((0, 1), (1, 0))) == ((2, 1), (4, 3))
    with pytest.raises(DimensionMismatchError):
        int_matmul(((1, 2),), ((1, 2),))


def test_unimodular_rejects_other_determinants():
    with pytest.raises(NotUnimodularError):
        UnimodularMatrix([[2, 0], [0, 1]])
    with pytest.raises(DimensionMismatchError):
        UnimodularMatrix([[1, 0, 0], [0, 1, 0]])


def test_unimodular_product_and_inverse():
    q = UnimodularMatrix([[2, 3, 0], [1, 2, 0], [4, -1, 1]])
    assert q.det == 1
    assert (q @ q.inverse()).is_identity()
    assert (q.inverse() @ q).is_identity()


def test_inverse_of_large_shear():
    big = 10**30
    q = UnimodularMatrix([[1, big], [0, 1]])
    assert q.inverse().rows == ((1, -big), (0, 1))


def test_signed_permutation_determinant():
    h = UnimodularMatrix.signed_permutation([1, 0, 2], [1, 1, -1])
    # a transposition and one sign flip
    assert h.det == 1
    assert h[(0, 1)] == 1 and h[(1, 0)] == 1 and h[(2, 2)] == -1
    with pytest.raises(ValueError):
        UnimodularMatrix.signed_permutation([0, 0], [1, 1])


def test_identity_equality_and_hash():
    a = UnimodularMatrix.identity(3)
    b = UnimodularMatrix(identity_rows(3))
    assert a == b
    assert len({a, b}) == 1
    assert a.transpose() == a
