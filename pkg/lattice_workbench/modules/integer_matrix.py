"""
Exact integer matrix arithmetic.
Matrices are nested tuples of Python ints so entries never overflow.
"""

from fractions import Fraction

import numpy as np

from ..exceptions import DimensionMismatchError, NotUnimodularError


def as_int_rows(rows):
    """Convert any nested sequence of integral values into a tuple of int tuples"""
    converted = []
    for row in rows:
        new_row = []
        for value in row:
            if isinstance(value, str):
                value = int(value, 10)
            elif isinstance(value, float):
                if not value.is_integer():
                    raise ValueError(f"Non-integral entry {value!r}")
                value = int(value)
            else:
                value = int(value)
            new_row.append(value)
        converted.append(tuple(new_row))
    return tuple(converted)


def identity_rows(n):
    return tuple(tuple(1 if i == j else 0 for j in range(n)) for i in range(n))


def check_square(rows):
    """Return the dimension of a square matrix or raise DimensionMismatchError"""
    n = len(rows)
    for row in rows:
        if len(row) != n:
            raise DimensionMismatchError(f"Expected a square {n}x{n} matrix, found a row of length {len(row)}")
    return n


def int_matmul(a, b):
    """
    Exact product of two integer matrices.

    Args:
        a (tuple): n x m matrix as rows
        b (tuple): m x p matrix as rows

    Returns:
        tuple: n x p product as rows
    """
    if a and len(a[0]) != len(b):
        raise DimensionMismatchError(f"Cannot multiply {len(a)}x{len(a[0])} by {len(b)}x{len(b[0]) if b else 0}")
    columns = list(zip(*b))
    return tuple(
        tuple(sum(x * y for x, y in zip(row, col)) for col in columns)
        for row in a
    )


def bareiss_determinant(rows):
    """
    Exact determinant by fraction-free (Bareiss) elimination.

    Every intermediate division is exact, so the computation stays in the integers.
    """
    n = check_square(rows)
    if n == 0:
        return 1
    m = [list(row) for row in rows]
    sign = 1
    previous_pivot = 1
    for k in range(n - 1):
        if m[k][k] == 0:
            swap = next((i for i in range(k + 1, n) if m[i][k] != 0), None)
            if swap is None:
                return 0
            m[k], m[swap] = m[swap], m[k]
            sign = -sign
        pivot = m[k][k]
        for i in range(k + 1, n):
            for j in range(k + 1, n):
                m[i][j] = (m[i][j] * pivot - m[i][k] * m[k][j]) // previous_pivot
        previous_pivot = pivot
    return sign * m[n - 1][n - 1]


class UnimodularMatrix:
    """Square integer matrix with exact determinant +1 or -1"""

    __slots__ = ("_rows", "_det")

    def __init__(self, rows, check=True):
        self._rows = as_int_rows(rows)
        check_square(self._rows)
        self._det = None
        if check:
            det = self.det
            if det not in (1, -1):
                raise NotUnimodularError(f"Determinant is {det}, expected +1 or -1")

    @classmethod
    def identity(cls, n):
        return cls(identity_rows(n), check=False)

    @classmethod
    def signed_permutation(cls, permutation, signs):
        """
        Build H with H[permutation[j]][j] = signs[j].

        Columns of B @ H are then signs[j] * b_{permutation[j]}.
        """
        n = len(permutation)
        if sorted(permutation) != list(range(n)) or len(signs) != n:
            raise ValueError("permutation must be a rearrangement of range(n) with one sign per column")
        rows = [[0] * n for _ in range(n)]
        for j, (p, s) in enumerate(zip(permutation, signs)):
            if s not in (1, -1):
                raise ValueError(f"Sign must be +1 or -1, got {s}")
            rows[p][j] = s
        return cls(rows, check=False)

    @property
    def n(self):
        return len(self._rows)

    @property
    def rows(self):
        return self._rows

    @property
    def det(self):
        if self._det is None:
            self._det = bareiss_determinant(self._rows)
        return self._det

    def __getitem__(self, index):
        i, j = index
        return self._rows[i][j]

    def __matmul__(self, other):
        if not isinstance(other, UnimodularMatrix):
            return NotImplemented
        if other.n != self.n:
            raise DimensionMismatchError(f"Cannot multiply {self.n}x{self.n} by {other.n}x{other.n}")
        return UnimodularMatrix(int_matmul(self._rows, other._rows), check=False)

    def __eq__(self, other):
        if isinstance(other, UnimodularMatrix):
            return self._rows == other._rows
        return NotImplemented

    def __hash__(self):
        return hash(self._rows)

    def __repr__(self):
        return f"UnimodularMatrix({[list(r) for r in self._rows]})"

    def transpose(self):
        return UnimodularMatrix(tuple(zip(*self._rows)), check=False)

    def inverse(self):
        """Exact inverse by Gauss-Jordan elimination over the rationals"""
        n = self.n
        aug = [[Fraction(v) for v in row] + [Fraction(int(i == j)) for j in range(n)]
               for i, row in enumerate(self._rows)]
        for col in range(n):
            pivot = next(r for r in range(col, n) if aug[r][col] != 0)
            aug[col], aug[pivot] = aug[pivot], aug[col]
            scale = aug[col][col]
            aug[col] = [v / scale for v in aug[col]]
            for r in range(n):
                if r != col and aug[r][col] != 0:
                    factor = aug[r][col]
                    aug[r] = [v - factor * w for v, w in zip(aug[r], aug[col])]
        rows = []
        for row in aug:
            inverse_row = row[n:]
            # unimodular inverse is integral
            assert all(v.denominator == 1 for v in inverse_row)
            rows.append(tuple(int(v) for v in inverse_row))
        return UnimodularMatrix(rows, check=False)

    def is_identity(self):
        return self._rows == identity_rows(self.n)

    def to_numpy(self):
        return np.array(self._rows, dtype=np.float64)

    def to_lists(self):
        return [list(row) for row in self._rows]
