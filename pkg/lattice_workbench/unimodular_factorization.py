"""
Extended Gauss moves and the constructive factorization of SL_n(Z).

An extended Gauss move is the identity plus one non-trivial row i and one non-trivial column j.
factor() peels the last row and column off the working matrix with at most four such moves per
dimension until a 3x3 block is left, then writes that block as a product of plain shears.
All arithmetic is exact (Python ints); indices are 0-based.
"""
import logging
import math
from dataclasses import dataclass
from functools import reduce

from .config import COPRIME_SEARCH_LIMIT
from .exceptions import (
    CoprimeSearchError,
    DataFormatError,
    DimensionMismatchError,
    InfeasibleBezoutError,
    NotSpecialLinearError,
    NotUnimodularError,
)
from .modules.integer_matrix import UnimodularMatrix, identity_rows, int_matmul
from .modules.matrix_io import int_matrix_from_json, int_matrix_to_json

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ExtendedGaussMove:
    """
    E = I + e_i a^T + b e_j^T.

    a holds row i off the diagonal, including the intersection entry a[j]; b holds column j
    off the diagonal and off row i. With a[i] = b[i] = b[j] = 0 and i != j, det E = 1.
    """

    n: int
    i: int
    j: int
    a: tuple
    b: tuple

    def __post_init__(self):
        object.__setattr__(self, "a", tuple(int(v) for v in self.a))
        object.__setattr__(self, "b", tuple(int(v) for v in self.b))
        if not (0 <= self.i < self.n and 0 <= self.j < self.n) or self.i == self.j:
            raise ValueError(f"Invalid move indices i={self.i}, j={self.j} for n={self.n}")
        if len(self.a) != self.n or len(self.b) != self.n:
            raise DimensionMismatchError(f"Move vectors must have length {self.n}")
        if self.a[self.i] != 0 or self.b[self.i] != 0 or self.b[self.j] != 0:
            raise ValueError("Move must satisfy a[i] = b[i] = b[j] = 0")

    @classmethod
    def row(cls, n, i, values, j=None):
        """Row-only move: row i of E is e_i + values (values[i] ignored)"""
        if j is None:
            j = 0 if i != 0 else 1
        a = [int(v) for v in values]
        a[i] = 0
        return cls(n, i, j, tuple(a), (0,) * n)

    @classmethod
    def column(cls, n, j, values, i=None):
        """Column-only move: column j of E is e_j + values (values[j] ignored)"""
        if i is None:
            i = 0 if j != 0 else 1
        b = [int(v) for v in values]
        b[j] = 0
        a = [0] * n
        a[j] = b[i]  # the (i, j) entry is stored in the row part
        b[i] = 0
        return cls(n, i, j, tuple(a), tuple(b))

    def is_identity(self):
        return not any(self.a) and not any(self.b)

    def is_row_only(self):
        return not any(self.b)

    def is_column_only(self):
        return all(v == 0 for k, v in enumerate(self.a) if k != self.j)

    def rows(self):
        m = [list(r) for r in identity_rows(self.n)]
        for k in range(self.n):
            if k != self.i:
                m[self.i][k] = self.a[k]
            if k not in (self.i, self.j):
                m[k][self.j] = self.b[k]
        return tuple(tuple(r) for r in m)

    def to_json(self):
        return {"i": self.i, "j": self.j, "a": [str(v) for v in self.a], "b": [str(v) for v in self.b]}


@dataclass(frozen=True)
class GaussMove:
    """Identity plus the single off-diagonal entry `value` at (i, j)"""

    n: int
    i: int
    j: int
    value: int

    def __post_init__(self):
        if not (0 <= self.i < self.n and 0 <= self.j < self.n) or self.i == self.j:
            raise ValueError(f"Invalid move indices i={self.i}, j={self.j} for n={self.n}")

    def to_extended(self):
        a = [0] * self.n
        a[self.j] = self.value
        return ExtendedGaussMove(self.n, self.i, self.j, tuple(a), (0,) * self.n)

    def rows(self):
        return self.to_extended().rows()


@dataclass
class MoveFactorization:
    moves: list
    target: UnimodularMatrix
    induction_moves: int = 0
    base_moves: int = 0
    sign_flipped: bool = False

    @property
    def n(self):
        return self.target.n

    def __len__(self):
        return len(self.moves)

    def to_json(self):
        return {
            "n": self.n,
            "moves": [m.to_json() for m in self.moves],
            "target": int_matrix_to_json(self.target),
            "induction_moves": self.induction_moves,
            "base_moves": self.base_moves,
            "sign_flipped": self.sign_flipped,
        }

    @classmethod
    def from_json(cls, obj):
        try:
            n = int(obj["n"])
            moves = [ExtendedGaussMove(n, int(m["i"]), int(m["j"]), tuple(int(v) for v in m["a"]),
                                       tuple(int(v) for v in m["b"])) for m in obj["moves"]]
            target = UnimodularMatrix(int_matrix_from_json(obj["target"]))
        except (KeyError, TypeError, ValueError) as e:
            raise DataFormatError(f"invalid factorization object ({e})") from e
        return cls(moves, target, int(obj.get("induction_moves", 0)), int(obj.get("base_moves", 0)),
                   bool(obj.get("sign_flipped", False)))


def materialize(move):
    """Exact matrix of a (extended) Gauss move; its determinant is certified to be 1"""
    matrix = UnimodularMatrix(move.rows())
    if matrix.det != 1:
        raise NotSpecialLinearError(f"Move materialized with determinant {matrix.det}")
    return matrix


def invert_move(move):
    """
    Inverse of an extended Gauss move as a list of at most two moves.

    E = (I + b e_j^T)(I + e_i a^T), hence E^-1 = (I - e_i a^T)(I - b e_j^T).
    """
    if move.is_identity():
        return []
    zeros = (0,) * move.n
    negated_a = tuple(-v for v in move.a)
    negated_b = tuple(-v for v in move.b)
    if move.is_row_only():
        return [ExtendedGaussMove(move.n, move.i, move.j, negated_a, zeros)]
    if move.is_column_only():
        return [ExtendedGaussMove(move.n, move.i, move.j, negated_a, negated_b)]
    return [ExtendedGaussMove(move.n, move.i, move.j, negated_a, zeros),
            ExtendedGaussMove(move.n, move.i, move.j, zeros, negated_b)]


def product(moves, n):
    """Exact ordered product of materialized moves (identity for an empty list)"""
    return UnimodularMatrix(reduce(lambda acc, m: int_matmul(acc, m.rows()), moves, identity_rows(n)), check=False)


def extended_gcd(a, b):
    """Return (x, y, g) with x*a + y*b == g == gcd(a, b) >= 0"""
    x, next_x = 1, 0
    y, next_y = 0, 1
    g, next_g = a, b
    while next_g:
        q = g // next_g
        x, next_x = next_x, x - q * next_x
        y, next_y = next_y, y - q * next_y
        g, next_g = next_g, g - q * next_g
    if g < 0:
        x, y, g = -x, -y, -g
    return x, y, g


def multi_bezout(values, target):
    """
    Integer coefficients c with sum(c_k * values_k) == target.

    Raises:
        InfeasibleBezoutError: if all values vanish or their gcd does not divide target
    """
    values = [int(v) for v in values]
    if not any(values):
        raise InfeasibleBezoutError("At least one value must be non-zero")
    coefficients = []
    g = 0
    for v in values:
        x, y, g = extended_gcd(g, v)
        coefficients = [c * x for c in coefficients] + [y]
    if target % g != 0:
        raise InfeasibleBezoutError(f"gcd {g} does not divide {target}")
    scale = target // g
    return [c * scale for c in coefficients]


def _right_multiply_gauss(rows, move):
    """rows @ (I + value e_i e_j^T): column j += value * column i"""
    for row in rows:
        row[move.j] += move.value * row[move.i]


def _coprimify(rows, m, n):
    """Coprimification of row m-1 over columns 0..m-2 of the working block; mutates rows"""
    r = m - 1
    head = rows[r][:m - 1]
    last = rows[r][m - 1]
    if math.gcd(*head) == 1:
        return None
    if last == 0:
        raise NotUnimodularError("Row entries are not coprime; the matrix is not unimodular")

    zero_slots = [k for k, v in enumerate(head) if v == 0]
    if zero_slots:
        move = GaussMove(n, r, zero_slots[0], 1)
    else:
        pivot = next(k for k, v in enumerate(head) if v != 0)
        others = math.gcd(*(v for k, v in enumerate(head) if k != pivot))
        shift = None
        if m - 1 == 1:
            shift = next(((t - head[pivot]) // last for t in (1, -1) if (t - head[pivot]) % last == 0), None)
            if shift is None:
                raise ValueError(
                    f"n = 2: no single Gauss move makes the last row {head + [last]} coprime "
                    f"({head[pivot]} + t * {last} = +-1 has no integer solution)"
                )
        else:
            for step in range(1, COPRIME_SEARCH_LIMIT + 1):
                for t in (step, -step):
                    if math.gcd(head[pivot] + t * last, others) == 1:
                        shift = t
                        break
                if shift is not None:
                    break
        if shift is None:
            raise CoprimeSearchError(f"No shift found for row {head + [last]}")
        move = GaussMove(n, r, pivot, shift)
    _right_multiply_gauss(rows, move)
    return move


def coprimify_last_row(matrix):
    """
    Make the non-zero entries among the first n-1 entries of the last row coprime.

    For n = 2 the head is a single entry u1, and one move can only reach u1 + t * u2; when no t
    gives +-1 (for example the row [2, 5]) the call fails. factor never needs this case since
    blocks of size 3 and below go to base_case_factor.

    Args:
        matrix (UnimodularMatrix): det must be +1, n >= 2

    Returns:
        tuple: (GaussMove or None, matrix @ move)

    Raises:
        ValueError: for n = 2 when the last row cannot be made coprime by a single move
    """
    _require_special_linear(matrix)
    if matrix.n < 2:
        raise ValueError("coprimify_last_row needs n >= 2")
    rows = matrix.to_lists()
    move = _coprimify(rows, matrix.n, matrix.n)
    return move, UnimodularMatrix(rows, check=False)


def _require_special_linear(matrix):
    if matrix.det != 1:
        raise NotSpecialLinearError(
            f"Determinant is {matrix.det}; factor needs det = +1 (use factor_with_sign for det = -1)"
        )


def _peel_dimension(rows, m, n):
    """
    Reduce the working block of size m to size m - 1.

    Returns:
        tuple: (left moves L with L W R = W', right moves R in application order)
    """
    r = m - 1
    if rows[r][:m] == [0] * r + [1] and all(rows[k][r] == 0 for k in range(r)):
        return [], []
    right = []
    gauss = _coprimify(rows, m, n)
    if gauss is not None:
        right.append(gauss.to_extended())

    # Bezout step: last diagonal entry becomes 1
    head = rows[r][:r]
    coefficients = multi_bezout(head, 1 - rows[r][r])
    if any(coefficients):
        move = ExtendedGaussMove.column(n, r, coefficients + [0] * (n - r))
        for row in rows:
            row[r] += sum(c * row[k] for k, c in enumerate(coefficients))
        right.append(move)

    # clear the last row
    clear = [-v for v in rows[r][:r]]
    if any(clear):
        move = ExtendedGaussMove.row(n, r, clear + [0] * (n - r))
        for row in rows:
            pivot_column = row[r]
            for k, c in enumerate(clear):
                row[k] += c * pivot_column
        right.append(move)

    # clear the last column by a move applied on the left
    left = []
    column = [-rows[k][r] for k in range(r)]
    if any(column):
        move = ExtendedGaussMove.column(n, r, column + [0] * (n - r))
        for k, c in enumerate(column):
            rows[k] = [x + c * y for x, y in zip(rows[k], rows[r])]
        left.append(move)

    assert rows[r][:m] == [0] * r + [1]
    assert all(rows[k][r] == 0 for k in range(r))
    return left, right


def _shear_reduce(rows, size, n):
    """
    Row-reduce the leading size x size block of an SL matrix to the identity with shears.

    Returns:
        list: GaussMoves whose ordered product equals the block
    """
    ops = []

    def row_op(i, j, v):
        rows[i] = [x + v * y for x, y in zip(rows[i], rows[j])]
        ops.append((i, j, v))

    for c in range(size):
        while True:
            nonzero = [r for r in range(c, size) if rows[r][c] != 0]
            if len(nonzero) <= 1:
                break
            p = min(nonzero, key=lambda r: abs(rows[r][c]))
            for r in nonzero:
                if r != p:
                    q = rows[r][c] // rows[p][c]
                    if q:
                        row_op(r, p, -q)
        if not nonzero:
            raise NotUnimodularError("Singular block in shear reduction")
        p = nonzero[0]
        if p != c:
            row_op(c, p, 1)
            row_op(p, c, -1)

    for c in range(size - 1, -1, -1):
        for r in range(c):
            if rows[r][c]:
                row_op(r, c, -rows[r][c] * rows[c][c])

    negatives = [c for c in range(size) if rows[c][c] == -1]
    if len(negatives) % 2:
        raise NotSpecialLinearError("Block has determinant -1")
    for p, q in zip(negatives[::2], negatives[1::2]):
        # (A B A)^2 = -I on coordinates (p, q)
        for _ in range(2):
            row_op(p, q, -1)
            row_op(q, p, 1)
            row_op(p, q, -1)

    assert all(rows[r][:size] == [int(r == c) for c in range(size)] for r in range(size))
    return [GaussMove(n, i, j, -v) for i, j, v in ops]


def base_case_factor(matrix):
    """
    Write an SL_n(Z) matrix with n <= 3 as a product of plain Gauss moves.

    Euclidean row reduction with shears only; row swaps are done with two shears and the
    final sign pairs with six, so the count depends on the entries.
    """
    _require_special_linear(matrix)
    if matrix.n > 3:
        raise ValueError(f"base_case_factor handles n <= 3, got n={matrix.n}")
    return _shear_reduce(matrix.to_lists(), matrix.n, matrix.n)


def factor(matrix):
    """
    Factor an SL_n(Z) matrix into extended Gauss moves.

    Args:
        matrix (UnimodularMatrix): det must be exactly +1

    Returns:
        MoveFactorization: moves whose ordered product is the matrix

    Raises:
        NotSpecialLinearError: if det != +1
    """
    if not isinstance(matrix, UnimodularMatrix):
        matrix = UnimodularMatrix(matrix)
    _require_special_linear(matrix)
    n = matrix.n
    rows = matrix.to_lists()

    prefix = []
    suffixes = []
    for m in range(n, 3, -1):
        left, right = _peel_dimension(rows, m, n)
        for move in left:
            prefix.extend(invert_move(move))
        level_suffix = []
        for move in reversed(right):
            level_suffix.extend(invert_move(move))
        suffixes.append(level_suffix)
    induction_moves = len(prefix) + sum(len(s) for s in suffixes)

    base = [g.to_extended() for g in _shear_reduce(rows, min(n, 3), n)]
    moves = prefix + base
    for level_suffix in reversed(suffixes):
        moves.extend(level_suffix)

    logger.info(f"Factored {n}x{n} matrix into {len(moves)} moves "
                f"({induction_moves} induction, {len(base)} base-case shears)")
    return MoveFactorization(moves, matrix, induction_moves=induction_moves, base_moves=len(base))


def factor_with_sign(matrix):
    """
    Factor a GL_n(Z) matrix.

    For det = -1 the last column is negated first; the returned factorization then has
    sign_flipped set and its product equals matrix @ diag(1, ..., 1, -1).
    """
    if not isinstance(matrix, UnimodularMatrix):
        matrix = UnimodularMatrix(matrix)
    if matrix.det == 1:
        return factor(matrix)
    rows = [list(r) for r in matrix.rows]
    for row in rows:
        row[-1] = -row[-1]
    result = factor(UnimodularMatrix(rows, check=False))
    result.sign_flipped = True
    return result


def verify_factorization(factorization):
    """True iff the exact ordered product of the moves equals the target"""
    if any(m.n != factorization.n for m in factorization.moves):
        return False
    return product(factorization.moves, factorization.n) == factorization.target


def random_shear_product(n, count, value_range, rng):
    """
    Random SL_n(Z) matrix built as a product of `count` shears.

    Args:
        n (int): dimension, >= 2
        count (int): number of shears
        value_range (int): shear values drawn uniformly from [-value_range, value_range]
        rng (numpy.random.Generator): random source

    Returns:
        UnimodularMatrix
    """
    rows = identity_rows(n)
    for _ in range(count):
        i, j = (int(v) for v in rng.choice(n, size=2, replace=False))
        value = int(rng.integers(-value_range, value_range + 1))
        rows = int_matmul(rows, GaussMove(n, i, j, value).rows())
    return UnimodularMatrix(rows, check=False)
