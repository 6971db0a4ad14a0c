"""
Lattice bases, Gram matrices and the orthogonality defect.
A basis is a float64 numpy array whose columns are the basis vectors.
"""

import math

import numpy as np

from ..config import DET_TOLERANCE
from ..exceptions import DimensionMismatchError, SingularBasisError
from .integer_matrix import UnimodularMatrix
from .sampling import make_rng


def as_basis(matrix):
    """
    Validate and convert a matrix into a basis.

    Args:
        matrix: square array-like, columns are basis vectors

    Returns:
        numpy.ndarray: float64 copy of the matrix

    Raises:
        DimensionMismatchError: if the matrix is not square
        SingularBasisError: if |det| <= DET_TOLERANCE
    """
    basis = np.array(matrix, dtype=np.float64)
    if basis.ndim != 2 or basis.shape[0] != basis.shape[1] or basis.shape[0] == 0:
        raise DimensionMismatchError(f"A basis must be a non-empty square matrix, got shape {basis.shape}")
    log_abs_determinant(basis)
    return basis


def determinant(basis):
    """Determinant via LU with partial pivoting; raises SingularBasisError when it vanishes"""
    det = float(np.linalg.det(basis))
    if not math.isfinite(det) or abs(det) <= DET_TOLERANCE:
        raise SingularBasisError(f"Basis is singular (|det| = {abs(det):.3e})")
    return det


def log_abs_determinant(basis):
    """log |det B| via slogdet; raises SingularBasisError when |det B| <= DET_TOLERANCE"""
    sign, logabsdet = np.linalg.slogdet(basis)
    if sign == 0 or not math.isfinite(logabsdet) or logabsdet <= math.log(DET_TOLERANCE):
        raise SingularBasisError(f"Basis is singular (log|det| = {logabsdet:.3e})")
    return float(logabsdet)


def basis_norms(basis):
    """Euclidean norms of the basis columns"""
    return np.linalg.norm(np.asarray(basis, dtype=np.float64), axis=0)


def max_norm(basis):
    """beta = max_i ||b_i||"""
    return float(np.max(basis_norms(basis)))


def orthogonality_defect(basis):
    """delta(B) = prod_i ||b_i|| / |det B|"""
    basis = np.asarray(basis, dtype=np.float64)
    det = determinant(basis)
    return float(np.prod(basis_norms(basis)) / abs(det))


def log_defect(basis):
    """
    Logarithmic orthogonality defect, sum_i log ||b_i|| - log |det B|.

    The log-determinant comes from slogdet so large dimensions do not overflow the product.
    """
    basis = np.asarray(basis, dtype=np.float64)
    return float(np.sum(np.log(basis_norms(basis))) - log_abs_determinant(basis))


def gram(basis):
    """G = B^T B, symmetrized so that G == G.T holds exactly"""
    basis = np.asarray(basis, dtype=np.float64)
    product = basis.T @ basis
    return (product + product.T) / 2.0


def apply_unimodular(basis, unimodular):
    """
    Change of basis B -> BQ.

    Args:
        basis (numpy.ndarray): n x n basis
        unimodular (UnimodularMatrix): n x n unimodular matrix

    Returns:
        numpy.ndarray: the new basis
    """
    basis = np.asarray(basis, dtype=np.float64)
    if basis.shape != (unimodular.n, unimodular.n):
        raise DimensionMismatchError(
            f"Basis of shape {basis.shape} cannot be multiplied by a {unimodular.n}x{unimodular.n} matrix"
        )
    return basis @ unimodular.to_numpy()


def random_signed_permutation(n, seed):
    """
    Draw a uniformly random element of the hyperoctahedral group.

    Args:
        n (int): dimension, at least 1
        seed (int): seed for the random stream

    Returns:
        UnimodularMatrix: signed permutation matrix
    """
    if n < 1:
        raise ValueError(f"Dimension must be at least 1, got {n}")
    rng = make_rng(seed)
    permutation = [int(p) for p in rng.permutation(n)]
    signs = [int(s) for s in rng.choice([-1, 1], size=n)]
    return UnimodularMatrix.signed_permutation(permutation, signs)


def random_orthogonal(n, rng):
    """Random orthogonal matrix from the QR factorization of a Gaussian matrix"""
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))
