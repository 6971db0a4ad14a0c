"""
LLL lattice basis reduction.

Follows the textbook loop literally: Gram-Schmidt is recomputed after every size reduction and
after every swap. The unimodular change of basis is accumulated exactly in Python ints and the
returned basis is recomputed as B @ Q so floating drift does not leak into the result.
"""
import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .config import CONDITION_EPS, DEFAULT_LOVASZ_DELTA
from .exceptions import IterationLimitError
from .modules.integer_matrix import UnimodularMatrix
from .modules.lattice_core import as_basis, log_defect, max_norm

logger = logging.getLogger(__name__)


@dataclass
class GramSchmidtState:
    """Orthogonalized columns b*_i and the coefficients mu[i, j] = b_i . b*_j / ||b*_j||^2"""

    bstar: np.ndarray
    mu: np.ndarray

    @property
    def norms_squared(self):
        return np.sum(self.bstar * self.bstar, axis=0)


@dataclass
class LLLParams:
    lovasz_delta: float = DEFAULT_LOVASZ_DELTA
    max_iterations: int = None

    def __post_init__(self):
        if not 0.25 < self.lovasz_delta <= 1.0:
            raise ValueError(f"lovasz_delta must lie in (1/4, 1], got {self.lovasz_delta}")
        if self.max_iterations is not None and self.max_iterations < 1:
            raise ValueError(f"max_iterations must be positive, got {self.max_iterations}")

    def iteration_cap(self, basis):
        if self.max_iterations is not None:
            return self.max_iterations
        n = basis.shape[0]
        return 10 * n * n * (2 + math.ceil(math.log2(1.0 + max_norm(basis))) * 3)


@dataclass
class LLLResult:
    basis: np.ndarray
    unimodular: UnimodularMatrix
    iterations: int = 0
    size_reductions: int = 0
    swaps: int = 0
    defect_trace: list = field(default_factory=list)


def round_half_away(x):
    """Nearest integer to x, ties away from zero"""
    return int(math.copysign(math.floor(abs(x) + 0.5), x))


def gram_schmidt(basis):
    """
    Gram-Schmidt orthogonalization of the basis columns (without normalization).

    Args:
        basis: n x n invertible matrix

    Returns:
        GramSchmidtState: b*_1 = b_1, b*_i = b_i - sum_{j<i} mu[i, j] b*_j; mu has unit diagonal
    """
    return _orthogonalize(as_basis(basis))


def _orthogonalize(basis):
    n = basis.shape[0]
    bstar = np.zeros_like(basis)
    mu = np.eye(n)
    norms_sq = np.zeros(n)
    for i in range(n):
        v = basis[:, i].copy()
        for j in range(i):
            mu[i, j] = basis[:, i] @ bstar[:, j] / norms_sq[j]
            v -= mu[i, j] * bstar[:, j]
        bstar[:, i] = v
        norms_sq[i] = v @ v
    return GramSchmidtState(bstar=bstar, mu=mu)


def is_siegel_reduced(basis, params=None, eps=CONDITION_EPS):
    """
    Check the size and Lovász conditions.

    Args:
        basis: n x n invertible matrix
        params (LLLParams): supplies the Lovász constant
        eps (float): slack absorbing floating roundoff

    Returns:
        tuple: (bool, list of violations as dicts {condition, i, j, value}); indices are 1-based
    """
    params = params or LLLParams()
    state = gram_schmidt(basis)
    mu = state.mu
    norms_sq = state.norms_squared
    n = mu.shape[0]
    violations = []
    for i in range(n):
        for j in range(i):
            if abs(mu[i, j]) > 0.5 + eps:
                violations.append({"condition": "size", "i": i + 1, "j": j + 1, "value": float(mu[i, j])})
    for i in range(1, n):
        ratio = norms_sq[i] / norms_sq[i - 1]
        if ratio < (params.lovasz_delta - mu[i, i - 1] ** 2) - eps:
            violations.append({"condition": "lovasz", "i": i + 1, "j": i, "value": float(ratio)})
    return not violations, violations


def run_lll(basis, params=None, trace=False):
    """
    Reduce a basis with the LLL algorithm.

    Args:
        basis: n x n invertible real matrix (columns are basis vectors)
        params (LLLParams): Lovász constant and iteration cap
        trace (bool): record the log-defect after every size reduction and swap

    Returns:
        LLLResult: reduced basis, exact unimodular Q with reduced = basis @ Q, loop counters

    Raises:
        SingularBasisError: for a singular input
        IterationLimitError: when the iteration cap is exceeded
    """
    params = params or LLLParams()
    original = as_basis(basis)
    n = original.shape[0]
    work = original.copy()
    q = [[int(r == c) for c in range(n)] for r in range(n)]
    cap = params.iteration_cap(original)
    result = LLLResult(basis=original, unimodular=None)
    if trace:
        result.defect_trace.append(log_defect(work))

    state = _orthogonalize(work)
    k = 1
    while k < n:
        result.iterations += 1
        if result.iterations > cap:
            raise IterationLimitError(f"LLL exceeded {cap} iterations (n={n})")
        for j in range(k - 1, -1, -1):
            if abs(state.mu[k, j]) > 0.5:
                r = round_half_away(state.mu[k, j])
                work[:, k] -= float(r) * work[:, j]
                for row in q:
                    row[k] -= r * row[j]
                result.size_reductions += 1
                state = _orthogonalize(work)
                if trace:
                    result.defect_trace.append(log_defect(work))
        norms_sq = state.norms_squared
        if norms_sq[k] >= (params.lovasz_delta - state.mu[k, k - 1] ** 2) * norms_sq[k - 1]:
            k += 1
        else:
            work[:, [k - 1, k]] = work[:, [k, k - 1]]
            for row in q:
                row[k - 1], row[k] = row[k], row[k - 1]
            result.swaps += 1
            k = max(k - 1, 1)
            state = _orthogonalize(work)
            if trace:
                result.defect_trace.append(log_defect(work))

    result.unimodular = UnimodularMatrix(q)
    result.basis = original @ result.unimodular.to_numpy()
    logger.debug(f"LLL n={n}: {result.iterations} iterations, {result.size_reductions} size reductions, "
                 f"{result.swaps} swaps")
    return result


def lll_reduce(basis, params=None):
    """
    LLL-reduce a basis.

    Returns:
        tuple: (reduced basis B', unimodular Q) with B' = B Q
    """
    result = run_lll(basis, params)
    return result.basis, result.unimodular


def defect_bound(n):
    """Upper bound 2^(n(n-1)/4) on the orthogonality defect of a Siegel-reduced basis"""
    if n < 1:
        raise ValueError(f"Dimension must be at least 1, got {n}")
    return 2.0 ** (n * (n - 1) / 4.0)


def brute_force_min_defect(basis, bound=5):
    """
    Minimum orthogonality defect over integer Q with entries in [-bound, bound] and det = +-1.

    Exhaustive, so only practical for n = 2 (and tiny bounds at n = 3).

    Returns:
        tuple: (minimum defect, the minimizing Q as a UnimodularMatrix)
    """
    basis = as_basis(basis)
    n = basis.shape[0]
    values = np.arange(-bound, bound + 1)
    candidates = np.array(list(itertools.product(values, repeat=n * n)), dtype=np.float64).reshape(-1, n, n)
    dets = np.rint(np.linalg.det(candidates))
    candidates = candidates[np.abs(dets) == 1]
    reduced = basis[None, :, :] @ candidates
    defects = np.prod(np.linalg.norm(reduced, axis=1), axis=1) / abs(np.linalg.det(basis))
    best = int(np.argmin(defects))
    return float(defects[best]), UnimodularMatrix(candidates[best].astype(np.int64).tolist())
