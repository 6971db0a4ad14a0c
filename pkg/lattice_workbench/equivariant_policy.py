"""
Equivariant move policy.

The policy reads the Gram matrix of the current basis, runs message passing on the graph of
ordered index pairs (i, j), and emits a score matrix M with M(H^T G H) = H^T M(G) H for every
signed permutation H. A move is sampled from M: an index pair with Gumbel-Softmax over |M_ij|,
then the i-th row and j-th column of M, stochastically rounded, fill an extended Gauss move.

Everything from the Gram matrix to the per-step loss is recorded on an autodiff tape so the
policy can be trained end to end.
"""
import logging
from dataclasses import dataclass, field

import numpy as np

from .config import DEFAULT_TEMPERATURE, DEGENERATE_SCORE_EPS, STREAM_INIT
from .exceptions import DataFormatError, DegenerateScoresError, NotSymmetricError
from .modules import autodiff as ad
from .modules.integer_matrix import UnimodularMatrix, identity_rows, int_matmul
from .modules.lattice_core import as_basis, gram
from .modules.sampling import _as_rng, gumbel_softmax_sample, make_rng, sample_gumbel_indices, stochastic_round
from .unimodular_factorization import ExtendedGaussMove

logger = logging.getLogger(__name__)

MOVE_FILLS = ("row_col", "single_entry")
ADJACENCY_CLASSES = ("same_row", "same_column", "row_is_column", "column_is_row")
INVARIANT_CHANNELS = 5
COVARIANT_CHANNELS = 4
OUTPUT_INIT_SCALE = 0.01
# initial head: M_ij = -G_ij / G_ii, the size-reduction coefficient of b_j against b_i
OUTPUT_INIT_BIAS = (0.0, 0.0, 0.0, -1.0)
# scores saturate smoothly at +-MAX_MOVE_ENTRY
MAX_MOVE_ENTRY = 32.0
LOG_FLOOR = 1e-12
SYMMETRY_TOLERANCE = 1e-9


@dataclass
class PairGraph:
    """
    Nodes are the ordered pairs (i, j), i != j, in row-major order.

    adjacency[c] is the degree-normalized adjacency of share-pattern c
    (i = i', j = j', i = j', j = i'); a node is never its own neighbour.
    """

    n: int
    nodes: list = field(default_factory=list)
    adjacency: np.ndarray = None
    scatter_index: np.ndarray = None

    @classmethod
    def build(cls, n):
        if n < 2:
            raise ValueError(f"The pair graph needs n >= 2, got {n}")
        nodes = [(i, j) for i in range(n) for j in range(n) if i != j]
        count = len(nodes)
        adjacency = np.zeros((len(ADJACENCY_CLASSES), count, count))
        for a, (i, j) in enumerate(nodes):
            for b, (k, l) in enumerate(nodes):
                if a == b:
                    continue
                adjacency[0, a, b] = i == k
                adjacency[1, a, b] = j == l
                adjacency[2, a, b] = i == l
                adjacency[3, a, b] = j == k
        degree = adjacency.sum(axis=2, keepdims=True)
        adjacency = adjacency / np.maximum(degree, 1.0)

        # n x n positions into [node scores..., 0]; the diagonal reads the trailing zero
        scatter_index = np.full((n, n), count, dtype=np.int64)
        for a, (i, j) in enumerate(nodes):
            scatter_index[i, j] = a
        return cls(n=n, nodes=nodes, adjacency=adjacency, scatter_index=scatter_index)

    @property
    def size(self):
        return len(self.nodes)

    def is_adjacent(self, a, b):
        return bool(np.any(self.adjacency[:, a, b] > 0))

    def flat_positions(self):
        """Flat n x n positions of (i, i), (j, j) and (i, j) for every node"""
        rows = np.array([i for i, _ in self.nodes], dtype=np.int64)
        cols = np.array([j for _, j in self.nodes], dtype=np.int64)
        return rows * self.n + rows, cols * self.n + cols, rows * self.n + cols


_GRAPHS = {}


def pair_graph(n):
    """Cached PairGraph for dimension n"""
    if n not in _GRAPHS:
        _GRAPHS[n] = PairGraph.build(n)
    return _GRAPHS[n]


@dataclass
class PolicyParams:
    layers: int = 3
    width: int = 32
    move_fill: str = "row_col"
    tensors: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.move_fill not in MOVE_FILLS:
            raise ValueError(f"move_fill must be one of {MOVE_FILLS}, got {self.move_fill!r}")
        if self.layers < 0 or self.width < 1:
            raise ValueError(f"Invalid architecture: layers={self.layers}, width={self.width}")
        if self.tensors:
            expected = self.shapes()
            if set(self.tensors) != set(expected):
                raise ValueError(f"Parameter names {sorted(self.tensors)} do not match {sorted(expected)}")
            for name, shape in expected.items():
                value = np.asarray(self.tensors[name], dtype=np.float64)
                if value.shape != shape:
                    raise ValueError(f"Parameter {name} has shape {value.shape}, expected {shape}")
                if not np.all(np.isfinite(value)):
                    raise ValueError(f"Parameter {name} is not finite")
                self.tensors[name] = value

    def shapes(self):
        d = self.width
        shapes = {"in.weight": (INVARIANT_CHANNELS, d), "in.bias": (d,)}
        for layer in range(self.layers):
            shapes[f"layer{layer}.self"] = (d, d)
            for cls in ADJACENCY_CLASSES:
                shapes[f"layer{layer}.{cls}"] = (d, d)
            shapes[f"layer{layer}.bias"] = (d,)
        shapes["out.weight"] = (d, COVARIANT_CHANNELS)
        shapes["out.bias"] = (COVARIANT_CHANNELS,)
        return shapes

    def copy(self):
        return PolicyParams(self.layers, self.width, self.move_fill,
                            {name: value.copy() for name, value in self.tensors.items()})

    def parameter_count(self):
        return int(sum(v.size for v in self.tensors.values()))


@dataclass
class PolicyOutput:
    scores: np.ndarray
    index: tuple
    move: ExtendedGaussMove
    probabilities: np.ndarray
    log_probability: float


@dataclass
class RolloutResult:
    moves: list
    losses: list
    basis: np.ndarray
    unimodular: UnimodularMatrix = None
    loss_tensors: list = field(default_factory=list, repr=False)


def init_params(layers=3, width=32, seed=0, move_fill="row_col"):
    """
    Zero-mean uniform initialization with width 1/sqrt(d).

    The output head starts at OUTPUT_INIT_BIAS plus small noise: the initial scores are the
    negated projection coefficients -G_ij / G_ii, so an untrained rollout size-reduces columns
    against the sampled row.
    """
    params = PolicyParams(layers, width, move_fill)
    rng = make_rng(seed, STREAM_INIT)
    bound = 1.0 / np.sqrt(width)
    tensors = {}
    for name, shape in params.shapes().items():
        if name == "out.weight":
            tensors[name] = rng.uniform(-bound, bound, size=shape) * OUTPUT_INIT_SCALE
        elif name == "out.bias":
            tensors[name] = np.array(OUTPUT_INIT_BIAS)
        else:
            tensors[name] = rng.uniform(-bound, bound, size=shape)
    params.tensors = tensors
    return params


def watch_params(tape, params):
    """Register every parameter on the tape; returns name -> Tensor"""
    return {name: tape.watch(value, name=name) for name, value in params.tensors.items()}


def _constant_params(params):
    return {name: ad.Tensor(value) for name, value in params.tensors.items()}


_activation = ad.elementwise_even(ad.tanh)


def _score_tensor(gram_matrix, weights, layers, graph):
    """Score matrix M as a Tensor; gram_matrix may itself be a Tensor on a tape"""
    n = graph.n
    count = graph.size
    diagonal = np.arange(n) * (n + 1)
    trace = ad.sum(ad.gather(gram_matrix, diagonal))
    g1 = gram_matrix / (trace / float(n))
    g2 = ad.matmul(g1, g1)
    g3 = ad.matmul(g2, g1)

    ii, jj, ij = graph.flat_positions()
    invariant = ad.concat([
        ad.gather(g1, ii), ad.gather(g1, jj), ad.gather(g2, ii), ad.gather(g2, jj), ad.abs(ad.gather(g1, ij)),
    ])
    projection = ad.gather(g1, ij) / ad.gather(g1, ii)
    covariant = ad.concat([ad.gather(g1, ij), ad.gather(g2, ij), ad.gather(g3, ij), projection])
    features = ad.transpose(ad.reshape(invariant, (INVARIANT_CHANNELS, count)))
    covariant = ad.transpose(ad.reshape(covariant, (COVARIANT_CHANNELS, count)))

    hidden = _activation(features @ weights["in.weight"] + weights["in.bias"])
    for layer in range(layers):
        update = hidden @ weights[f"layer{layer}.self"] + weights[f"layer{layer}.bias"]
        for c, cls in enumerate(ADJACENCY_CLASSES):
            update = update + ad.matmul(graph.adjacency[c], hidden) @ weights[f"layer{layer}.{cls}"]
        hidden = _activation(update)

    rho = hidden @ weights["out.weight"] + weights["out.bias"]
    node_scores = ad.sum(covariant * rho, axis=1)
    # odd in each entry, so the sign covariance survives
    node_scores = MAX_MOVE_ENTRY * ad.tanh(node_scores / MAX_MOVE_ENTRY)
    return ad.gather(ad.concat([node_scores, np.zeros(1)]), graph.scatter_index)


def _check_gram(gram_matrix):
    gram_matrix = np.asarray(gram_matrix, dtype=np.float64)
    if gram_matrix.ndim != 2 or gram_matrix.shape[0] != gram_matrix.shape[1]:
        raise NotSymmetricError(f"Gram matrix must be square, got shape {gram_matrix.shape}")
    scale = max(1.0, float(np.max(np.abs(gram_matrix))))
    if np.max(np.abs(gram_matrix - gram_matrix.T)) > SYMMETRY_TOLERANCE * scale:
        raise NotSymmetricError("Gram matrix is not symmetric")
    return gram_matrix


def forward_scores(gram_matrix, params):
    """
    Score matrix M(G) of the policy.

    Args:
        gram_matrix: symmetric positive definite n x n matrix
        params (PolicyParams): network parameters

    Returns:
        numpy.ndarray: n x n scores, zero diagonal

    Raises:
        NotSymmetricError: if G is not symmetric
    """
    gram_matrix = _check_gram(gram_matrix)
    graph = pair_graph(gram_matrix.shape[0])
    return _score_tensor(ad.Tensor(gram_matrix), _constant_params(params), params.layers, graph).data


def index_distribution(scores, strict=False):
    """
    p_ij = |M_ij| / sum_{k != l} |M_kl| over the off-diagonal pairs, row-major order.

    A degenerate score matrix yields the uniform distribution with a warning, or
    DegenerateScoresError when strict is set.
    """
    scores = np.asarray(scores, dtype=np.float64)
    graph = pair_graph(scores.shape[0])
    magnitude = np.abs(_off_diagonal(scores, graph))
    total = magnitude.sum()
    if total < DEGENERATE_SCORE_EPS:
        if strict:
            raise DegenerateScoresError(f"Off-diagonal scores sum to {total:.3e}")
        logger.warning("Degenerate score matrix, falling back to the uniform index distribution")
        return np.full(graph.size, 1.0 / graph.size)
    return magnitude / total


def _off_diagonal(scores, graph):
    return scores.reshape(-1)[graph.flat_positions()[2]]


def sample_indices(scores, count, seed):
    """Vectorized draws of `count` index pairs from index_distribution(scores)"""
    graph = pair_graph(np.asarray(scores).shape[0])
    probabilities = index_distribution(scores)
    with np.errstate(divide="ignore"):
        logits = np.log(probabilities)
    draws = sample_gumbel_indices(logits, count, seed)
    return [graph.nodes[a] for a in draws]


def _sample_step(scores, graph, rng, temperature, straight_through, move_fill):
    """
    Sample one move from a score Tensor.

    Returns:
        tuple: (move matrix T as a Tensor, ExtendedGaussMove or None in soft mode, index, probabilities)
    """
    n = graph.n
    off_diagonal = ad.gather(scores, graph.flat_positions()[2])
    magnitude = ad.abs(off_diagonal)
    total = float(magnitude.data.sum())
    if total < DEGENERATE_SCORE_EPS:
        logger.warning("Degenerate score matrix, falling back to the uniform index distribution")
        logits = ad.Tensor(np.zeros(graph.size))
        probabilities = np.full(graph.size, 1.0 / graph.size)
    else:
        logits = ad.log(magnitude + LOG_FLOOR * total)
        probabilities = magnitude.data / total

    hard, soft = gumbel_softmax_sample(logits, temperature, rng)
    selection = hard if straight_through else soft
    chosen = int(np.argmax(hard.data))
    i, j = graph.nodes[chosen]

    rounded, _ = stochastic_round(scores, rng, temperature=temperature, straight_through=straight_through)
    pattern = ad.gather(ad.concat([selection, np.zeros(1)]), graph.scatter_index)
    if move_fill == "row_col":
        weight = ad.sum(pattern, axis=1, keepdims=True) + ad.sum(pattern, axis=0, keepdims=True) - pattern
    else:
        weight = pattern
    off_mask = 1.0 - np.eye(n)
    transform = weight * rounded * off_mask + np.eye(n)

    move = None
    if straight_through:
        values = np.rint(rounded.data).astype(np.int64)
        if move_fill == "row_col":
            a = [int(values[i, k]) if k != i else 0 for k in range(n)]
            b = [int(values[k, j]) if k not in (i, j) else 0 for k in range(n)]
        else:
            a = [int(values[i, j]) if k == j else 0 for k in range(n)]
            b = [0] * n
        move = ExtendedGaussMove(n, i, j, tuple(a), tuple(b))
    return transform, move, (i, j), probabilities


def sample_move_from_scores(scores, seed, temperature=DEFAULT_TEMPERATURE, move_fill="row_col"):
    """Sample a move directly from a score matrix (hard straight-through mode)"""
    scores = np.asarray(scores, dtype=np.float64)
    graph = pair_graph(scores.shape[0])
    rng = _as_rng(seed)
    _, move, index, probabilities = _sample_step(ad.Tensor(scores), graph, rng, temperature, True, move_fill)
    chosen = graph.nodes.index(index)
    return PolicyOutput(scores=scores, index=index, move=move, probabilities=probabilities,
                        log_probability=float(np.log(probabilities[chosen])))


def sample_move(gram_matrix, params, seed, temperature=DEFAULT_TEMPERATURE):
    """
    Sample one extended Gauss move from the policy.

    Args:
        gram_matrix: symmetric positive definite n x n matrix
        params (PolicyParams): network parameters
        seed: int seed or numpy Generator
        temperature (float): Gumbel-Softmax temperature

    Returns:
        PolicyOutput: scores, sampled index, the move and the index distribution
    """
    scores = forward_scores(gram_matrix, params)
    return sample_move_from_scores(scores, seed, temperature, params.move_fill)


def _step_loss(basis, log_abs_det):
    """sum_i log ||b_i|| - log |det B| with the determinant term held constant"""
    return 0.5 * ad.sum(ad.log(ad.sum(basis * basis, axis=0))) - log_abs_det


def run_rollout(basis, params, k, seed, temperature=DEFAULT_TEMPERATURE, straight_through=True, weights=None):
    """
    Apply the policy k times, recording every step on the tape of `weights`.

    In straight-through mode each step applies an exact extended Gauss move and the product
    Q = T_1 ... T_k is tracked in integers. In soft mode the index and the rounding are replaced
    by their relaxations; the basis then follows a smooth path and no integral moves exist.

    Args:
        basis: n x n invertible matrix
        params (PolicyParams): network parameters
        k (int): number of steps, >= 1
        seed: int seed or numpy Generator
        temperature (float): Gumbel-Softmax and rounding temperature
        straight_through (bool): hard moves forward with soft gradients (True) or soft moves (False)
        weights (dict): name -> Tensor, e.g. from watch_params(); constants when omitted

    Returns:
        RolloutResult
    """
    if k < 1:
        raise ValueError(f"Step count must be at least 1, got {k}")
    original = as_basis(basis)
    n = original.shape[0]
    graph = pair_graph(n)
    rng = _as_rng(seed)
    weights = weights if weights is not None else _constant_params(params)
    _, log_abs_det = np.linalg.slogdet(original)

    current = ad.Tensor(original)
    q = identity_rows(n)
    result = RolloutResult(moves=[], losses=[], basis=original)
    for _ in range(k):
        gram_matrix = ad.matmul(ad.transpose(current), current)
        scores = _score_tensor(gram_matrix, weights, params.layers, graph)
        transform, move, _, _ = _sample_step(scores, graph, rng, temperature, straight_through, params.move_fill)
        current = ad.matmul(current, transform)
        loss = _step_loss(current, float(log_abs_det))
        result.loss_tensors.append(loss)
        result.losses.append(float(loss.data))
        if move is not None:
            result.moves.append(move)
            q = int_matmul(q, move.rows())

    if straight_through:
        result.unimodular = UnimodularMatrix(q, check=False)
        result.basis = original @ result.unimodular.to_numpy()
    else:
        result.basis = current.data.copy()
    return result


def rollout(basis, params, k, seed, temperature=DEFAULT_TEMPERATURE):
    """
    Reduce a basis with k policy steps.

    Returns:
        tuple: (list of ExtendedGaussMove, list of per-step log-defects)
    """
    result = run_rollout(basis, params, k, seed, temperature)
    return result.moves, result.losses


def policy_scores_for_basis(basis, params):
    """Scores of the policy on gram(B); identical for B and U B with U orthogonal"""
    return forward_scores(gram(as_basis(basis)), params)


def params_to_checkpoint(params, n, seed):
    return {
        "n": int(n),
        "L": params.layers,
        "d": params.width,
        "move_fill": params.move_fill,
        "seed": int(seed),
        "normalization": "trace",
        "tensors": {
            name: {"shape": list(value.shape), "data": [float(v) for v in value.reshape(-1)]}
            for name, value in params.tensors.items()
        },
    }


def params_from_checkpoint(obj):
    """
    Rebuild PolicyParams from a checkpoint object.

    Returns:
        tuple: (PolicyParams, metadata dict with n, seed and normalization)

    Raises:
        DataFormatError: on missing fields or inconsistent tensors
    """
    try:
        tensors = {
            name: np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
            for name, entry in obj["tensors"].items()
        }
        params = PolicyParams(int(obj["L"]), int(obj["d"]), obj.get("move_fill", "row_col"), tensors)
        meta = {"n": int(obj["n"]), "seed": obj.get("seed"), "normalization": obj.get("normalization", "trace")}
    except (KeyError, TypeError, ValueError, AttributeError) as e:
        raise DataFormatError(f"invalid checkpoint ({e})") from e
    if meta["normalization"] != "trace":
        raise DataFormatError(f"unsupported input normalization {meta['normalization']!r}")
    return params, meta
