import json
import logging

import numpy as np
import pytest

from lattice_workbench.equivariant_policy import (
    MAX_MOVE_ENTRY,
    PairGraph,
    PolicyParams,
    forward_scores,
    index_distribution,
    init_params,
    pair_graph,
    params_from_checkpoint,
    params_to_checkpoint,
    policy_scores_for_basis,
    rollout,
    run_rollout,
    sample_indices,
    sample_move,
    sample_move_from_scores,
    watch_params,
)
from lattice_workbench.exceptions import DataFormatError, DegenerateScoresError, NotSymmetricError
from lattice_workbench.modules import autodiff as ad
from lattice_workbench.modules.autodiff import Tape, backward, directional_derivative
from lattice_workbench.modules.integer_matrix import UnimodularMatrix, bareiss_determinant
from lattice_workbench.modules.lattice_core import gram, log_defect, random_orthogonal, random_signed_permutation
from lattice_workbench.modules.sampling import make_rng
from lattice_workbench.unimodular_factorization import GaussMove


def random_gram(n, seed):
    rng = make_rng(seed)
    basis = rng.standard_normal((n, n)) + 2.0 * np.eye(n)
    return gram(basis)


def conjugate(matrix, h):
    return h.T @ matrix @ h


@pytest.fixture
def small_params():
    return init_params(layers=2, width=8, seed=1)


@pytest.fixture
def zero_policy():
    """Output head switched off: every score vanishes, so every move is the identity"""
    params = init_params(layers=1, width=4, seed=0)
    params.tensors["out.weight"][:] = 0.0
    params.tensors["out.bias"][:] = 0.0
    return params


# === PairGraph ===

def test_pair_graph_nodes_and_adjacency():
    graph = PairGraph.build(4)
    assert graph.size == 12
    assert graph.nodes[0] == (0, 1)
    a = graph.nodes.index((0, 1))
    assert graph.is_adjacent(a, graph.nodes.index((0, 2)))
    assert graph.is_adjacent(a, graph.nodes.index((3, 1)))
    assert graph.is_adjacent(a, graph.nodes.index((1, 0)))
    assert not graph.is_adjacent(a, graph.nodes.index((2, 3)))
    assert not graph.is_adjacent(a, a)


def test_pair_graph_classes_are_degree_normalized():
    graph = PairGraph.build(4)
    row_sums = graph.adjacency.sum(axis=2)
    np.testing.assert_allclose(row_sums, np.ones_like(row_sums))
    # (0, 1) shares its row with (0, 2) and (0, 3)
    a = graph.nodes.index((0, 1))
    assert graph.adjacency[0, a, graph.nodes.index((0, 2))] == pytest.approx(0.5)


def test_pair_graph_cache_and_bounds():
    assert pair_graph(5) is pair_graph(5)
    with pytest.raises(ValueError):
        PairGraph.build(1)


# === PolicyParams ===

def test_parameter_count_of_default_architecture():
    assert init_params(seed=0).parameter_count() == 15780


def test_init_is_seeded():
    first = init_params(layers=1, width=4, seed=9)
    second = init_params(layers=1, width=4, seed=9)
    for name in first.tensors:
        np.testing.assert_array_equal(first.tensors[name], second.tensors[name])


def test_params_validate_shapes():
    params = init_params(layers=1, width=4, seed=0)
    tensors = dict(params.tensors)
    tensors["in.bias"] = np.zeros(5)
    with pytest.raises(ValueError):
        PolicyParams(1, 4, "row_col", tensors)
    with pytest.raises(ValueError):
        PolicyParams(1, 4, "whole_matrix")


# === forward_scores ===

def test_identity_conjugation_leaves_scores_unchanged(small_params):
    g = random_gram(4, 0)
    np.testing.assert_array_equal(forward_scores(g, small_params), forward_scores(conjugate(g, np.eye(4)), small_params))


def test_transposition_equivariance(small_params):
    g = random_gram(4, 1)
    h = UnimodularMatrix.signed_permutation([1, 0, 2, 3], [1, 1, 1, 1]).to_numpy()
    np.testing.assert_allclose(forward_scores(conjugate(g, h), small_params),
                               conjugate(forward_scores(g, small_params), h), atol=1e-6)


def test_sign_flip_negates_first_row_and_column(small_params):
    g = random_gram(4, 2)
    h = np.diag([-1.0, 1.0, 1.0, 1.0])
    scores = forward_scores(g, small_params)
    flipped = forward_scores(conjugate(g, h), small_params)
    np.testing.assert_allclose(flipped[0, 1:], -scores[0, 1:], atol=1e-6)
    np.testing.assert_allclose(flipped[1:, 0], -scores[1:, 0], atol=1e-6)
    np.testing.assert_allclose(flipped[1:, 1:], scores[1:, 1:], atol=1e-6)


@pytest.mark.parametrize("n", [3, 5])
def test_equivariance_under_random_signed_permutations(n, small_params):
    g = random_gram(n, 10 + n)
    scores = forward_scores(g, small_params)
    worst = 0.0
    for seed in range(100):
        h = random_signed_permutation(n, seed).to_numpy()
        deviation = forward_scores(conjugate(g, h), small_params) - conjugate(scores, h)
        worst = max(worst, float(np.max(np.abs(deviation))))
    assert worst <= 1e-6


def test_default_architecture_is_equivariant():
    params = init_params(seed=4)
    g = random_gram(6, 3)
    h = random_signed_permutation(6, 21).to_numpy()
    np.testing.assert_allclose(forward_scores(conjugate(g, h), params),
                               conjugate(forward_scores(g, params), h), atol=1e-6)


def test_scores_are_scale_invariant(small_params):
    g = random_gram(4, 5)
    np.testing.assert_allclose(forward_scores(37.5 * g, small_params), forward_scores(g, small_params), atol=1e-6)


def test_scores_are_left_orthogonal_invariant(small_params):
    basis = make_rng(6).standard_normal((4, 4)) + 2.0 * np.eye(4)
    u = random_orthogonal(4, make_rng(7))
    np.testing.assert_allclose(gram(u @ basis), gram(basis), atol=1e-9)
    np.testing.assert_allclose(policy_scores_for_basis(u @ basis, small_params),
                               policy_scores_for_basis(basis, small_params), atol=1e-6)


def test_scores_have_zero_diagonal(small_params):
    assert np.all(np.diag(forward_scores(random_gram(5, 8), small_params)) == 0.0)


def test_initial_scores_are_negated_projection_coefficients():
    """An untrained policy proposes size reductions: M_ij close to -G_ij / G_ii"""
    params = init_params(seed=2)
    g = random_gram(5, 9)
    coefficients = -g / np.diag(g)[:, None]
    off = ~np.eye(5, dtype=bool)
    scores = forward_scores(g, params)
    correlation = np.corrcoef(scores[off], coefficients[off])[0, 1]
    assert correlation > 0.9
    assert np.mean(np.sign(scores[off]) == np.sign(coefficients[off])) > 0.8


def test_scores_are_bounded():
    params = init_params(layers=1, width=4, seed=0)
    params.tensors["out.bias"][:] = 1e6
    scores = forward_scores(random_gram(4, 3), params)
    assert np.all(np.abs(scores) <= MAX_MOVE_ENTRY)
    assert np.max(np.abs(scores)) > 0.5 * MAX_MOVE_ENTRY


def test_asymmetric_input_rejected(small_params):
    with pytest.raises(NotSymmetricError):
        forward_scores(np.array([[2.0, 1.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 2.0]]), small_params)


# === index_distribution ===

def test_equal_scores_give_uniform_distribution():
    scores = np.ones((4, 4)) - np.eye(4)
    np.testing.assert_allclose(index_distribution(scores), np.full(12, 1.0 / 12.0))


def test_single_nonzero_score():
    scores = np.zeros((3, 3))
    scores[2, 0] = -0.7
    probabilities = index_distribution(scores)
    assert probabilities[pair_graph(3).nodes.index((2, 0))] == pytest.approx(1.0)
    assert probabilities.sum() == pytest.approx(1.0, abs=1e-9)


def test_distribution_ignores_signs():
    scores = make_rng(3).standard_normal((4, 4))
    np.testing.assert_array_equal(index_distribution(scores), index_distribution(-scores))


def test_degenerate_scores(caplog):
    with caplog.at_level(logging.WARNING):
        probabilities = index_distribution(np.zeros((3, 3)))
    np.testing.assert_allclose(probabilities, np.full(6, 1.0 / 6.0))
    assert "Degenerate" in caplog.text
    with pytest.raises(DegenerateScoresError):
        index_distribution(np.zeros((3, 3)), strict=True)


# === sampling ===

def test_integer_single_entry_gives_deterministic_shear():
    scores = np.zeros((4, 4))
    scores[0, 1] = 3.0
    for seed in range(5):
        output = sample_move_from_scores(scores, seed)
        assert output.index == (0, 1)
        assert output.move.rows() == GaussMove(4, 0, 1, 3).rows()
        assert output.log_probability == pytest.approx(0.0)


def test_identity_gram_gives_identity_move(small_params):
    output = sample_move(np.eye(4), small_params, seed=3)
    assert output.move.is_identity()


def test_sampled_moves_have_unit_determinant(small_params):
    rng = make_rng(12)
    for step in range(30):
        output = sample_move(random_gram(4, 100 + step), small_params, seed=rng)
        assert bareiss_determinant(output.move.rows()) == 1
        assert output.probabilities.sum() == pytest.approx(1.0, abs=1e-9)


def test_single_entry_fill_gives_plain_shears():
    scores = make_rng(4).standard_normal((4, 4)) * 3.0
    output = sample_move_from_scores(scores, seed=1, move_fill="single_entry")
    move = output.move
    assert move.is_row_only()
    assert all(v == 0 for k, v in enumerate(move.a) if k != move.j)


def test_sampled_index_law_is_equivariant(small_params):
    n = 4
    g = random_gram(n, 13)
    h = random_signed_permutation(n, 14).to_numpy()
    perm = np.argmax(np.abs(h), axis=0)
    count = 100_000
    graph = pair_graph(n)

    original = sample_indices(forward_scores(g, small_params), count, seed=1)
    conjugated = sample_indices(forward_scores(conjugate(g, h), small_params), count, seed=2)
    mapped = [(int(perm[a]), int(perm[b])) for a, b in conjugated]

    def frequencies(pairs):
        counts = np.zeros(graph.size)
        for pair in pairs:
            counts[graph.nodes.index(pair)] += 1
        return counts / len(pairs)

    total_variation = 0.5 * np.abs(frequencies(original) - frequencies(mapped)).sum()
    assert total_variation <= 0.02


# === rollout ===

def test_forced_identity_rollout(zero_policy):
    basis = make_rng(5).standard_normal((4, 4)) + 2.0 * np.eye(4)
    moves, losses = rollout(basis, zero_policy, k=1, seed=0)
    assert len(moves) == 1 and moves[0].is_identity()
    assert losses == [pytest.approx(log_defect(basis), abs=1e-9)]


def test_rollout_preserves_determinant(small_params):
    rng = make_rng(15)
    for _ in range(10):
        basis = rng.standard_normal((5, 5)) + 2.0 * np.eye(5)
        result = run_rollout(basis, small_params, k=5, seed=rng)
        assert len(result.moves) == 5 and len(result.losses) == 5
        assert result.unimodular.det == 1
        ratio = abs(np.linalg.det(result.basis)) / abs(np.linalg.det(basis))
        assert ratio == pytest.approx(1.0, rel=1e-8)
        assert result.losses[-1] == pytest.approx(log_defect(result.basis), abs=1e-6)


def test_rollout_rejects_zero_steps(small_params):
    with pytest.raises(ValueError):
        rollout(np.eye(3), small_params, k=0, seed=0)


def test_soft_rollout_has_no_moves(small_params):
    basis = make_rng(16).standard_normal((3, 3)) + 2.0 * np.eye(3)
    result = run_rollout(basis, small_params, k=2, seed=1, straight_through=False)
    assert result.moves == [] and result.unimodular is None
    assert len(result.losses) == 2


def test_soft_rollout_gradient_matches_finite_differences():
    params = init_params(layers=1, width=4, seed=3)
    basis = make_rng(17).standard_normal((4, 4)) + 2.0 * np.eye(4)

    def total_loss(tensors):
        candidate = PolicyParams(params.layers, params.width, params.move_fill, dict(tensors))
        return float(np.sum(run_rollout(basis, candidate, k=2, seed=5, straight_through=False).losses))

    tape = Tape()
    weights = watch_params(tape, params)
    result = run_rollout(basis, params, k=2, seed=5, straight_through=False, weights=weights)
    grads = backward(tape, ad.sum(ad.concat(result.loss_tensors)))

    rng = make_rng(18)
    direction = {name: rng.standard_normal(value.shape) for name, value in params.tensors.items()}
    numeric = directional_derivative(total_loss, params.tensors, direction)
    analytic = float(sum(np.sum(grads[name] * direction[name]) for name in params.tensors))
    assert analytic == pytest.approx(numeric, rel=1e-4, abs=1e-7)


def test_hard_rollout_produces_gradients(small_params):
    basis = make_rng(19).standard_normal((4, 4)) + 2.0 * np.eye(4)
    tape = Tape()
    weights = watch_params(tape, small_params)
    result = run_rollout(basis, small_params, k=4, seed=2, weights=weights)
    grads = backward(tape, ad.mean(ad.concat(result.loss_tensors)))
    assert set(grads) == set(small_params.tensors)
    assert all(np.all(np.isfinite(g)) for g in grads.values())


# === checkpoint ===

def test_checkpoint_round_trip(small_params):
    obj = json.loads(json.dumps(params_to_checkpoint(small_params, n=4, seed=7)))
    restored, meta = params_from_checkpoint(obj)
    assert meta == {"n": 4, "seed": 7, "normalization": "trace"}
    g = random_gram(4, 20)
    np.testing.assert_array_equal(forward_scores(g, restored), forward_scores(g, small_params))


def test_checkpoint_errors(small_params):
    obj = params_to_checkpoint(small_params, n=4, seed=7)
    with pytest.raises(DataFormatError):
        params_from_checkpoint({**obj, "normalization": "frobenius"})
    with pytest.raises(DataFormatError):
        params_from_checkpoint({key: value for key, value in obj.items() if key != "tensors"})
    broken = json.loads(json.dumps(obj))
    broken["tensors"]["in.bias"] = {"shape": [3], "data": [0.0, 0.0, 0.0]}
    with pytest.raises(DataFormatError):
        params_from_checkpoint(broken)


# === acceptance runs ===

@pytest.mark.slow
@pytest.mark.parametrize("n", [4, 8])
def test_equivariance_sweep(n):
    params = init_params(seed=n)
    worst = 0.0
    for g_seed in range(20):
        g = random_gram(n, 1000 + g_seed)
        scores = forward_scores(g, params)
        for h_seed in range(100):
            h = random_signed_permutation(n, 100 * g_seed + h_seed).to_numpy()
            deviation = forward_scores(conjugate(g, h), params) - conjugate(scores, h)
            worst = max(worst, float(np.max(np.abs(deviation))))
    assert worst <= 1e-6


@pytest.mark.slow
def test_full_rollout_gradient_projections():
    params = init_params(seed=6)
    basis = make_rng(30).standard_normal((4, 4)) + 2.0 * np.eye(4)

    def total_loss(tensors):
        candidate = PolicyParams(params.layers, params.width, params.move_fill, dict(tensors))
        return float(np.mean(run_rollout(basis, candidate, k=4, seed=8, straight_through=False).losses))

    tape = Tape()
    result = run_rollout(basis, params, k=4, seed=8, straight_through=False, weights=watch_params(tape, params))
    grads = backward(tape, ad.mean(ad.concat(result.loss_tensors)))
    rng = make_rng(31)
    for _ in range(10):
        direction = {name: rng.standard_normal(value.shape) for name, value in params.tensors.items()}
        numeric = directional_derivative(total_loss, params.tensors, direction)
        analytic = float(sum(np.sum(grads[name] * direction[name]) for name in params.tensors))
        assert analytic == pytest.approx(numeric, rel=1e-4, abs=1e-7)
