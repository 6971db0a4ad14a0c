import numpy as np
import pytest

from lattice_workbench.exceptions import DimensionMismatchError, DomainError, NonScalarLossError
from lattice_workbench.modules import autodiff as ad
from lattice_workbench.modules.autodiff import Tape, Tensor, backward, directional_derivative
from lattice_workbench.modules.sampling import (
    gumbel_softmax_sample,
    make_rng,
    sample_gumbel_indices,
    stochastic_round,
)

SAMPLES = 100_000


def check_gradient(build, inputs, seed=0):
    """Compare the reverse-mode gradient with a central difference along a random direction"""
    tape = Tape()
    leaves = {name: tape.watch(value, name) for name, value in inputs.items()}
    grads = backward(tape, build(leaves))

    rng = make_rng(seed)
    direction = {name: rng.standard_normal(np.shape(value)) for name, value in inputs.items()}
    numeric = directional_derivative(
        lambda p: build({name: Tensor(value) for name, value in p.items()}).item(), inputs, direction
    )
    analytic = float(np.sum([np.sum(grads[name] * direction[name]) for name in inputs]))
    assert analytic == pytest.approx(numeric, rel=1e-4, abs=1e-8)


@pytest.fixture
def matrices():
    rng = make_rng(42)
    return {
        "x": rng.standard_normal((3, 4)),
        "y": rng.standard_normal((4, 2)),
        "b": rng.standard_normal(4),
        "p": rng.uniform(0.5, 2.0, size=(3, 4)),
    }


# === forward values ===

def test_matmul_identity():
    x = np.arange(6.0).reshape(2, 3)
    np.testing.assert_array_equal(ad.matmul(np.eye(2), x).data, x)


def test_softmax_of_equal_inputs_is_uniform():
    y = ad.softmax(Tensor(np.full((2, 3), 5.0)))
    assert y.shape == (2, 3)
    np.testing.assert_allclose(y.data, np.full((2, 3), 1.0 / 6.0))


def test_even_map_is_negation_invariant():
    x = Tensor(np.array([-2.0, -0.3, 0.0, 0.7, 4.0]))
    f = ad.elementwise_even(ad.tanh)
    np.testing.assert_array_equal(f(x).data, f(-x).data)


def test_odd_map_identities():
    x = Tensor(np.array([0.5, 1.5, 3.0]))
    identity_on_positives = ad.elementwise_odd(lambda a: 1.0)
    np.testing.assert_array_equal(identity_on_positives(x).data, x.data)

    f = ad.elementwise_odd(ad.tanh)
    np.testing.assert_array_equal(f(-x).data, -f(x).data)


def test_operators_mirror_primitives():
    a = Tensor([1.0, 2.0])
    b = Tensor([3.0, 5.0])
    np.testing.assert_array_equal((a + b).data, [4.0, 7.0])
    np.testing.assert_array_equal((2.0 - a).data, [1.0, 0.0])
    np.testing.assert_array_equal((a * 3.0).data, [3.0, 6.0])
    np.testing.assert_array_equal((1.0 / b).data, [1.0 / 3.0, 0.2])
    # ndarray on the left defers to the Tensor operator
    assert isinstance(np.ones(2) + a, Tensor)


# === errors ===

def test_shape_mismatch():
    with pytest.raises(DimensionMismatchError):
        ad.matmul(np.ones((2, 3)), np.ones((2, 3)))
    with pytest.raises(DimensionMismatchError):
        ad.add(np.ones((2, 3)), np.ones(4))
    with pytest.raises(DimensionMismatchError):
        ad.gather(np.ones(3), [3])


def test_domain_errors():
    with pytest.raises(DomainError):
        ad.log(Tensor([1.0, 0.0]))
    with pytest.raises(DomainError):
        ad.div(Tensor([1.0]), Tensor([0.0]))
    with pytest.raises(DomainError):
        ad.sqrt(Tensor([-1.0]))


def test_non_scalar_loss():
    tape = Tape()
    x = tape.watch(np.ones(3), "x")
    with pytest.raises(NonScalarLossError):
        backward(tape, ad.tanh(x))


def test_operands_from_different_tapes():
    with pytest.raises(ValueError):
        ad.add(Tape().watch([1.0]), Tape().watch([2.0]))


# === backward ===

def test_sum_gradient_is_ones():
    tape = Tape()
    x = tape.watch(np.arange(6.0).reshape(2, 3), "x")
    grads = backward(tape, ad.sum(x))
    np.testing.assert_array_equal(grads["x"], np.ones((2, 3)))


def test_log_norm_gradient():
    """d/dx of log|x| = x / |x|^2, i.e. (3/25, 4/25) at (3, 4)"""
    tape = Tape()
    x = tape.watch([3.0, 4.0], "x")
    loss = 0.5 * ad.log(ad.sum(x * x))
    grads = backward(tape, loss)
    np.testing.assert_allclose(grads["x"], [3.0 / 25.0, 4.0 / 25.0])


def test_unused_leaf_gets_zero_gradient():
    tape = Tape()
    x = tape.watch([1.0, 2.0], "x")
    tape.watch(np.ones((2, 2)), "unused")
    grads = backward(tape, ad.sum(ad.exp(x)))
    np.testing.assert_array_equal(grads["unused"], np.zeros((2, 2)))


def test_gather_accumulates_repeated_indices():
    tape = Tape()
    x = tape.watch([1.0, 2.0, 3.0], "x")
    grads = backward(tape, ad.sum(ad.gather(x, [0, 0, 1])))
    np.testing.assert_array_equal(grads["x"], [2.0, 1.0, 0.0])


def test_stop_gradient_blocks_flow():
    tape = Tape()
    x = tape.watch([1.0, 2.0], "x")
    grads = backward(tape, ad.sum(x * ad.stop_gradient(x)))
    np.testing.assert_array_equal(grads["x"], [1.0, 2.0])


def test_abs_subgradient_at_zero():
    tape = Tape()
    x = tape.watch([0.0, -2.0], "x")
    grads = backward(tape, ad.sum(ad.abs(x)))
    np.testing.assert_array_equal(grads["x"], [0.0, -1.0])


@pytest.mark.parametrize("build", [
    lambda t: ad.sum(ad.tanh(ad.matmul(t["x"], t["y"]))),
    lambda t: ad.sum((t["x"] + t["b"]) * (t["x"] + t["b"])),
    lambda t: ad.sum(ad.div(t["x"], t["p"])),
    lambda t: ad.sum(ad.log(ad.exp(t["x"]) + ad.sqrt(t["p"]))),
    lambda t: ad.mean(ad.sigmoid(t["x"]) * ad.abs(t["p"] - 3.0)),
    lambda t: ad.sum(ad.softmax(t["x"]) * t["p"]),
    lambda t: ad.sum(ad.reshape(ad.transpose(t["x"]), (2, 6)) * ad.reshape(t["p"], (2, 6))),
    lambda t: ad.sum(ad.gather(t["x"], [0, 5, 5, 11]) * ad.concat([t["b"]])),
    lambda t: ad.sum(ad.mean(ad.elementwise_odd(ad.tanh)(t["x"]), axis=0) * t["b"]),
    lambda t: ad.sum(ad.sum(t["x"], axis=1, keepdims=True) * t["p"]),
], ids=["matmul-tanh", "broadcast-add", "div", "log-exp-sqrt", "mean-sigmoid-abs",
        "softmax", "reshape-transpose", "gather-concat", "odd-mean-axis", "sum-keepdims"])
def test_gradients_match_finite_differences(build, matrices):
    check_gradient(build, matrices)


# === sampling ===

def test_make_rng_streams_are_reproducible():
    assert make_rng(3, 1, 2).random() == make_rng(3, 1, 2).random()
    assert make_rng(3, 1, 2).random() != make_rng(3, 2, 1).random()
    with pytest.raises(ValueError):
        make_rng(-1)


def test_gumbel_dominant_logit_is_always_selected():
    logits = np.array([1e6, 0.0, 0.0, 0.0])
    assert set(sample_gumbel_indices(logits, 1000, seed=1).tolist()) == {0}
    hard, _ = gumbel_softmax_sample(Tensor(logits), 1.0, seed=2)
    np.testing.assert_array_equal(hard.data, [1.0, 0.0, 0.0, 0.0])


def test_gumbel_uniform_frequencies():
    counts = np.bincount(sample_gumbel_indices(np.zeros(4), SAMPLES, seed=5), minlength=4)
    np.testing.assert_allclose(counts / SAMPLES, np.full(4, 0.25), atol=0.01)


def test_gumbel_frequencies_follow_softmax():
    logits = np.array([1.0, 0.0, -1.0, 0.5])
    expected = np.exp(logits) / np.exp(logits).sum()
    counts = np.bincount(sample_gumbel_indices(logits, SAMPLES, seed=6), minlength=4)
    np.testing.assert_allclose(counts / SAMPLES, expected, atol=0.02)


def test_gumbel_straight_through_gradient_equals_soft_gradient():
    weights = np.array([1.0, -2.0, 3.0])
    tape = Tape()
    logits = tape.watch([0.1, 0.2, 0.3], "logits")
    hard, soft = gumbel_softmax_sample(logits, 0.5, seed=9)
    assert hard.data.sum() == 1.0 and set(hard.data.tolist()) <= {0.0, 1.0}
    through_hard = backward(tape, ad.sum(hard * weights))["logits"]
    through_soft = backward(tape, ad.sum(soft * weights))["logits"]
    np.testing.assert_allclose(through_hard, through_soft)


def test_gumbel_rejects_non_positive_temperature():
    with pytest.raises(ValueError):
        gumbel_softmax_sample(Tensor([0.0, 1.0]), 0.0, seed=1)


def test_stochastic_round_integral_input():
    value, _ = stochastic_round(Tensor(np.full(1000, 2.0)), seed=4)
    np.testing.assert_array_equal(value.data, np.full(1000, 2.0))


def test_stochastic_round_quarter():
    value, _ = stochastic_round(Tensor(np.full(SAMPLES, 0.25)), seed=7)
    assert set(np.unique(value.data).tolist()) == {0.0, 1.0}
    assert value.data.mean() == pytest.approx(0.25, abs=0.01)


def test_stochastic_round_is_unbiased():
    value, _ = stochastic_round(Tensor(np.full(SAMPLES, -1.3)), seed=8)
    assert set(np.unique(value.data).tolist()) == {-2.0, -1.0}
    assert value.data.mean() == pytest.approx(-1.3, abs=0.01)


def test_stochastic_round_is_seeded():
    x = Tensor(np.linspace(-3.0, 3.0, 50))
    first, _ = stochastic_round(x, seed=11)
    second, _ = stochastic_round(x, seed=11)
    np.testing.assert_array_equal(first.data, second.data)


def test_stochastic_round_relaxation_has_gradient():
    tape = Tape()
    x = tape.watch([0.3, 1.6], "x")
    value, relaxation = stochastic_round(x, seed=3, straight_through=True)
    np.testing.assert_array_equal(value.data, np.round(value.data))
    grads = backward(tape, ad.sum(value))
    assert np.all(np.isfinite(grads["x"]))
    soft_value, _ = stochastic_round(Tensor([0.3, 1.6]), seed=3, straight_through=False)
    assert np.all((soft_value.data >= [0.0, 1.0]) & (soft_value.data <= [1.0, 2.0]))
