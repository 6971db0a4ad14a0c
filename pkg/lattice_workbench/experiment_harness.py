"""
Data generation, self-supervised training and evaluation of the move policy against LLL.

Bases are exp(A) with A_ij ~ U[0, 1]. Every random draw comes from a Philox stream keyed by
(seed, stream id, epoch, sample index), so results do not depend on iteration order.
"""
import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .config import (
    DEFAULT_LOVASZ_DELTA,
    DEFAULT_SEED,
    DEFAULT_TEMPERATURE,
    STREAM_EVAL,
    STREAM_GEN,
    STREAM_ROLLOUT,
    STREAM_TEST,
    STREAM_TRAIN,
    STREAM_VALID,
)
from .equivariant_policy import (
    init_params,
    params_from_checkpoint,
    params_to_checkpoint,
    run_rollout,
    watch_params,
)
from .exceptions import DataFormatError, EmptyReportError, TrainingDivergedError
from .lll_reduction import LLLParams, brute_force_min_defect, defect_bound, lll_reduce
from .modules import autodiff as ad
from .modules.lattice_core import log_defect
from .modules.report_generator import emit_progress
from .modules.sampling import _as_rng, make_rng

logger = logging.getLogger(__name__)

TAYLOR_TOLERANCE = 1e-16
TAYLOR_MAX_TERMS = 40
SUBSET_SLACK = 1e-9
METHODS = ("policy", "lll", "identity")


@dataclass
class DatasetSpec:
    n: int
    train_per_epoch: int = 1000
    test_count: int = 4000
    seed: int = DEFAULT_SEED

    def __post_init__(self):
        if self.n < 2:
            raise ValueError(f"Dimension must be at least 2, got {self.n}")
        if self.train_per_epoch < 1 or self.test_count < 1:
            raise ValueError("train_per_epoch and test_count must be positive")
        if self.seed < 0:
            raise ValueError(f"Seed must be non-negative, got {self.seed}")


@dataclass
class TrainConfig:
    epochs: int = 200
    k: int = None
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    temperature: float = DEFAULT_TEMPERATURE
    loss_aggregation: str = "mean"
    seed: int = DEFAULT_SEED
    batch_size: int = 50
    eval_every: int = 10
    straight_through: bool = True
    layers: int = 3
    width: int = 32
    move_fill: str = "row_col"
    max_grad_norm: float = 1.0
    keep_best: bool = True
    validation_count: int = 200
    worst_p: float = 0.2

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError(f"epochs must be non-negative, got {self.epochs}")
        if self.k is not None and self.k < 1:
            raise ValueError(f"k must be at least 1, got {self.k}")
        if self.learning_rate < 0:
            raise ValueError(f"learning_rate must be non-negative, got {self.learning_rate}")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"Unknown optimizer {self.optimizer!r}")
        if self.temperature <= 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        if self.loss_aggregation not in ("mean", "final"):
            raise ValueError(f"loss_aggregation must be 'mean' or 'final', got {self.loss_aggregation!r}")
        if self.batch_size < 1 or self.eval_every < 1:
            raise ValueError("batch_size and eval_every must be positive")
        if self.max_grad_norm is not None and self.max_grad_norm <= 0:
            raise ValueError(f"max_grad_norm must be positive or None, got {self.max_grad_norm}")
        if self.validation_count < 1:
            raise ValueError(f"validation_count must be positive, got {self.validation_count}")
        if not 0 < self.worst_p <= 1:
            raise ValueError(f"worst_p must lie in (0, 1], got {self.worst_p}")

    def steps(self, n):
        return self.k if self.k is not None else n


@dataclass
class EvalReport:
    n: int
    k: int
    per_matrix: dict
    summary: dict
    worst_p: dict = field(default_factory=dict)
    timings: dict = None
    lll_bound_violations: int = 0
    optimality_gaps: list = None

    @property
    def count(self):
        return len(self.per_matrix["lll"])

    def to_json(self):
        report = {
            "n": self.n,
            "k": self.k,
            "count": self.count,
            "summary": self.summary,
            "per_matrix": self.per_matrix,
            "worst_p": self.worst_p,
            "lll_bound_violations": self.lll_bound_violations,
        }
        if self.optimality_gaps is not None:
            report["optimality_gaps"] = self.optimality_gaps
        if self.timings is not None:
            report["timings"] = self.timings
        return report


class Adam:
    """Adam with bias correction; parameters are a dict of numpy arrays"""

    def __init__(self, learning_rate=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.learning_rate = learning_rate
        self.betas = betas
        self.eps = eps
        self.step_count = 0
        self.first_moment = {}
        self.second_moment = {}

    def step(self, params, grads):
        self.step_count += 1
        beta1, beta2 = self.betas
        updated = {}
        for name, value in params.items():
            grad = grads[name]
            m = beta1 * self.first_moment.get(name, np.zeros_like(value)) + (1.0 - beta1) * grad
            v = beta2 * self.second_moment.get(name, np.zeros_like(value)) + (1.0 - beta2) * grad * grad
            self.first_moment[name] = m
            self.second_moment[name] = v
            m_hat = m / (1.0 - beta1 ** self.step_count)
            v_hat = v / (1.0 - beta2 ** self.step_count)
            updated[name] = value - self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)
        return updated

    def to_json(self):
        return {"name": "adam", "learning_rate": self.learning_rate, "betas": list(self.betas),
                "eps": self.eps, "steps": self.step_count}


class SGD:
    def __init__(self, learning_rate=1e-3):
        self.learning_rate = learning_rate
        self.step_count = 0

    def step(self, params, grads):
        self.step_count += 1
        return {name: value - self.learning_rate * grads[name] for name, value in params.items()}

    def to_json(self):
        return {"name": "sgd", "learning_rate": self.learning_rate, "steps": self.step_count}


def matrix_exponential(matrix):
    """
    exp(A) by scaling and squaring.

    A is scaled by 2^-s until its 1-norm is at most 1/2, the Taylor series is summed until the
    next term is negligible, and the result is squared s times.
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    n = matrix.shape[0]
    norm = np.linalg.norm(matrix, 1)
    squarings = max(0, int(math.ceil(math.log2(norm / 0.5)))) if norm > 0 else 0
    scaled = matrix / 2.0 ** squarings

    result = np.identity(n)
    term = np.identity(n)
    for k in range(1, TAYLOR_MAX_TERMS + 1):
        term = term @ scaled / k
        result = result + term
        if np.linalg.norm(term, 1) <= TAYLOR_TOLERANCE * np.linalg.norm(result, 1):
            break
    for _ in range(squarings):
        result = result @ result
    return result


def generate_basis(n, seed):
    """
    Random basis exp(A) with A_ij ~ U[0, 1] i.i.d.

    det exp(A) = e^{trace A} > 0, so the basis is always invertible.

    Args:
        n (int): dimension, >= 2
        seed: int seed or numpy Generator

    Returns:
        numpy.ndarray: n x n basis
    """
    if n < 2:
        raise ValueError(f"Dimension must be at least 2, got {n}")
    rng = _as_rng(seed)
    return matrix_exponential(rng.uniform(0.0, 1.0, size=(n, n)))


def generate_dataset(n, count, seed, stream=STREAM_GEN):
    """count bases, basis idx drawn from the stream (seed, stream, idx)"""
    return [generate_basis(n, make_rng(seed, stream, idx)) for idx in range(count)]


def build_test_set(spec):
    """Frozen test set: depends only on (n, test_count, seed)"""
    return generate_dataset(spec.n, spec.test_count, spec.seed, stream=STREAM_TEST)


def training_batch(spec, epoch):
    return [generate_basis(spec.n, make_rng(spec.seed, STREAM_TRAIN, epoch, idx)) for idx in range(spec.train_per_epoch)]


def build_validation_set(spec, count):
    """Model-selection bases, disjoint in stream from both training and test data"""
    return generate_dataset(spec.n, count, spec.seed, stream=STREAM_VALID)


def make_optimizer(cfg):
    if cfg.optimizer == "adam":
        return Adam(cfg.learning_rate)
    return SGD(cfg.learning_rate)


def clip_gradients(grads, max_norm):
    """
    Rescale all gradients by one common factor so their global norm is at most max_norm.

    Returns:
        tuple: (clipped gradients, norm before clipping)
    """
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm is None or norm <= max_norm:
        return grads, norm
    scale = max_norm / norm
    return {name: g * scale for name, g in grads.items()}, norm


def _aggregate(loss_tensors, rule):
    if rule == "final":
        return loss_tensors[-1]
    return ad.mean(ad.concat(loss_tensors))


def _summary(values):
    values = np.asarray(values, dtype=np.float64)
    return {"mean": float(np.mean(values)), "std": float(np.std(values))}


def policy_log_defects(params, bases, k, seed, temperature=DEFAULT_TEMPERATURE, keys=()):
    """Final log-defect of a hard k-step rollout on each basis"""
    values = []
    for idx, basis in enumerate(bases):
        result = run_rollout(basis, params, k, make_rng(seed, STREAM_EVAL, *keys, idx), temperature)
        values.append(log_defect(result.basis))
    return values


def lll_log_defects(bases, lovasz_delta=DEFAULT_LOVASZ_DELTA):
    params = LLLParams(lovasz_delta=lovasz_delta)
    return [log_defect(lll_reduce(basis, params)[0]) for basis in bases]


def validation_score(params, validation_set, k, cfg):
    """Mean final log-defect on the validation set; the rollout seeds are fixed across epochs"""
    return float(np.mean(policy_log_defects(params, validation_set, k, cfg.seed, cfg.temperature,
                                            keys=(STREAM_VALID,))))


def _worst_p_snapshot(n, k, per_matrix, p):
    """Worst-p statistics for one periodic evaluation, without the subset indices"""
    subsets = worst_p_analysis(EvalReport(n=n, k=k, per_matrix=per_matrix, summary={}), p)
    return {selector: {"size": subset["size"], "summary": subset["summary"]} for selector, subset in subsets.items()}


def train(spec, cfg, params=None, test_set=None, progress=False, optimizer=None):
    """
    Self-supervised training of the policy.

    Each epoch draws spec.train_per_epoch fresh bases, rolls the policy out for k steps on each
    and minimizes the per-step log-defect (aggregated per cfg.loss_aggregation, then averaged
    over the minibatch). Gradients are clipped to a global norm of cfg.max_grad_norm.

    The frozen test set is evaluated every cfg.eval_every epochs and after the last epoch; each
    evaluation also records the worst cfg.worst_p subsets of both methods under the "worst_p"
    key of its curve row. With cfg.keep_best the parameters with the lowest validation score
    seen at an evaluation (the initialization included) are returned instead of the last ones.

    Args:
        spec (DatasetSpec): dimension, sizes and seed of the data
        cfg (TrainConfig): optimization settings
        params (PolicyParams): starting point; initialized from cfg.seed when omitted
        test_set (list): frozen test bases; built from spec when omitted
        progress (bool): emit JSON progress records on stderr
        optimizer (Adam or SGD): optimizer instance to step; built from cfg when omitted

    Returns:
        tuple: (PolicyParams, list of curve rows)

    Raises:
        TrainingDivergedError: if a minibatch loss or gradient is not finite
    """
    params = params.copy() if params is not None else init_params(cfg.layers, cfg.width, cfg.seed, cfg.move_fill)
    k = cfg.steps(spec.n)
    optimizer = optimizer if optimizer is not None else make_optimizer(cfg)
    curve = []
    if cfg.epochs == 0:
        return params, curve

    test_set = test_set if test_set is not None else build_test_set(spec)
    lll_values = lll_log_defects(test_set)
    lll_stats = _summary(lll_values)
    identity_values = [log_defect(basis) for basis in test_set]

    validation_set = build_validation_set(spec, cfg.validation_count) if cfg.keep_best else None
    best_params, best_score, best_epoch = None, None, 0
    if validation_set is not None:
        best_params, best_score = params.copy(), validation_score(params, validation_set, k, cfg)

    for epoch in range(cfg.epochs):
        started = time.perf_counter()
        bases = training_batch(spec, epoch)
        batch_losses = []
        for start in range(0, len(bases), cfg.batch_size):
            tape = ad.Tape()
            weights = watch_params(tape, params)
            per_matrix = []
            for idx in range(start, min(start + cfg.batch_size, len(bases))):
                rng = make_rng(cfg.seed, STREAM_ROLLOUT, epoch, idx)
                result = run_rollout(bases[idx], params, k, rng, cfg.temperature, cfg.straight_through, weights)
                per_matrix.append(_aggregate(result.loss_tensors, cfg.loss_aggregation))
            loss = ad.mean(ad.concat(per_matrix))
            grads = ad.backward(tape, loss)
            value = float(loss.data)
            if not math.isfinite(value) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise TrainingDivergedError(f"Non-finite training loss at epoch {epoch} (seed {cfg.seed})",
                                            epoch=epoch, seed=cfg.seed)
            grads, _ = clip_gradients(grads, cfg.max_grad_norm)
            params.tensors = optimizer.step(params.tensors, grads)
            batch_losses.append(value)

        row = {"epoch": epoch + 1, "train_loss": float(np.mean(batch_losses)),
               "test_mean_logdefect": None, "test_std_logdefect": None,
               "lll_mean_logdefect": lll_stats["mean"], "lll_std_logdefect": lll_stats["std"]}
        if (epoch + 1) % cfg.eval_every == 0 or epoch + 1 == cfg.epochs:
            policy_values = policy_log_defects(params, test_set, k, cfg.seed, cfg.temperature)
            test_stats = _summary(policy_values)
            row["test_mean_logdefect"] = test_stats["mean"]
            row["test_std_logdefect"] = test_stats["std"]
            # the policy's worst subset moves as training changes the policy; LLL's stays put
            per_matrix = {"policy": policy_values, "lll": lll_values, "identity": identity_values}
            row["worst_p"] = _worst_p_snapshot(spec.n, k, per_matrix, cfg.worst_p)
            if validation_set is not None:
                score = validation_score(params, validation_set, k, cfg)
                row["validation_mean_logdefect"] = score
                if score < best_score:
                    best_params, best_score, best_epoch = params.copy(), score, epoch + 1
        curve.append(row)
        logger.info(f"Epoch {epoch + 1}/{cfg.epochs}: train loss {row['train_loss']:.6f}")
        if progress:
            emit_progress("epoch", epoch=epoch + 1, train_loss=row["train_loss"],
                          test_mean_logdefect=row["test_mean_logdefect"],
                          seconds=round(time.perf_counter() - started, 3))
            if "worst_p" in row:
                emit_progress("worst_p", epoch=epoch + 1, p=cfg.worst_p, subsets=row["worst_p"])

    if best_params is not None:
        logger.info(f"Keeping parameters from epoch {best_epoch} "
                    f"(validation mean log-defect {best_score:.6f})")
        return best_params, curve
    return params, curve


def evaluate(params, test_set, k=None, seed=DEFAULT_SEED, temperature=DEFAULT_TEMPERATURE,
             lovasz_delta=DEFAULT_LOVASZ_DELTA, record_timings=False, check_optimality=False):
    """
    Compare the policy, LLL and the unreduced bases on a frozen test set.

    Args:
        params (PolicyParams): trained policy
        test_set (list): bases of one dimension n
        k (int): rollout length, defaults to n
        seed (int): seed of the evaluation rollouts
        temperature (float): sampling temperature of the policy
        lovasz_delta (float): LLL parameter
        record_timings (bool): store wall-clock seconds per method in the report
        check_optimality (bool): for n = 2, compare LLL against bounded brute force

    Returns:
        EvalReport
    """
    if not test_set:
        raise EmptyReportError("Cannot evaluate on an empty test set")
    n = test_set[0].shape[0]
    k = k if k is not None else n
    timings = {}

    started = time.perf_counter()
    policy_values = policy_log_defects(params, test_set, k, seed, temperature)
    timings["policy"] = time.perf_counter() - started

    started = time.perf_counter()
    lll_values = lll_log_defects(test_set, lovasz_delta)
    timings["lll"] = time.perf_counter() - started

    identity_values = [log_defect(basis) for basis in test_set]
    per_matrix = {"policy": policy_values, "lll": lll_values, "identity": identity_values}
    summary = {method: _summary(per_matrix[method]) for method in METHODS}

    bound = math.log(defect_bound(n)) + math.log1p(1e-6)
    violations = sum(1 for value in lll_values if value > bound)
    if violations:
        logger.warning(f"{violations} LLL results exceed the Siegel defect bound")

    gaps = None
    if check_optimality and n == 2:
        gaps = []
        for basis, value in zip(test_set, lll_values):
            best, _ = brute_force_min_defect(basis)
            gaps.append(value - math.log(best))
        logger.info(f"Largest LLL optimality gap at n=2: {max(gaps):.3e}")

    return EvalReport(n=n, k=k, per_matrix=per_matrix, summary=summary,
                      timings=timings if record_timings else None,
                      lll_bound_violations=violations, optimality_gaps=gaps)


def worst_subset_size(p, count):
    """ceil(p * N), guarded against float noise such as 0.2 * 4000 = 800.0000000001"""
    return max(1, math.ceil(p * count - SUBSET_SLACK))


def worst_p_analysis(report, p):
    """
    Statistics of both methods on the worst p fraction of each method's matrices.

    Returns:
        dict: selecting method ("lll", "policy") -> {"p", "size", "indices", "summary"}

    Raises:
        EmptyReportError: if the report holds no matrices
    """
    if not 0 < p <= 1:
        raise ValueError(f"p must lie in (0, 1], got {p}")
    if report.count == 0:
        raise EmptyReportError("Worst-p analysis needs a non-empty report")
    size = worst_subset_size(p, report.count)
    subsets = {}
    for selector in ("lll", "policy"):
        values = np.asarray(report.per_matrix[selector], dtype=np.float64)
        indices = [int(i) for i in np.argsort(-values, kind="stable")[:size]]
        subsets[selector] = {
            "p": p,
            "size": size,
            "indices": indices,
            "summary": {method: _summary([report.per_matrix[method][i] for i in indices]) for method in METHODS},
        }
    return subsets


def attach_worst_p(report, p):
    report.worst_p[repr(float(p))] = worst_p_analysis(report, p)
    return report.worst_p[repr(float(p))]


def save_checkpoint(path, params, n, seed, optimizer=None, config=None):
    checkpoint = params_to_checkpoint(params, n, seed)
    if optimizer is not None:
        checkpoint["optimizer"] = optimizer.to_json()
    if config is not None:
        checkpoint["config"] = asdict(config)
    directory = os.path.dirname(os.path.abspath(path))
    if not os.path.exists(directory):
        os.makedirs(directory)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(checkpoint, f)
        f.write("\n")
    logger.info(f"Saved checkpoint ({params.parameter_count()} parameters) to {path}")


def load_checkpoint(path):
    """Returns (PolicyParams, metadata)"""
    with open(path, "r", encoding="utf-8") as f:
        try:
            obj = json.load(f)
        except json.JSONDecodeError as e:
            raise DataFormatError(f"invalid checkpoint JSON ({e.msg})", e.lineno) from e
    return params_from_checkpoint(obj)
