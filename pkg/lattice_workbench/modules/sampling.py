"""
Seeded random streams and differentiable discrete sampling.
Gumbel-Softmax index selection and stochastic rounding, both with a straight-through option.
"""

import numpy as np

from . import autodiff as ad

EPS = 1e-20


def make_rng(seed, *keys):
    """
    Counter-based generator keyed by (seed, *keys).

    Streams for different keys are independent, so draws do not depend on iteration order.
    """
    entropy = [int(seed)] + [int(k) for k in keys]
    if any(value < 0 for value in entropy):
        raise ValueError(f"Seeds and stream keys must be non-negative, got {entropy}")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def _as_rng(seed_or_rng):
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return make_rng(seed_or_rng)


def gumbel_noise(rng, shape):
    uniform = rng.random(shape)
    return -np.log(-np.log(uniform + EPS) + EPS)


def gumbel_softmax_sample(logits, temperature, seed):
    """
    Draw one category with the Gumbel-max trick and its softmax relaxation.

    Args:
        logits (Tensor): unnormalized log-probabilities over a flat index set
        temperature (float): softmax temperature, > 0
        seed: int seed or numpy Generator

    Returns:
        tuple: (hard one-hot Tensor with straight-through gradient, soft Tensor)
    """
    if temperature <= 0:
        raise ValueError(f"Temperature must be positive, got {temperature}")
    logits = ad.as_tensor(logits)
    rng = _as_rng(seed)
    perturbed = logits + gumbel_noise(rng, logits.shape)
    soft = ad.softmax(perturbed / float(temperature))
    hard = np.zeros(logits.shape)
    hard.reshape(-1)[int(np.argmax(perturbed.data))] = 1.0
    return ad.straight_through(hard, soft), soft


def sample_gumbel_indices(logits, count, seed):
    """Vectorized Gumbel-max draws: `count` flat indices distributed as softmax(logits)"""
    logits = np.asarray(logits, dtype=np.float64).reshape(-1)
    rng = _as_rng(seed)
    noise = gumbel_noise(rng, (count, logits.size))
    return np.argmax(logits[None, :] + noise, axis=1)


def stochastic_round(x, seed, temperature=1.0, straight_through=True):
    """
    Round each entry to floor(x) or ceil(x), going up with probability x - floor(x).

    The choice is a two-category Gumbel-Softmax over (down, up) with log-probabilities
    log(ceil(x) - x) and log(x - floor(x)); integral entries are returned unchanged.

    Args:
        x (Tensor): values to round
        seed: int seed or numpy Generator
        temperature (float): temperature of the relaxation
        straight_through (bool): hard integers forward with soft gradient (True),
            or the soft relaxation itself (False)

    Returns:
        tuple: (rounded Tensor, differentiable relaxation Tensor)
    """
    x = ad.as_tensor(x)
    rng = _as_rng(seed)
    lower = np.floor(x.data)
    frac = x.data - lower
    # x slightly below an integer can give frac == 1.0 in floating point
    wrapped = frac >= 1.0
    lower = np.where(wrapped, lower + 1.0, lower)
    integral = (frac == 0.0) | wrapped
    mask = integral.astype(np.float64)

    safe_frac = (x - lower) * (1.0 - mask) + 0.5 * mask
    logit_up = ad.log(safe_frac)
    logit_down = ad.log(1.0 - safe_frac)
    noise_up = gumbel_noise(rng, x.shape)
    noise_down = gumbel_noise(rng, x.shape)

    soft_up = ad.sigmoid((logit_up + noise_up - logit_down - noise_down) / float(temperature)) * (1.0 - mask)
    hard_up = ((logit_up.data + noise_up) > (logit_down.data + noise_down)) & ~integral
    relaxation = soft_up + lower
    if straight_through:
        value = ad.straight_through(hard_up.astype(np.float64), soft_up) + lower
    else:
        value = relaxation
    return value, relaxation
