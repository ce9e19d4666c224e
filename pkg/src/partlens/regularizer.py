"""Aligning empirical part-occurrence distributions with the Beta prior.

Each part's batch of occurrence scores is sorted ascending and compared, in
log space, against the prior quantiles at the midpoint grid (2n-1)/(2N) —
the mini-batch approximation of the 1D Wasserstein-1 distance between the
empirical and prior distributions.  The log rescaling keeps the gradient
alive for scores near zero: d/dt |log(t+eps) - log(q+eps)| ~ 1/(t+eps).
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

from . import tensor as T
from .betaprior import BetaPrior, beta_quantile
from .tensor import Tensor


@lru_cache(maxsize=64)
def _quantile_grid_cached(alpha: float, beta: float, n: int) -> tuple:
    prior = BetaPrior(alpha, beta)
    return tuple(float(beta_quantile(prior, (2 * i - 1) / (2 * n)))
                 for i in range(1, n + 1))


def prior_quantiles(prior: BetaPrior, n: int) -> np.ndarray:
    """Prior quantiles at (2n-1)/(2N) for n = 1..N, as float64 constants.

    Cached per (prior, N); extreme tail quantiles saturate to 0.0 or 1.0
    under float64, which the eps in the loss absorbs.
    """
    if n < 1:
        raise ValueError(f"need at least one sample, got n={n}")
    return np.array(_quantile_grid_cached(prior.alpha, prior.beta, n))


def occurrence_loss(batch: Tensor, prior: BetaPrior, eps: float = 1e-6) -> Tensor:
    """Mean over parts of the log-rescaled sorted-quantile distance.

    ``batch`` is K x N with entries strictly inside (0, 1): row k holds part
    k's occurrence scores over the N samples.  Each row is sorted ascending;
    the sorting permutation is treated as a constant of the forward pass, the
    standard subgradient for this piecewise-linear function.
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    if batch.ndim != 2:
        raise ValueError(f"expected a K x N batch, got shape {batch.shape}")
    data = batch.data
    if data.min() <= 0.0 or data.max() >= 1.0:
        raise ValueError(
            "occurrence scores must lie strictly inside (0, 1); "
            f"batch spans [{data.min()}, {data.max()}]")
    n = data.shape[1]
    order = np.argsort(data, axis=1, kind="stable")
    sorted_scores = T.gather(batch, order, axis=1)
    log_prior = np.log(prior_quantiles(prior, n) + eps)
    gaps = T.absolute(T.sub(T.log(T.add(sorted_scores, eps)), Tensor(log_prior)))
    return T.tmean(gaps)


def wasserstein_oracle(samples_a, samples_b) -> float:
    """Exact 1D Wasserstein-1 between two equal-size empirical measures:
    the mean absolute difference of the ascending-sorted samples.

    Deliberately independent of the loss implementation; serves as its
    test oracle.
    """
    a = sorted(float(v) for v in samples_a)
    b = sorted(float(v) for v in samples_b)
    if len(a) != len(b) or not a:
        raise ValueError(
            f"need equal nonempty sample lists, got {len(a)} and {len(b)}")
    return math.fsum(abs(x - y) for x, y in zip(a, b)) / len(a)


def prior_alignment_distance(scores: np.ndarray, prior: BetaPrior) -> float:
    """Un-logged sorted L1 distance between one part's scores and the prior
    quantile sequence — the plain Wasserstein-1 approximation the loss
    rescales."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 1 or scores.size == 0:
        raise ValueError(f"expected a nonempty 1-D score vector, got shape "
                         f"{scores.shape}")
    quantiles = prior_quantiles(prior, scores.size)
    return math.fsum(np.abs(np.sort(scores) - quantiles)) / scores.size
