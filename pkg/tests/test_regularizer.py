"""Occurrence regularizer: oracle agreement, invariants, gradients."""

import math

import numpy as np
import pytest

from partlens.betaprior import BetaPrior
from partlens.regularizer import (
    occurrence_loss,
    prior_alignment_distance,
    prior_quantiles,
    wasserstein_oracle,
)
from partlens.tensor import Tensor, grad_check


def log_distance_oracle(row, quantiles, eps):
    """Independent sorted-L1-of-logs reference, pure Python."""
    row = sorted(row)
    return math.fsum(abs(math.log(t + eps) - math.log(q + eps))
                     for t, q in zip(row, quantiles)) / len(row)


class TestWassersteinOracle:
    def test_identical_lists(self):
        assert wasserstein_oracle([0.3, 0.1, 0.9], [0.3, 0.1, 0.9]) == 0.0

    def test_same_multiset_in_any_order(self):
        assert wasserstein_oracle([0.0, 1.0], [1.0, 0.0]) == 0.0

    def test_hand_value(self):
        assert wasserstein_oracle([0.0, 0.5], [0.25, 0.75]) == pytest.approx(0.25)

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            wasserstein_oracle([0.1], [0.1, 0.2])
        with pytest.raises(ValueError):
            wasserstein_oracle([], [])


class TestPriorQuantiles:
    def test_uniform_grid(self):
        q = prior_quantiles(BetaPrior(1.0, 1.0), 4)
        np.testing.assert_allclose(q, [1 / 8, 3 / 8, 5 / 8, 7 / 8], atol=1e-10)

    def test_sorted_ascending(self):
        for a, b in [(1.0, 1.0), (1.0, 1e-3), (2e-3, 1e-3), (2.0, 2.0)]:
            q = prior_quantiles(BetaPrior(a, b), 32)
            assert (np.diff(q) >= 0).all()

    def test_u_shaped_prior_concentrates_at_binary_levels(self):
        """Beta(2e-3, 1e-3) is a 1/3-off 2/3-on switch: the low third of the
        quantile grid is vanishingly small, the upper two thirds are at 1."""
        q = prior_quantiles(BetaPrior(2e-3, 1e-3), 30)
        assert (q[:10] < 1e-10).all()
        assert (q[10:] > 1.0 - 1e-10).all()

    def test_cached_copies_are_fresh(self):
        q1 = prior_quantiles(BetaPrior(1.0, 1.0), 8)
        q2 = prior_quantiles(BetaPrior(1.0, 1.0), 8)
        np.testing.assert_array_equal(q1, q2)


class TestOccurrenceLoss:
    def test_zero_when_rows_equal_prior_quantiles(self):
        prior = BetaPrior(2.0, 2.0)
        q = prior_quantiles(prior, 16)
        batch = Tensor(np.tile(q, (3, 1)))
        assert occurrence_loss(batch, prior).item() == pytest.approx(0.0, abs=1e-12)

    def test_single_entry_uniform_prior(self):
        """K=1, N=1, t=0.5 against Beta(1,1): quantile(1/2)=0.5, loss 0."""
        loss = occurrence_loss(Tensor([[0.5]]), BetaPrior(1.0, 1.0), eps=1e-6)
        assert loss.item() == pytest.approx(0.0, abs=1e-12)

    def test_hand_computed_two_sample_value(self):
        """K=1, N=2, t=(0.2, 0.9), Beta(1,1): quantiles (0.25, 0.75)."""
        expected = (abs(math.log(0.2) - math.log(0.25))
                    + abs(math.log(0.9) - math.log(0.75))) / 2
        loss = occurrence_loss(Tensor([[0.2, 0.9]]), BetaPrior(1.0, 1.0),
                               eps=1e-300)
        assert loss.item() == pytest.approx(expected, rel=1e-12)

    def test_matches_independent_oracle_on_random_batches(self):
        rng = np.random.default_rng(0)
        for trial in range(50):
            k = int(rng.integers(1, 5))
            n = int(rng.choice([8, 32, 128]))
            a, b = rng.uniform(0.5, 4.0, size=2)
            prior = BetaPrior(float(a), float(b))
            batch = rng.uniform(1e-4, 1.0 - 1e-4, size=(k, n))
            loss = occurrence_loss(Tensor(batch), prior, eps=1e-300).item()
            quantiles = prior_quantiles(prior, n)
            expected = np.mean([log_distance_oracle(row, quantiles, 0.0)
                                for row in batch])
            assert loss == pytest.approx(expected, abs=1e-12)

    def test_invariant_to_sample_permutation(self):
        rng = np.random.default_rng(1)
        prior = BetaPrior(1.0, 2.0)
        batch = rng.uniform(0.05, 0.95, size=(3, 16))
        reference = occurrence_loss(Tensor(batch), prior).item()
        for _ in range(5):
            shuffled = batch[:, rng.permutation(16)]
            assert occurrence_loss(Tensor(shuffled), prior).item() == \
                pytest.approx(reference, rel=1e-14)

    def test_nonnegative_and_zero_only_at_prior(self):
        rng = np.random.default_rng(2)
        prior = BetaPrior(2.0, 2.0)
        for _ in range(20):
            batch = rng.uniform(0.01, 0.99, size=(2, 8))
            assert occurrence_loss(Tensor(batch), prior).item() >= 0.0

    def test_rejects_entries_outside_open_interval(self):
        prior = BetaPrior(1.0, 1.0)
        for bad in ([[0.0, 0.5]], [[0.5, 1.0]], [[-0.1, 0.5]]):
            with pytest.raises(ValueError, match="strictly inside"):
                occurrence_loss(Tensor(bad), prior)

    def test_rejects_nonpositive_eps(self):
        with pytest.raises(ValueError, match="eps"):
            occurrence_loss(Tensor([[0.5]]), BetaPrior(1.0, 1.0), eps=0.0)

    def test_gradient_alive_near_zero(self):
        """The log rescaling keeps |d loss / d t| > 0 even at t = 1e-6."""
        prior = BetaPrior(1.0, 1.0)
        batch = Tensor(np.array([[1e-6, 0.4, 0.6, 0.9]]), requires_grad=True)
        occurrence_loss(batch, prior, eps=1e-6).backward()
        assert abs(batch.grad[0, 0]) > 0.0
        # and it is the strong pull the rescaling is there for
        assert abs(batch.grad[0, 0]) > 1e4

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        prior = BetaPrior(1.0, 2.0)
        # interior points away from sorting ties
        batch = Tensor(np.sort(rng.uniform(0.1, 0.9, size=(2, 8)), axis=1)
                       + np.linspace(0, 0.005, 8))

        def f(t):
            return occurrence_loss(t, prior, eps=1e-6)

        report = grad_check(f, batch, step=1e-7, tolerance=1e-4)
        assert report.passed, report


class TestPriorAlignmentDistance:
    def test_agrees_exactly_with_wasserstein_oracle(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            n = int(rng.choice([8, 32, 128]))
            a, b = rng.uniform(0.5, 4.0, size=2)
            prior = BetaPrior(float(a), float(b))
            scores = rng.uniform(1e-4, 1.0 - 1e-4, size=n)
            ours = prior_alignment_distance(scores, prior)
            oracle = wasserstein_oracle(scores, prior_quantiles(prior, n))
            assert ours == oracle  # bit-for-bit: fsum is order-exact

    def test_zero_at_prior_quantiles(self):
        prior = BetaPrior(2.0, 2.0)
        q = prior_quantiles(prior, 16)
        assert prior_alignment_distance(q, prior) == 0.0
