import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

import oracles
from drocox.coxloss import (
    average_cox_loss,
    breslow_baseline,
    cox_loss_upstream,
    individual_cox_losses,
    split_individual_loss,
    split_loss_upstream,
    split_losses,
    survival_estimate,
    survival_matrix,
)
from drocox.exceptions import ContractError, ShapeError


def random_instance(rng, n, tie_levels=None):
    f = rng.normal(size=n) * rng.uniform(0.1, 3)
    if tie_levels:
        Y = rng.integers(1, tie_levels + 1, n).astype(float)
    else:
        Y = rng.exponential(size=n)
    d = (rng.random(n) < 0.6).astype(int)
    return f, Y, d


def test_hand_example():
    l = individual_cox_losses([0.0, 0.0], [1.0, 2.0], [1, 1])
    assert l[0] == pytest.approx(math.log(2), abs=1e-15) and l[1] == 0.0
    assert average_cox_loss([0.0, 0.0], [1.0, 2.0], [1, 1]) == pytest.approx(math.log(2) / 2)
    np.testing.assert_allclose(cox_loss_upstream([0.0, 0.0], [1.0, 2.0], [1, 1]), [-0.5, 0.5], atol=1e-15)


def test_censored_and_singleton():
    assert individual_cox_losses([3.0], [1.0], [1])[0] == 0.0
    assert np.all(individual_cox_losses([0.3, 0.1], [1.0, 2.0], [0, 0]) == 0)
    assert average_cox_loss([0.3, 0.1], [1.0, 2.0], [0, 0]) == 0
    assert np.all(cox_loss_upstream([0.3, 0.1], [1.0, 2.0], [0, 0]) == 0)


def test_empty_and_shape():
    with pytest.raises(ShapeError):
        individual_cox_losses([], [], [])
    with pytest.raises(ShapeError):
        individual_cox_losses([0.0, 1.0], [1.0], [1, 1])


@pytest.mark.parametrize("trial", range(30))
def test_sorted_matches_naive_and_oracle(trial):
    rng = np.random.default_rng(trial)
    f, Y, d = random_instance(rng, int(rng.integers(1, 60)), tie_levels=(5 if trial % 2 else None))
    fast = individual_cox_losses(f, Y, d)
    np.testing.assert_allclose(fast, individual_cox_losses(f, Y, d, method="naive"), rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(fast, oracles.cox_losses(f, Y, d), rtol=1e-12, atol=1e-12)
    assert np.all(fast >= 0)


def test_tied_censored_in_risk_set():
    # a censored record tied with an event stays in the risk set
    l = individual_cox_losses([0.0, 0.0], [1.0, 1.0], [1, 0])
    assert l[0] == pytest.approx(math.log(2))


@pytest.mark.parametrize("trial", range(50))
def test_upstream_finite_difference(trial):
    rng = np.random.default_rng(100 + trial)
    n = int(rng.integers(2, 51))
    f, Y, d = random_instance(rng, n, tie_levels=(4 if trial % 3 == 0 else None))
    g = cox_loss_upstream(f, Y, d)
    fd = oracles.central_difference(lambda x: n * average_cox_loss(x, Y, d), f, h=1e-5)
    assert np.max(np.abs(g - fd)) / max(np.max(np.abs(fd)), 1e-8) < 1e-6


def test_weighted_upstream_matches_naive(rng):
    f, Y, d = random_instance(rng, 30, tie_levels=6)
    w = rng.random(30)
    np.testing.assert_allclose(cox_loss_upstream(f, Y, d, w), cox_loss_upstream(f, Y, d, w, method="naive"),
                               rtol=1e-12, atol=1e-14)
    with pytest.raises(ContractError):
        cox_loss_upstream(f, Y, d, -w)


@given(hnp.arrays(float, st.integers(1, 30), elements=st.floats(-20, 20)), st.floats(-50, 50))
def test_shift_invariance(f, c):
    n = f.size
    Y = np.arange(n, 0, -1, dtype=float)
    d = np.ones(n, dtype=int)
    np.testing.assert_allclose(individual_cox_losses(f + c, Y, d), individual_cox_losses(f, Y, d),
                               atol=1e-10)


@given(hnp.arrays(float, st.integers(1, 40), elements=st.floats(-30, 30)),
       st.integers(0, 2**32 - 1))
def test_losses_nonnegative(f, seed):
    rng = np.random.default_rng(seed)
    Y = rng.integers(1, 5, f.size).astype(float)
    d = rng.integers(0, 2, f.size)
    assert np.all(individual_cox_losses(f, Y, d) >= 0)


def test_large_scores_stable():
    f = np.array([800.0, 0.0, -800.0])
    l = individual_cox_losses(f, [1.0, 2.0, 3.0], [1, 1, 1])
    assert np.all(np.isfinite(l))
    assert np.all(np.isfinite(cox_loss_upstream(f, [1.0, 2.0, 3.0], [1, 1, 1])))


# --------------------------------------------------------------------------
# split losses


def test_split_examples():
    assert split_individual_loss(0, [0.0, 0.0], [1.0, 2.0], [0, 1], [1]) == 0.0
    assert split_individual_loss(0, [0.3, 0.0], [1.0, 2.0], [1, 1], []) == 0.0
    assert split_individual_loss(0, [0.3, 0.0], [2.0, 1.0], [1, 1], [1]) == 0.0
    assert split_individual_loss(0, [0.0, 0.0], [1.0, 2.0], [1, 1], [1]) == pytest.approx(math.log(2))
    with pytest.raises(ContractError):
        split_individual_loss(1, [0.0, 0.0], [1.0, 2.0], [1, 1], [1])


@pytest.mark.parametrize("trial", range(20))
def test_split_vectorized_matches_oracle(trial):
    rng = np.random.default_rng(200 + trial)
    n = int(rng.integers(3, 40))
    f, Y, d = random_instance(rng, n, tie_levels=(5 if trial % 2 else None))
    perm = rng.permutation(n)
    k = int(rng.integers(1, n))
    D1, D2 = np.sort(perm[:k]), np.sort(perm[k:])
    fast = split_losses(f, Y, d, D1, D2)
    ref = [oracles.split_loss(i, f, Y, d, D2) for i in D1]
    np.testing.assert_allclose(fast, ref, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(fast, split_losses(f, Y, d, D1, D2, method="naive"), rtol=1e-12, atol=1e-12)
    w = rng.random(D1.size)
    g = split_loss_upstream(f, Y, d, D1, D2, w)
    fd = oracles.central_difference(lambda x: float(w @ split_losses(x, Y, d, D1, D2)), f, h=1e-5)
    assert np.max(np.abs(g - fd)) / max(np.max(np.abs(fd)), 1e-8) < 1e-6


def test_split_locality(rng):
    n = 20
    f, Y, d = random_instance(rng, n)
    D2 = np.arange(10, 20)
    before = split_individual_loss(0, f, Y, d, D2)
    f2, Y2 = f.copy(), Y.copy()
    f2[1:10] = rng.normal(size=9)
    Y2[1:10] = rng.exponential(size=9)
    assert split_individual_loss(0, f2, Y2, d, D2) == before


def test_split_contracts():
    with pytest.raises(ContractError):
        split_losses([0.0, 0.0], [1.0, 2.0], [1, 1], [0], [0, 1])
    with pytest.raises(ContractError):
        split_losses([0.0, 0.0], [1.0, 2.0], [1, 1], [], [0, 1])


# --------------------------------------------------------------------------
# Breslow


@pytest.mark.parametrize("trial", range(20))
def test_breslow_null_scores_equal_nelson_aalen(trial):
    rng = np.random.default_rng(300 + trial)
    n = int(rng.integers(1, 80))
    Y = rng.integers(1, 12, n).astype(float)
    d = rng.integers(0, 2, n)
    d[0] = 1
    bh = breslow_baseline(np.zeros(n), Y, d)
    t, inc = oracles.nelson_aalen_increments(Y, d)
    assert np.array_equal(bh.times, t)
    assert np.array_equal(bh.increments, inc)


def test_breslow_examples():
    bh = breslow_baseline([0.0], [2.5], [1])
    assert list(bh.times) == [2.5] and list(bh.increments) == [1.0]
    bh = breslow_baseline(np.zeros(3), [1.0, 1.0, 2.0], [1, 1, 0])
    assert bh.increments[0] == 2 / 3 and bh.cumulative(2.0) == 2 / 3
    assert survival_estimate(bh, 0.0, 2.0) == pytest.approx(math.exp(-2 / 3))
    assert survival_estimate(bh, 0.0, 0.5) == 1.0
    assert survival_estimate(bh, 50.0, 1.0) < 1e-10
    with pytest.raises(ContractError):
        breslow_baseline([0.0, 1.0], [1.0, 2.0], [0, 0])


def test_survival_shift_invariance(rng):
    f, Y, d = random_instance(rng, 60, tie_levels=8)
    d[0] = 1
    grid = np.linspace(0, 9, 40)
    S = survival_matrix(breslow_baseline(f, Y, d), f, grid)
    for c in (-7.0, 3.0, 25.0):
        S2 = survival_matrix(breslow_baseline(f + c, Y, d), f + c, grid)
        assert np.max(np.abs(S2 - S)) < 1e-12


def test_cumulative_monotone(rng):
    f, Y, d = random_instance(rng, 50)
    d[0] = 1
    bh = breslow_baseline(f, Y, d)
    t = np.linspace(0, Y.max() + 1, 200)
    H = bh.cumulative(t)
    assert np.all(np.diff(H) >= 0) and H[0] == 0
    S = survival_matrix(bh, f, t)
    assert np.all(np.diff(S, axis=1) <= 0)


def test_baseline_csv(tmp_path):
    bh = breslow_baseline(np.zeros(3), [1.0, 1.0, 2.0], [1, 1, 1])
    bh.to_csv(tmp_path / "bh.csv")
    lines = (tmp_path / "bh.csv").read_text().splitlines()
    assert lines[0] == "time,hazard_increment,cumulative_hazard" and len(lines) == 3
