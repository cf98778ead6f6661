import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from weakfine.correction import (EPS_FLOOR, TransitionError, TransitionMatrix, TrustedPair,
                                 corrected_loss_gradient, corrected_probs,
                                 estimate_transition, forward_corrected_loss,
                                 read_transition_csv, softmax, write_transition_csv)

from conftest import random_stochastic


def test_matrix_validation():
    with pytest.raises(TransitionError):
        TransitionMatrix(np.array([[0.5, 0.4], [0.0, 1.0]]))
    with pytest.raises(TransitionError):
        TransitionMatrix(np.array([[1.5, -0.5], [0.0, 1.0]]))
    with pytest.raises(TransitionError):
        TransitionMatrix(np.ones((2, 3)) / 3)
    T = TransitionMatrix.identity(3)
    with pytest.raises(ValueError):
        T.entries[0, 0] = 0.0


def test_estimate_all_correct_is_identity():
    pairs = [TrustedPair(i, i) for i in range(4) for _ in range(3)]
    assert estimate_transition(pairs, 4, smoothing=0).is_identity()


def test_estimate_hand_counts():
    pairs = [TrustedPair(0, 0)] * 3 + [TrustedPair(0, 1)] + [TrustedPair(1, 1)] * 4
    T = estimate_transition(pairs, 2, smoothing=0).entries
    assert T.tolist() == [[0.75, 0.25], [0.0, 1.0]]


def test_estimate_empty_is_identity():
    assert estimate_transition([], 5, smoothing=0).is_identity()


def test_estimate_add_one_smoothing():
    pairs = [TrustedPair(0, 0)] * 3 + [TrustedPair(0, 1)]
    T = estimate_transition(pairs, 2, smoothing=1).entries
    assert np.allclose(T, [[4 / 6, 2 / 6], [0.5, 0.5]])


def test_estimate_ignores_abstentions():
    with_abs = [TrustedPair(0, 0), TrustedPair(0, None), TrustedPair(1, 0)]
    without = [TrustedPair(0, 0), TrustedPair(1, 0)]
    assert estimate_transition(with_abs, 2, 0) == estimate_transition(without, 2, 0)


def test_estimate_large_smoothing_goes_uniform():
    rng = np.random.default_rng(0)
    pairs = [TrustedPair(int(a), int(b)) for a, b in rng.integers(0, 4, (200, 2))]
    T = estimate_transition(pairs, 4, smoothing=1e9).entries
    assert np.max(np.abs(T - 0.25)) < 1e-6


def test_estimate_needs_two_classes():
    with pytest.raises(TransitionError):
        estimate_transition([], 1)


def test_loss_identity_equals_ce():
    p = np.array([0.2, 0.5, 0.3])
    for y in range(3):
        assert forward_corrected_loss(p, TransitionMatrix.identity(3), y) == -np.log(p[y])


def test_loss_hand_example():
    T = TransitionMatrix(np.array([[0.9, 0.1], [0.2, 0.8]]))
    assert forward_corrected_loss(np.array([0.5, 0.5]), T, 0) == pytest.approx(0.5978, abs=1e-4)
    assert forward_corrected_loss(np.array([0.5, 0.5]), T, 0) == pytest.approx(-np.log(0.55))


def test_loss_certain_case_and_floor():
    T = TransitionMatrix(np.array([[0.0, 1.0], [1.0, 0.0]]))
    assert forward_corrected_loss(np.array([1.0, 0.0]), T, 1) == 0.0
    assert forward_corrected_loss(np.array([1.0, 0.0]), T, 0) == -np.log(EPS_FLOOR)


def test_loss_rejects_unnormalized():
    with pytest.raises(TransitionError):
        forward_corrected_loss(np.array([0.6, 0.6]), TransitionMatrix.identity(2), 0)
    with pytest.raises(TransitionError):
        forward_corrected_loss(np.array([0.5, 0.5]), TransitionMatrix.identity(2), 2)


@settings(max_examples=100)
@given(st.integers(2, 8), st.integers(0, 2**32 - 1))
def test_corrected_probs_stay_stochastic(k, seed):
    rng = np.random.default_rng(seed)
    T = TransitionMatrix(random_stochastic(rng, k))
    p = rng.dirichlet(np.ones(k))
    q = corrected_probs(p, T)
    assert np.all(q >= 0) and abs(q.sum() - 1.0) < 1e-12


def _numeric_grad(z, T, y, h=1e-5):
    f = lambda v: forward_corrected_loss(softmax(v), T, y)
    g = np.zeros_like(z)
    for i in range(z.size):
        e = np.zeros_like(z)
        e[i] = h
        g[i] = (f(z + e) - f(z - e)) / (2 * h)
    return g


def test_gradient_matches_finite_difference():
    rng = np.random.default_rng(3)
    for _ in range(20):
        k = int(rng.integers(2, 7))
        T = TransitionMatrix(random_stochastic(rng, k))
        z = rng.normal(size=k)
        y = int(rng.integers(k))
        num = _numeric_grad(z, T, y)
        ana = corrected_loss_gradient(z, T, y)
        assert np.linalg.norm(ana - num) / max(np.linalg.norm(num), 1e-8) < 1e-4


def test_gradient_identity_reduces_to_ce():
    z = np.array([0.3, -1.0, 2.0])
    g = corrected_loss_gradient(z, TransitionMatrix.identity(3), 1)
    assert np.allclose(g, softmax(z) - np.eye(3)[1], atol=1e-14)


def test_gradient_uniform_rows_is_zero():
    T = TransitionMatrix(np.full((3, 3), 1 / 3))
    assert np.allclose(corrected_loss_gradient(np.array([1.0, 2.0, -3.0]), T, 2), 0.0,
                       atol=1e-15)


@given(arrays(np.float64, 4, elements=st.floats(-1e3, 1e3)), st.integers(0, 3))
def test_gradient_finite_for_extreme_logits(z, y):
    T = TransitionMatrix(np.full((4, 4), 0.25) * 0.2 + np.eye(4) * 0.8)
    assert np.all(np.isfinite(corrected_loss_gradient(z, T, y)))


def test_batched_gradient_matches_rows():
    rng = np.random.default_rng(9)
    T = TransitionMatrix(random_stochastic(rng, 4))
    Z = rng.normal(size=(5, 4))
    y = rng.integers(0, 4, 5)
    G = corrected_loss_gradient(Z, T, y)
    for i in range(5):
        assert np.array_equal(G[i], corrected_loss_gradient(Z[i], T, int(y[i])))


def test_transition_csv_round_trip(tmp_path):
    T = TransitionMatrix(random_stochastic(np.random.default_rng(4), 5))
    write_transition_csv(T, tmp_path / "t.csv")
    assert read_transition_csv(tmp_path / "t.csv") == T
