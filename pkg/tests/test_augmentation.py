from collections import Counter
from itertools import permutations

import numpy as np
import pytest

from dagad import autodiff as ad
from dagad.augmentation import PermutationPlan, build_batch, draw_permutation


def test_single_row_is_identity():
    assert draw_permutation(1, seed=5, epoch=3).pi.tolist() == [0]


def test_empty_rejected():
    with pytest.raises(ValueError):
        draw_permutation(0, seed=0)


def test_deterministic_per_key():
    a = draw_permutation(50, seed=3, epoch=7)
    assert np.array_equal(a.pi, draw_permutation(50, seed=3, epoch=7).pi)
    assert not np.array_equal(a.pi, draw_permutation(50, seed=3, epoch=8).pi)


def test_uniform_over_small_group():
    counts = Counter(tuple(draw_permutation(3, seed=s).pi) for s in range(10_000))
    assert set(counts) == set(permutations(range(3)))
    for c in counts.values():
        assert abs(c / 10_000 - 1 / 6) <= 0.02


def test_plan_rejects_non_bijection():
    with pytest.raises(ValueError):
        PermutationPlan(np.array([0, 0, 1]), seed=0)


def test_identity_plan():
    h_a, h_b = np.arange(6.0).reshape(3, 2), -np.arange(6.0).reshape(3, 2)
    b = build_batch(h_a, h_b, [0, 1, 0], PermutationPlan(np.arange(3), seed=0))
    np.testing.assert_array_equal(b.augmented.value, b.original.value)
    assert b.augmented_labels.tolist() == [0, 1, 0]


def test_hand_swap():
    b = build_batch(np.zeros((2, 1)), np.array([[1.0], [2.0]]), [0, 1],
                    PermutationPlan(np.array([1, 0]), seed=0))
    np.testing.assert_array_equal(b.augmented.value[:, 1:], [[2.0], [1.0]])
    assert b.augmented_labels.tolist() == [1, 0]


def test_shape_mismatch():
    with pytest.raises(ValueError):
        build_batch(np.zeros((3, 2)), np.zeros((2, 2)), [0, 1, 0], draw_permutation(3, 0))


def test_properties_over_random_plans():
    rng = np.random.default_rng(0)
    for trial in range(1000):
        m, d = int(rng.integers(1, 40)), int(rng.integers(1, 6))
        h_a, h_b = rng.normal(size=(m, d)), rng.normal(size=(m, d))
        labels = rng.integers(0, 2, size=m)
        plan = draw_permutation(m, seed=trial, epoch=int(rng.integers(100)))
        b = build_batch(h_a, h_b, labels, plan)
        assert sorted(b.augmented_labels.tolist()) == sorted(labels.tolist())
        assert np.array_equal(b.augmented.value[:, :d], b.original.value[:, :d])
        assert np.array_equal(plan.apply(h_b)[plan.inverse()], h_b)
        assert b.row_ops == m


def test_gradients_reach_both_halves():
    h_a, h_b = ad.param(np.ones((3, 2))), ad.param(np.ones((3, 2)))
    b = build_batch(h_a, h_b, [0, 1, 1], PermutationPlan(np.array([2, 0, 1]), seed=0))
    w = np.arange(12.0)
    ad.dot(ad.reshape(b.augmented, (-1,)), w).backward()
    np.testing.assert_array_equal(h_a.grad, w.reshape(3, 4)[:, :2])
    # row pi[i] of h_b received row i's gradient
    np.testing.assert_array_equal(h_b.grad[[2, 0, 1]], w.reshape(3, 4)[:, 2:])
