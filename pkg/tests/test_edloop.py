import numpy as np
import pytest

from edpinn import autodiff as ad
from edpinn import edloop
from edpinn.design import DesignSpace
from edpinn.errors import NoFeasibleDesignError


def concave(target):
    def scores(g):
        return ad.reshape(ad.neg(ad.square_norm(ad.sub(g, target))), (1,))
    return scores


def test_concave_toy_converges_to_its_peak():
    space = DesignSpace.free(2, [[0, 5], [0, 5]])
    target = np.array([1.0, 4.0, 2.5, 0.5])
    res = edloop.optimize_design(space, concave(target), restarts=1, steps=500, lr=0.1, seed=3)
    np.testing.assert_allclose(res.gamma, target, atol=1e-3)


def test_zero_steps_return_best_random_start():
    space = DesignSpace.free(3, [[0, 20]])
    target = np.array([1.0, 2.0, 3.0])
    res = edloop.optimize_design(space, concave(target), restarts=6, steps=0, seed=0)
    starts = np.array([t[0][0] for t in res.traces])
    best = starts[np.argmax([-np.sum((s - target) ** 2) for s in starts])]
    np.testing.assert_array_equal(res.gamma, best)
    assert res.score == pytest.approx(-np.sum((best - target) ** 2))


def test_iterates_stay_feasible_and_best_beats_every_start():
    space = DesignSpace.time_grid(3, (0, 6), [0.0, 1.0])
    res = edloop.optimize_design(space, concave(np.array([-3.0, 3.0, 9.0])), restarts=4,
                                 steps=20, seed=1)
    for gammas, scores in res.traces:
        assert all(space.contains(g) for g in gammas)
        assert res.score >= scores[0]
    assert res.score == pytest.approx(max(res.restart_scores))
    assert space.contains(res.gamma)


def test_optimizer_is_deterministic_per_seed():
    space = DesignSpace.free(2, [[0, 1], [0, 1]])
    f = concave(np.array([0.2, 0.3, 0.4, 0.5]))
    a = edloop.optimize_design(space, f, restarts=2, steps=5, seed=8)
    b = edloop.optimize_design(space, f, restarts=2, steps=5, seed=8)
    np.testing.assert_array_equal(a.gamma, b.gamma)


def test_normalized_rule_moves_a_fixed_length():
    step = edloop.ascent_step(np.array([3.0, 4.0]), 0.5, "normalized")
    assert np.linalg.norm(step) == pytest.approx(0.5)
    np.testing.assert_array_equal(edloop.ascent_step(np.zeros(2), 0.5, "normalized"), [0, 0])
    with pytest.raises(ValueError):
        edloop.optimize_design(DesignSpace.free(1, [[0, 1]]), concave(np.zeros(1)),
                               step_rule="newton")


def test_failing_restarts_are_recorded_and_all_failing_raises():
    space = DesignSpace.free(1, [[0, 1]])

    def flaky(g):
        if float(ad.value_of(g)[0]) > 0.5:
            raise ArithmeticError("boom")
        return ad.reshape(ad.neg(g), (1,))

    res = edloop.optimize_design(space, flaky, restarts=6, steps=2, seed=0)
    assert res.failed and float(res.gamma[0]) <= 0.5

    def always(g):
        raise ArithmeticError("boom")

    with pytest.raises(NoFeasibleDesignError):
        edloop.optimize_design(space, always, restarts=2, steps=1)


def test_aggregate_is_the_thread_mean_and_order_free():
    scores = np.array([-1.0, -2.0, -4.5, 0.0])
    assert ad.value_of(edloop.aggregate(scores)) == pytest.approx(scores.mean(), abs=1e-12)
    assert ad.value_of(edloop.aggregate(scores[::-1])) == pytest.approx(scores.mean(), abs=1e-12)
    assert ad.value_of(edloop.aggregate(np.array([2.5]))) == 2.5
    assert ad.value_of(edloop.aggregate(np.full(5, -0.3))) == pytest.approx(-0.3)


def test_non_finite_thread_is_named():
    with pytest.raises(edloop.ThreadCriterionError) as info:
        edloop.aggregate_checked(lambda g: np.array([0.0, np.nan, 1.0]), np.zeros(1))
    assert info.value.thread == 1


def test_grid_baselines():
    np.testing.assert_array_equal(edloop.baseline_grid(DesignSpace.time_grid(3, (0, 6), [0.0])),
                                  [0.0, 3.0, 6.0])
    g = edloop.baseline_grid(DesignSpace.free(30, [[0, 5], [0, 5]])).reshape(-1, 2)
    assert len(np.unique(g[:, 0])) == 6 and len(np.unique(g[:, 1])) == 5
    np.testing.assert_array_equal(edloop.baseline_grid(DesignSpace.free(3, [[0, 20]])), [0, 10, 20])
    np.testing.assert_array_equal(edloop.baseline_grid(DesignSpace.grid_1d(4, (0, 6))), [0, 6])


def test_random_baseline_is_seeded_and_feasible():
    space = DesignSpace.free(3, [[0, 20]])
    a, b = edloop.baseline_random(space, 11), edloop.baseline_random(space, 11)
    np.testing.assert_array_equal(a, b)
    assert space.contains(a)
