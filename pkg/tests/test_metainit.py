import numpy as np
import pytest

from edpinn import metainit
from edpinn.errors import InvalidParameterError
from edpinn.network import init_params
from edpinn.pinn import TrainConfig, train_forward_batch
from edpinn.seeding import derive_seed


def test_zero_rounds_return_the_random_init(oscillator):
    theta = metainit.reptile(oscillator, 0, 3, TrainConfig(steps=10), seed=5)
    expected = init_params(oscillator.u_arch, derive_seed(5, "init")).values
    np.testing.assert_array_equal(theta, expected)


def test_single_task_round_equals_inner_result(oscillator):
    cfg = TrainConfig(steps=30)
    theta = metainit.reptile(oscillator, 1, 1, cfg, seed=2)
    init = init_params(oscillator.u_arch, derive_seed(2, "init")).values
    beta = oscillator.beta_space.sample(derive_seed(2, "round", 0, "task", 0))
    inner = train_forward_batch(oscillator, beta[None], init,
                                cfg.with_(seed=derive_seed(2, "round", 0, "collocation")))
    np.testing.assert_array_equal(theta, inner.theta[0])


def test_deterministic_and_finite_every_round(oscillator):
    cfg = TrainConfig(steps=20)
    hist = []
    a = metainit.reptile(oscillator, 3, 2, cfg, seed=9, history=hist)
    b = metainit.reptile(oscillator, 3, 2, cfg, seed=9)
    np.testing.assert_array_equal(a, b)
    assert len(hist) == 3 and all(np.all(np.isfinite(h)) for h in hist)


def test_interpolation_moves_part_way(oscillator):
    cfg = TrainConfig(steps=20)
    full = metainit.reptile(oscillator, 1, 2, cfg, seed=1)
    half = metainit.reptile(oscillator, 1, 2, cfg, seed=1, interpolation=0.5)
    init = init_params(oscillator.u_arch, derive_seed(1, "init")).values
    np.testing.assert_allclose(half, init + 0.5 * (full - init), rtol=0, atol=1e-15)


def test_invalid_arguments(oscillator):
    with pytest.raises(InvalidParameterError):
        metainit.reptile(oscillator, 1, 0, TrainConfig(steps=1), seed=0)
    with pytest.raises(InvalidParameterError):
        metainit.reptile(oscillator, 1, 1, TrainConfig(steps=1), seed=0, interpolation=1.5)
