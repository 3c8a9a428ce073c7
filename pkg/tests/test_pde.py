import numpy as np
import pytest

from edpinn import autodiff as ad
from edpinn import pde
from edpinn.errors import DomainError, InvalidParameterError
from edpinn.network import init_params

# x(t) for M=1, x0=1, v0=0 from a classical RK4 integration with step 1e-4,
# computed independently of the closed form (mu, k, t) -> x
RK4_REFERENCE = [
    ((0.5, 2.0, 1.0), 0.2761965770253713),  # underdamped
    ((3.0, 1.0, 2.0), 0.5444956660098675),  # overdamped
    ((2.0, 1.0, 1.5), 0.5578254003710701),  # critical
    ((0.0, 4.0, 3.0), 0.9601702866503669),  # undamped
]


@pytest.mark.parametrize("params, expected", RK4_REFERENCE)
def test_oscillator_closed_form_matches_rk4(params, expected):
    mu, k, t = params
    got = pde.oscillator_solution(mu, k, 1.0, 1.0, 0.0, np.array([t]))[0]
    assert got == pytest.approx(expected, abs=1e-10)


@pytest.mark.parametrize("beta", [(0.5, 2.0), (3.0, 1.0), (2.0, 1.0), (0.0, 4.0), (4.0, 0.0)])
def test_oscillator_closed_form_zeroes_residual(beta):
    prob = pde.Oscillator()
    u = lambda X: ad.reshape(prob.solution(beta)(ad.getitem(X, (Ellipsis, 0))),
                             ad.shape_of(X)[:-1] + (1,))
    X = np.linspace(0.0, 20.0, 201)[:, None]
    r = prob.interior_residual(u, np.asarray(beta), X)
    assert np.max(np.abs(r)) < 1e-8
    rb = prob.boundary_residual(u, np.asarray(beta), {"initial": np.zeros((1, 1))})
    assert np.max(np.abs(rb)) < 1e-12


def test_oscillator_rejects_invalid_inputs():
    with pytest.raises(InvalidParameterError):
        pde.oscillator_solution(1.0, 1.0, 0.0, 1.0, 0.0, np.array([1.0]))
    with pytest.raises(InvalidParameterError):
        pde.oscillator_solution(-1.0, 1.0, 1.0, 1.0, 0.0, np.array([1.0]))
    with pytest.raises(DomainError):
        pde.Oscillator().oracle([1.0, 1.0], np.array([[21.0]]))


def test_wave_oracle_matches_dalembert_for_uniform_speed():
    x, t = np.meshgrid(np.linspace(0, 6, 31), np.linspace(0, 6, 31), indexing="ij")
    got = pde.wave_oracle(1.0, 1.0, x.ravel(), t.ravel(), decimals=None)
    assert np.max(np.abs(got - pde.dalembert(x.ravel(), t.ravel()))) < 1e-3


def test_wave_oracle_rounds_to_six_decimals():
    v = pde.wave_oracle(1.2, 0.7, [1.234], [2.345])
    assert v[0] == np.round(v[0], 6)


def test_wave_scheme_conserves_energy():
    sol = pde.solve_wave(1.5, 0.8, dx=0.02)
    drift = np.max(np.abs(sol.energy - sol.energy[0])) / sol.energy[0]
    assert drift < 1e-10


def test_wave_speed_out_of_range():
    with pytest.raises(InvalidParameterError):
        pde.wave_oracle(0.1, 1.0, [1.0], [1.0])


def test_eikonal_constant_speed_is_octile_distance_on_nodes():
    g = np.linspace(0, 5, 101)
    X = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1).reshape(-1, 2)
    tt = pde.solve_eikonal(lambda P: np.ones(len(P)))
    np.testing.assert_allclose(tt(X), pde.octile_distance(X), rtol=0, atol=1e-12)


def test_eikonal_time_scales_inversely_with_speed():
    X = np.array([[1.0, 2.0], [4.0, 4.5]])
    t1 = pde.solve_eikonal(lambda P: np.ones(len(P)))(X)
    t2 = pde.solve_eikonal(lambda P: 2.0 * np.ones(len(P)))(X)
    np.testing.assert_allclose(t2, t1 / 2.0, rtol=1e-12)


def test_eikonal_oracle_rounds_to_three_decimals():
    prob = pde.Eikonal()
    beta = prob.beta_space.sample(3)
    out = prob.oracle(beta, np.array([[2.5, 1.3]]))
    assert out[0] == np.round(out[0], 3) and out[0] > 0


def test_eikonal_network_speed_floor_and_zero_time_at_source():
    prob = pde.Eikonal()
    beta = prob.beta_space.sample(0)
    v = ad.value_of(prob.speed(beta, prob.uniform_points(100, 1)))
    assert np.all(v >= 0.2)
    u = prob.network_solution(init_params(prob.u_arch, 0).values)
    assert ad.value_of(u(np.array([[0.0, 0.0]])))[0, 0] == 0.0


def test_beta_space_vector_operations():
    space = pde.Oscillator().beta_space
    assert space.dim == 2
    np.testing.assert_array_equal(space.center(), [2.0, 2.0])
    np.testing.assert_array_equal(space.project([-1.0, 5.0]), [0.0, 4.0])
    assert space.error(np.array([1.0, 2.0]), np.array([0.0, 0.0])) == 5.0
    draws = space.sample_many(range(50))
    assert all(space.contains(b) for b in draws)


def test_beta_space_function_error_is_grid_mse():
    prob = pde.Eikonal()
    a, b = prob.beta_space.sample(1), prob.beta_space.sample(2)
    grid = prob.beta_space.test_points
    fa = ad.value_of(prob.speed(a, grid))
    fb = ad.value_of(prob.speed(b, grid))
    assert prob.beta_space.error(a, b) == pytest.approx(np.mean((fa - fb) ** 2))
    assert prob.beta_space.dim == 65


def test_derivatives_of_polynomial():
    X = np.array([[1.0, 2.0], [0.5, -1.0]])
    u = lambda P: ad.reshape(ad.mul(ad.mul(ad.getitem(P, (Ellipsis, 0)), ad.getitem(P, (Ellipsis, 0))),
                                    ad.getitem(P, (Ellipsis, 1))), ad.shape_of(P)[:-1] + (1,))
    val, dx, dxx = pde.derivatives(u, X, 0, 2)
    np.testing.assert_allclose(val, [2.0, -0.25])
    np.testing.assert_allclose(dx, [4.0, -1.0])
    np.testing.assert_allclose(dxx, [4.0, -2.0])


def test_collocation_is_seeded_and_in_domain():
    for prob in (pde.Oscillator(), pde.Wave(), pde.Eikonal()):
        Xp, Xb = prob.sample_collocation(40, 6, 5)
        Xp2, _ = prob.sample_collocation(40, 6, 5)
        np.testing.assert_array_equal(Xp, Xp2)
        prob.check_domain(Xp)
        for pts in Xb.values():
            prob.check_domain(pts)


def test_make_problem_unknown_name():
    with pytest.raises(InvalidParameterError):
        pde.make_problem("heat")
    assert pde.make_problem("wave").beta_space.dim == 2
