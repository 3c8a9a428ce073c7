"""End-to-end acceptance checks, one test per criterion.

Each test prints a single PASS/FAIL line; the lines are repeated in the
pytest terminal summary.  The ED trend check (criterion 7) runs the full
design-and-evaluate protocol five times and takes most of an hour.
"""
import time

import numpy as np
import pytest
import yaml

from edpinn import autodiff as ad
from edpinn import cli, criteria, edloop, harness, pde
from edpinn.design import DesignSpace
from edpinn.network import as_input_function, as_param_function, init_params
from edpinn.pinn import TrainConfig, oracle_mse, train_forward_batch, train_inverse_batch
from edpinn.seeding import derive_seed
from toy_models import TanhResidualModel, random_linear_model, ridge_beta, LinearModel


def rel_err(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12))


def central(f, x, h):
    x = np.asarray(x, float)
    cols = []
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        cols.append((np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2 * h))
    return np.stack(cols, axis=-1)


# ---------------------------------------------------------------------------


def test_criterion_01_autodiff_matches_finite_differences(verdict):
    t0 = time.perf_counter()
    problems = [pde.Oscillator(), pde.Wave(), pde.Eikonal()]
    archs = [p.u_arch for p in problems] + [problems[2].beta_space.arch]
    rng = np.random.default_rng(2024)
    worst1, worst2 = 0.0, 0.0
    for case in range(50):
        arch = archs[case % len(archs)]
        params = init_params(arch, 1000 + case)
        lo, hi = np.array(arch.input_box or [(-1, 1)] * arch.input_dim, dtype=float).T
        X = rng.uniform(lo + 0.05 * (hi - lo), hi - 0.05 * (hi - lo), (3, arch.input_dim))
        # parameter Jacobian at three points
        f = as_param_function(arch, X)
        J = ad.jacobian(f, params.values)
        worst1 = max(worst1, rel_err(J, central(f.evaluate, params.values, 1e-6)))
        # input gradient and second derivatives at one point
        g = as_input_function(params)
        x = X[0]
        worst1 = max(worst1, rel_err(ad.grad(g, x), central(g.evaluate, x, 1e-6)[0]))
        for axis in range(arch.input_dim):
            e = np.zeros_like(x)
            e[axis] = 1e-4
            fd2 = (g.evaluate(x + e) - 2 * g.evaluate(x) + g.evaluate(x - e)) / 1e-8
            worst2 = max(worst2, rel_err(ad.input_derivative(g, x, axis, 2), fd2))
    elapsed = time.perf_counter() - t0
    ok = worst1 < 1e-4 and worst2 < 1e-3 and elapsed < 60
    verdict(1, ok, f"50 MLPs: first-order rel err {worst1:.1e} (<1e-4), "
                   f"second-order {worst2:.1e} (<1e-3), {elapsed:.1f}s")


def test_criterion_02_oracles_are_consistent(verdict):
    t0 = time.perf_counter()
    osc = pde.Oscillator()
    t = np.linspace(0, 20, 401)[:, None]
    worst_res = 0.0
    betas = [(mu, k) for mu in (0.0, 0.5, 1.3, 2.0, 3.7) for k in (0.2, 1.0, 2.5, 4.0)]
    betas += [(2.0, 1.0), (4.0, 4.0), (4.0, 0.0)]  # critical and pure decay
    for beta in betas:
        sol = osc.solution(beta)

        def u(X):
            return ad.reshape(sol(ad.getitem(X, (Ellipsis, 0))), ad.shape_of(X)[:-1] + (1,))

        worst_res = max(worst_res, float(np.max(np.abs(osc.interior_residual(u, np.asarray(beta), t)))))
    x, tt = (a.ravel() for a in np.meshgrid(np.linspace(0, 6, 61), np.linspace(0, 6, 61)))
    wave_err = float(np.max(np.abs(pde.wave_oracle(1.0, 1.0, x, tt, decimals=None)
                                   - pde.dalembert(x, tt))))
    g = np.linspace(0, 5, 101)
    nodes = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1).reshape(-1, 2)
    travel = pde.solve_eikonal(lambda P: np.ones(len(P)))(nodes)
    eik_err = float(np.max(np.abs(travel - pde.octile_distance(nodes))))
    elapsed = time.perf_counter() - t0
    ok = worst_res < 1e-8 and wave_err < 1e-3 and eik_err <= 1e-12 and elapsed < 120
    verdict(2, ok, f"oscillator residual {worst_res:.1e} (<1e-8), wave vs d'Alembert "
                   f"{wave_err:.1e} (<1e-3), eikonal vs octile {eik_err:.1e}, {elapsed:.1f}s")


def test_criterion_03_shared_init_beats_random_init(verdict, oscillator, theta_si):
    t0 = time.perf_counter()
    betas = oscillator.beta_space.sample_many([derive_seed(77, "beta", j) for j in range(8)])
    rand = np.stack([init_params(oscillator.u_arch, derive_seed(77, "init", j)).values
                     for j in range(8)])
    cfg = TrainConfig(steps=2000, lr_final=1e-4, seed=derive_seed(77, "collocation"))
    from_si = oracle_mse(oscillator, train_forward_batch(oscillator, betas, theta_si, cfg).theta, betas)
    from_rand = oracle_mse(oscillator, train_forward_batch(oscillator, betas, rand, cfg).theta, betas)
    wins = int(np.sum(from_si < from_rand))
    elapsed = time.perf_counter() - t0
    verdict(3, wins >= 7 and elapsed < 900,
            f"shared init lower test MSE in {wins}/8 pairs (need 7); mean "
            f"{from_si.mean():.2e} vs {from_rand.mean():.2e}, {elapsed:.0f}s after meta-init")


def test_criterion_04_mote_exact_on_linear_models(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(44)
    worst = 0.0
    for _ in range(20):
        degree, beta_dim, m = int(rng.integers(2, 6)), int(rng.integers(1, 4)), int(rng.integers(1, 6))
        # at least as many rows as unknowns, so the converged estimate is unique
        n_res = max(1, degree + 1 + beta_dim - m) + int(rng.integers(0, 3))
        model = random_linear_model(rng, degree=degree, n_res=n_res, beta_dim=beta_dim)
        theta0, beta0 = rng.normal(size=model.n_params), rng.normal(size=model.beta_dim)
        X, Y = rng.uniform(-1, 1, (m, 1)), rng.normal(size=m)
        got = criteria.mote_estimate(model, theta0, beta0, X, Y, jitter=1e-6)
        worst = max(worst, float(np.max(np.abs(got - ridge_beta(model, theta0, beta0, X, Y, 1e-6)))))
    elapsed = time.perf_counter() - t0
    verdict(4, worst < 1e-8 and elapsed < 60,
            f"20 linear models: max |beta_mote - beta_ridge| {worst:.1e} (<1e-8), {elapsed:.1f}s")


def test_criterion_05_tip_hessian_contract(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(55)
    gn_err, shift_err = 0.0, 0.0
    for _ in range(10):
        P, n, k = 4, int(rng.integers(5, 9)), int(rng.integers(1, 3))
        theta0, beta0 = rng.normal(size=P) * 0.4, rng.normal(size=k)
        model = TanhResidualModel(rng.normal(size=(n, P)), rng.normal(size=(n, k)), theta0, beta0, 3)
        GN = criteria.gauss_newton_hessian(model, theta0, beta0)
        th = ad.variable(theta0)
        (g,) = ad.gradients(ad.mul(ad.square_norm(model.residual(th, beta0)), 0.5), [th],
                            create_graph=True)
        H = np.stack([ad.gradients(ad.getitem(g, i), [th])[0] for i in range(P)])
        gn_err = max(gn_err, float(np.max(np.abs(GN - H))))

        A, B, c = rng.normal(size=(n, P)), rng.normal(size=(n, k)), rng.normal(size=n)
        quad = LinearModel(A, B, c, degree=P - 1)
        theta_i = np.linalg.lstsq(A, c - B @ beta0, rcond=None)[0]
        beta_new = beta0 + rng.normal(size=k) * 0.3
        # analytic Newton step on 0.5 ||A theta + B beta' - c||^2 from theta_i
        newton = theta_i - np.linalg.solve(A.T @ A, A.T @ (A @ theta_i + B @ beta_new - c))
        got = criteria.tip_param_shift(quad, theta_i, beta0, beta_new, jitter=1e-14)
        shift_err = max(shift_err, float(np.max(np.abs(got - newton))))
    elapsed = time.perf_counter() - t0
    verdict(5, gn_err < 1e-8 and shift_err < 1e-8 and elapsed < 60,
            f"Gauss-Newton vs exact Hessian {gn_err:.1e}, shift vs Newton {shift_err:.1e} "
            f"(both <1e-8), {elapsed:.1f}s")


@pytest.fixture(scope="module")
def oscillator_ensemble(oscillator, theta_si):
    betas = oscillator.beta_space.sample_many([derive_seed(6, "forward", i) for i in range(8)])
    cfg = TrainConfig(steps=1000, seed=derive_seed(6, "collocation"))
    res = train_forward_batch(oscillator, betas, theta_si, cfg)
    return criteria.ForwardEnsemble(betas, res.theta, theta_si), cfg


def test_criterion_06_criterion_gradients_match_finite_differences(verdict, oscillator,
                                                                   oscillator_ensemble):
    t0 = time.perf_counter()
    ens, cfg = oscillator_ensemble
    space = DesignSpace.free(3, oscillator.box)
    defaults = cli.resolve_config({})["criterion"]
    ccfg = criteria.CriterionConfig(perturb_var=defaults["perturb_var"], fist_steps=5,
                                    inner_lr=cfg.lr, seed=derive_seed(6, "criterion"))
    ctx = criteria.CriterionContext(oscillator, ens, space, ccfg, cfg)
    worst = {}
    for name in ("fist", "mote"):
        fn = criteria.DIFFERENTIABLE[name]

        def value(g):
            return float(ad.value_of(edloop.aggregate(fn(ctx, g))))

        errs = []
        for j in range(10):
            gamma = space.project(space.sample(derive_seed(6, "gamma", j)))
            gamma = np.clip(gamma, 1e-3, 20 - 1e-3)
            _, grad = edloop.value_and_grad(lambda g: fn(ctx, g), gamma)
            errs.append(rel_err(grad, central(value, gamma, 1e-4)))
        worst[name] = max(errs)
    elapsed = time.perf_counter() - t0
    ok = all(v < 1e-2 for v in worst.values()) and elapsed < 300
    verdict(6, ok, f"10 designs: FIST(r=5) grad rel err {worst['fist']:.1e}, MoTE "
                   f"{worst['mote']:.1e} (<1e-2), {elapsed:.0f}s")


# ---------------------------------------------------------------------------
# criterion 7: design quality trend against random designs

ED_RUNS = 5
ED_THREADS = 8
ED_INSTANCES = 10
ED_NOISE = 1e-3
ED_TRAIN = TrainConfig(steps=3000, lr=0.01, n_interior=300, n_boundary=1)
ED_METHODS = {
    # criterion settings, restarts, ascent steps, step length (normalized rule)
    "fist": (dict(perturb_var=0.01, fist_steps=50, inner_optimizer="adam"), 8, 8, 1.0),
    "mote": (dict(perturb_var=0.0, mote_steps=None), 16, 30, 0.5),
}


def ed_run(problem, theta_si, run):
    """Designs from both criteria and a random design, evaluated on shared instances."""
    space = DesignSpace.free(3, problem.box)
    cfg = ED_TRAIN.with_(seed=derive_seed(run, "collocation"))
    betas = problem.beta_space.sample_many([derive_seed(run, "forward", i) for i in range(ED_THREADS)])
    fwd = train_forward_batch(problem, betas, theta_si, cfg)
    ens = criteria.ForwardEnsemble(betas, fwd.theta, theta_si)
    gammas = {}
    for name, (kw, restarts, steps, lr) in ED_METHODS.items():
        ctx = criteria.CriterionContext(
            problem, ens, space,
            criteria.CriterionConfig(seed=derive_seed(run, "criterion"), inner_lr=cfg.lr, **kw), cfg)
        fn = criteria.DIFFERENTIABLE[name]
        res = edloop.optimize_design(space, lambda g: fn(ctx, g), restarts, steps, lr,
                                     derive_seed(run, "design", name), step_rule="normalized")
        gammas[name] = res.gamma
    gammas["random"] = edloop.baseline_random(space, derive_seed(run, "design", "random"))
    reports = harness.evaluate_designs(problem, space, list(gammas.values()), ED_INSTANCES,
                                       theta_si, cfg, derive_seed(run, "evaluate"), ED_NOISE,
                                       list(gammas))
    return {r.method: r for r in reports}


@pytest.mark.slow
def test_criterion_07_designed_observations_beat_random(verdict, oscillator, theta_si):
    t0 = time.perf_counter()
    wins = {m: 0 for m in ED_METHODS}
    rows = []
    for run in range(ED_RUNS):
        reps = ed_run(oscillator, theta_si, run)
        base = reps["random"].median
        for m in ED_METHODS:
            wins[m] += reps[m].median <= base
        rows.append(" ".join(f"{m}={reps[m].median:.3g}" for m in reps))
        print(f"  run {run}: " + rows[-1] + "  designs " +
              " ".join(f"{m}={np.round(r.gamma, 2).tolist()}" for m, r in reps.items()))
    elapsed = time.perf_counter() - t0
    ok = all(w >= 4 for w in wins.values()) and elapsed < 3600
    verdict(7, ok, f"runs where median error <= random: fist {wins['fist']}/5, mote "
                   f"{wins['mote']}/5 (need 4); {elapsed / 60:.1f} min; " + " | ".join(rows))


# ---------------------------------------------------------------------------


def test_criterion_08_dense_noiseless_data_identify_beta(verdict, oscillator, theta_si):
    t0 = time.perf_counter()
    insts = harness.make_instances(oscillator, 10, 0.0, seed=88)
    X = np.linspace(0, 20, 50)[:, None]
    Y = np.stack([harness.observations_for(oscillator, X, i) for i in insts])
    res = train_inverse_batch(oscillator, X, Y, theta_si, oscillator.beta_space.center(),
                              TrainConfig(steps=30000, lr_final=1e-4,
                                          seed=derive_seed(88, "collocation")))
    truth = np.stack([i.beta for i in insts])
    dev = np.abs(res.beta - truth).max(axis=1)
    hits = int(np.sum(dev < 0.1))
    elapsed = time.perf_counter() - t0
    verdict(8, hits >= 9 and elapsed < 600,
            f"{hits}/10 instances within 0.1 componentwise (need 9); worst deviation "
            f"{dev.max():.3f}, {elapsed:.0f}s")


DETERMINISM_CONFIG = {
    "threads": 4,
    "instances": 4,
    "methods": ["fist", "mote", "tip", "mi", "random", "grid"],
    "meta": {"rounds": 2, "tasks": 2, "steps": 100},
    "train": {"steps": 300},
    "criterion": {"fist_steps": 5},
    "optimizer": {"restarts": 2, "steps": 3},
}


def test_criterion_09_all_is_byte_reproducible(verdict, tmp_path):
    t0 = time.perf_counter()
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump(DETERMINISM_CONFIG))
    outputs = []
    for name in ("first", "second"):
        code = cli.main(["all", "--config", str(path), "--out", str(tmp_path / name)])
        assert code == 0
        (run_dir,) = list((tmp_path / name).iterdir())
        outputs.append({p.relative_to(run_dir): p.read_bytes() for p in sorted(run_dir.rglob("*.csv"))})
    same = outputs[0] == outputs[1] and len(outputs[0]) == 8
    elapsed = time.perf_counter() - t0
    verdict(9, same and elapsed < 3600,
            f"two `all` runs: {len(outputs[0])} CSVs byte-identical={same}, {elapsed:.0f}s")


def random_space(rng):
    kind = rng.integers(3)
    if kind == 0:
        d = int(rng.integers(1, 3))
        lo = rng.uniform(-5, 5, d)
        box = np.stack([lo, lo + rng.uniform(0.5, 10, d)], axis=1)
        return DesignSpace.free(int(rng.integers(1, 6)), box)
    if kind == 1:
        lo = rng.uniform(-5, 5)
        times = np.sort(rng.uniform(0, 10, int(rng.integers(1, 6))))
        return DesignSpace.time_grid(int(rng.integers(1, 5)), (lo, lo + rng.uniform(0.5, 10)), times)
    lo = rng.uniform(-5, 5)
    return DesignSpace.grid_1d(int(rng.integers(2, 8)), (lo, lo + rng.uniform(0.5, 10)))


def test_criterion_10_projection_and_realization_properties(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(10)
    failures = []
    for case in range(1000):
        space = random_space(rng)
        raw = rng.normal(0, 10, space.dim)
        once = space.project(raw)
        if not (np.array_equal(space.project(once), once) and space.contains(once)):
            failures.append((case, "projection"))
        X = np.asarray(space.realize(once))
        if space.kind == "time-grid":
            expected = {(float(x), float(t)) for x in once for t in space.times}
            if X.shape[0] != space.dim * space.times.size or \
                    {tuple(map(float, p)) for p in X} != expected:
                failures.append((case, "product"))
        target = space.project(rng.normal(0, 10, space.dim))

        def scores(g, target=target):
            return ad.reshape(ad.neg(ad.square_norm(ad.sub(g, target))), (1,))

        res = edloop.optimize_design(space, scores, restarts=2, steps=5,
                                     lr=float(rng.uniform(0.01, 2.0)), seed=case)
        if not all(space.contains(g) for gs, _ in res.traces for g in gs):
            failures.append((case, "iterate"))
    elapsed = time.perf_counter() - t0
    verdict(10, not failures and elapsed < 60,
            f"1000 random cases: {len(failures)} violations of idempotence, feasibility or "
            f"product cardinality, {elapsed:.1f}s")
