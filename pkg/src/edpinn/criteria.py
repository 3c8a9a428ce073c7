"""Design criteria scored per reference parameter ("thread").

Every differentiable criterion maps a design vector gamma to one score per
thread, higher meaning better.  ``gamma`` may be a tape node; the returned
scores then carry gradients with respect to it.

* FIST unrolls a few gradient steps of the inverse solver from a perturbed
  copy of the converged forward network and scores the parameter error.
* MoTE predicts the converged inverse estimate by kernel regression with the
  empirical tangent kernel of the network.
* TIP scores the log-determinant of the parameter Hessian of the
  observation misfit under the implicit parameter shift of the network.
* MI is the Gaussian-process mutual information baseline (not differentiable).

MoTE and TIP are written against a small model protocol (``predict`` and
``residual``), so exactly linear toy models exercise the same code as PINNs.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from . import autodiff as ad
from .design import DesignSpace
from .errors import (CriterionDivergedError, DegenerateDesignError, IllConditionedError,
                     InvalidParameterError)
from .pde import PDEProblem
from .pinn import TrainConfig, observation_loss, physics_loss, train_forward_batch
from .seeding import derive_seed

JITTER_ESCALATIONS = 3


# ---------------------------------------------------------------------------
# model protocol


class ResidualModel(Protocol):
    n_params: int
    beta_dim: int
    row_scale: np.ndarray

    def predict(self, theta, X):
        """Outputs (..., M) at points X (..., M, d); theta (..., P) broadcasts."""

    def residual(self, theta, beta):
        """Unscaled physics residual rows (..., n)."""

    def residual_jacobians(self, theta, beta):
        """(r, dr/dtheta, dr/dbeta) at a single (theta, beta)."""


def reverse_rows(fn, theta, beta):
    """Residual and its Jacobians by one reverse sweep per residual row."""
    th, be = ad.variable(theta), ad.variable(beta)
    r = fn(th, be)
    rv = np.asarray(ad.value_of(r))
    n = rv.shape[-1]
    Jt = np.zeros((n, th.value.size))
    Jb = np.zeros((n, be.value.size))
    for k in range(n):
        seed = np.zeros(n)
        seed[k] = 1.0
        gt, gb = ad.gradients(r, [th, be], seed=seed)
        Jt[k], Jb[k] = gt, gb
    return rv, Jt, Jb


class PinnModel:
    """A PDE problem's network and residual rows at fixed collocation points."""

    def __init__(self, problem: PDEProblem, Xp: np.ndarray, Xb: dict):
        self.problem = problem
        self.Xp = np.asarray(Xp, dtype=np.float64)
        self.Xb = Xb
        self.n_params = problem.u_arch.param_count
        self.beta_dim = problem.beta_space.dim
        n_p = self.Xp.shape[0]
        n_b = sum(np.shape(v)[0] for v in Xb.values())
        rb = self._boundary(np.zeros(self.n_params), problem.beta_space.center())
        m_b = np.shape(ad.value_of(rb))[-1]
        self.n_interior, self.n_boundary_rows = n_p, m_b
        self.row_scale = np.concatenate([np.full(n_p, n_p ** -0.5), np.full(m_b, n_b ** -0.5)])

    def predict(self, theta, X):
        return ad.getitem(self.problem.network_solution(theta)(X), (Ellipsis, 0))

    def _boundary(self, theta, beta):
        return self.problem.boundary_residual(self.problem.network_solution(theta), beta, self.Xb)

    def residual(self, theta, beta):
        u = self.problem.network_solution(theta)
        rp = self.problem.interior_residual(u, beta, self.Xp)
        return ad.concat([rp, self._boundary(theta, beta)], axis=-1)

    def residual_jacobians(self, theta, beta):
        theta = np.asarray(theta, dtype=np.float64)
        beta = np.asarray(beta, dtype=np.float64)
        n = self.n_interior
        # one network copy per interior point: row k of the Jacobian is the
        # gradient of residual k with respect to copy k
        th = ad.variable(np.broadcast_to(theta, (n, theta.size)))
        be = ad.variable(np.broadcast_to(beta, (n, beta.size)))
        rp = self.problem.interior_residual(self.problem.network_solution(th), be,
                                            self.Xp[:, None, :])
        gt, gb = ad.gradients(rp, [th, be])
        rb, Jtb, Jbb = reverse_rows(self._boundary, theta, beta)
        r = np.concatenate([np.asarray(ad.value_of(rp))[:, 0], rb])
        return r, np.vstack([gt, Jtb]), np.vstack([gb, Jbb])


def observation_jacobian(model, theta, X, create_graph: bool = False):
    """Predictions (..., M) and their parameter Jacobian (..., M, P).

    X (M, d) may be tracked; with ``create_graph`` the Jacobian stays
    differentiable with respect to it.
    """
    theta = np.asarray(theta, dtype=np.float64)
    M, d = ad.shape_of(X)
    th = ad.variable(np.broadcast_to(theta[..., None, :], theta.shape[:-1] + (M, theta.shape[-1])))
    out = model.predict(th, ad.reshape(X, (M, 1, d)))
    pred = ad.reshape(out, theta.shape[:-1] + (M,))
    (J,) = ad.gradients(ad.sum_(out), [th], create_graph=create_graph)
    return pred, J


# ---------------------------------------------------------------------------
# configuration and context


@dataclass(frozen=True)
class CriterionConfig:
    perturb_var: float = 0.5
    fist_steps: int = 50
    mote_steps: int | None = None  # None reuses perturbed forward parameters
    inner_lr: float = 0.01
    inner_optimizer: str = "gd"
    jitter: float = 1e-6
    noise_var: float = 0.0
    tip_exact_max_dim: int = 4
    mi_test_points: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.perturb_var < 0 or self.fist_steps < 0 or self.jitter <= 0:
            raise InvalidParameterError("perturbation variance and steps must be >= 0, "
                                        "jitter > 0")
        if self.mote_steps is not None and self.mote_steps < 0:
            raise InvalidParameterError("MoTE warm-up steps must be >= 0")


@dataclass
class ForwardEnsemble:
    betas: np.ndarray  # (N, beta_dim)
    thetas: np.ndarray  # (N, P)
    theta_si: np.ndarray  # (P,)

    def __post_init__(self):
        self.betas = np.atleast_2d(np.asarray(self.betas, dtype=np.float64))
        self.thetas = np.atleast_2d(np.asarray(self.thetas, dtype=np.float64))
        if self.betas.shape[0] != self.thetas.shape[0] or self.betas.shape[0] < 1:
            raise InvalidParameterError("ensemble needs matching, non-empty betas and thetas")

    def __len__(self):
        return self.betas.shape[0]

    def permuted(self, order) -> "ForwardEnsemble":
        order = np.asarray(order)
        return ForwardEnsemble(self.betas[order], self.thetas[order], self.theta_si)


@dataclass
class CriterionContext:
    problem: PDEProblem
    ensemble: ForwardEnsemble
    space: DesignSpace
    cfg: CriterionConfig = field(default_factory=CriterionConfig)
    train_cfg: TrainConfig = field(default_factory=TrainConfig)
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        Xp, Xb = self.problem.sample_collocation(self.train_cfg.n_interior,
                                                 self.train_cfg.n_boundary, self.train_cfg.seed)
        self.Xp, self.Xb = Xp, Xb
        self.model = PinnModel(self.problem, Xp, Xb)

    @property
    def n_threads(self) -> int:
        return len(self.ensemble)

    def perturbation(self, label: str):
        """Fixed per-thread noise so a criterion is a deterministic function of gamma."""
        key = ("perturb", label)
        if key not in self._cache:
            N, P = self.ensemble.thetas.shape
            dim = self.ensemble.betas.shape[1]
            sd = np.sqrt(self.cfg.perturb_var)
            eps_t, eps_b = np.empty((N, P)), np.empty((N, dim))
            for i in range(N):
                rng = np.random.default_rng(derive_seed(self.cfg.seed, label, i))
                eps_t[i] = rng.normal(0.0, sd, P) if sd > 0 else 0.0
                eps_b[i] = rng.normal(0.0, sd, dim) if sd > 0 else 0.0
            self._cache[key] = (eps_t, eps_b)
        return self._cache[key]

    def simulated_observations(self, X, label: str):
        """Forward-network readings at X for every thread (N, M), plus optional noise."""
        Y = self.model.predict(self.ensemble.thetas, X)
        if self.cfg.noise_var > 0:
            M = ad.shape_of(X)[0]
            noise = np.stack([
                np.random.default_rng(derive_seed(self.cfg.seed, label, "noise", i)).normal(
                    0.0, np.sqrt(self.cfg.noise_var), M) for i in range(self.n_threads)])
            Y = ad.add(Y, noise)
        return Y

    def thread_scores_error(self, beta_hat):
        return ad.neg(self.problem.beta_space.error(beta_hat, self.ensemble.betas))


# ---------------------------------------------------------------------------
# FIST


def fist(ctx: CriterionContext, gamma):
    """Per-thread scores -||beta_r - beta_i||^2 after r unrolled training steps.

    With a tracked gamma every step is recorded (gradients of gradients), so
    the scores differentiate through the whole unrolled loop.
    """
    track = isinstance(gamma, ad.Var)
    X = ctx.space.realize(gamma)
    Y = ctx.simulated_observations(X, "fist")
    eps_t, eps_b = ctx.perturbation("fist")
    params = [ctx.ensemble.thetas + eps_t, ctx.ensemble.betas + eps_b]
    step = _adam_step if ctx.cfg.inner_optimizer == "adam" else _gd_step
    state = {}
    for j in range(ctx.cfg.fist_steps):
        vs = [p if isinstance(p, ad.Var) else ad.variable(p) for p in params]
        loss = ad.add(observation_loss(ctx.problem, vs[0], X, Y),
                      physics_loss(ctx.problem, vs[0], vs[1], ctx.Xp, ctx.Xb))
        grads = ad.gradients(loss, vs, create_graph=track, check_finite=False)
        if not track:
            vs = [v.value for v in vs]
        params = step(vs, grads, ctx.cfg.inner_lr, state, j + 1)
        if not all(np.all(np.isfinite(ad.value_of(p))) for p in params):
            raise CriterionDivergedError(f"FIST unrolled state became non-finite at step {j}")
    return ctx.thread_scores_error(params[1])


def _gd_step(params, grads, lr, state, t):
    return [ad.sub(p, ad.mul(g, lr)) for p, g in zip(params, grads)]


def _adam_step(params, grads, lr, state, t, b1=0.9, b2=0.999, eps=1e-8):
    """Adam written with tape primitives so it can be differentiated through.

    The square root is taken of v + eps^2 to keep its derivative finite.
    """
    m = state.get("m", [0.0] * len(params))
    v = state.get("v", [0.0] * len(params))
    out = []
    for k, (p, g) in enumerate(zip(params, grads)):
        m[k] = ad.add(ad.mul(m[k], b1), ad.mul(g, 1.0 - b1))
        v[k] = ad.add(ad.mul(v[k], b2), ad.mul(ad.mul(g, g), 1.0 - b2))
        mhat = ad.mul(m[k], 1.0 / (1.0 - b1 ** t))
        vhat = ad.mul(v[k], 1.0 / (1.0 - b2 ** t))
        out.append(ad.sub(p, ad.mul(ad.div(mhat, ad.sqrt(ad.add(vhat, eps * eps))), lr)))
    state["m"], state["v"] = m, v
    return out


# ---------------------------------------------------------------------------
# MoTE


def _pick_jitter(K: np.ndarray, rhs: np.ndarray, jitter: float) -> float:
    """Smallest escalated jitter for which the regularised solve is trustworthy."""
    eye = np.eye(K.shape[-1])
    lam = jitter
    for _ in range(JITTER_ESCALATIONS + 1):
        A = K + lam * eye
        try:
            z = np.linalg.solve(A, rhs)
        except np.linalg.LinAlgError:
            z = None
        if z is not None and np.all(np.isfinite(z)):
            res = np.linalg.norm(A @ z - rhs) / max(np.linalg.norm(rhs), 1e-300)
            if res < 1e-6:
                return lam
        lam *= 10.0
    raise IllConditionedError("kernel solve failed after jitter escalation")


def kernel_regression_delta(J_obs, r_obs, J_pt: np.ndarray, J_pb: np.ndarray,
                            r_p: np.ndarray, jitter: float):
    """Converged change of beta predicted by tangent-kernel regression.

    Arguments carry an optional leading batch axis; J_obs and r_obs may be
    tracked.  Returns the beta change of shape (..., beta_dim).
    """
    Jo_t = ad.swap_last(J_obs)
    Koo = ad.matmul(J_obs, Jo_t)
    Kop = ad.matmul(J_obs, np.swapaxes(J_pt, -1, -2))
    Kpp = J_pt @ np.swapaxes(J_pt, -1, -2) + J_pb @ np.swapaxes(J_pb, -1, -2)
    top = ad.concat([Koo, Kop], axis=-1)
    bottom = ad.concat([ad.swap_last(Kop), Kpp], axis=-1)
    K = ad.concat([top, bottom], axis=-2)
    rhs = ad.concat([r_obs, r_p], axis=-1)
    n = ad.shape_of(K)[-1]
    Kv, rv = np.asarray(ad.value_of(K)), np.asarray(ad.value_of(rhs))
    lam = max(_pick_jitter(k, r, jitter) for k, r in
              zip(Kv.reshape(-1, n, n), rv.reshape(-1, n)))
    z = ad.solve(ad.add(K, lam * np.eye(n)), ad.reshape(rhs, ad.shape_of(rhs) + (1,)))
    m = ad.shape_of(r_obs)[-1]
    z_p = ad.getitem(z, (Ellipsis, slice(m, None), slice(None)))
    delta = ad.matmul(np.swapaxes(J_pb, -1, -2), z_p)
    return ad.neg(ad.reshape(delta, ad.shape_of(delta)[:-1]))


def mote_estimate(model, theta0, beta0, X, Y, jitter: float = 1e-6) -> np.ndarray:
    """Converged beta predicted from (theta0, beta0) for observations (X, Y)."""
    pred, J_obs = observation_jacobian(model, theta0, np.asarray(X, dtype=np.float64))
    r_p, J_pt, J_pb = model.residual_jacobians(theta0, beta0)
    delta = kernel_regression_delta(J_obs, pred - np.asarray(Y, dtype=np.float64),
                                    J_pt, J_pb, r_p, jitter)
    return np.asarray(beta0, dtype=np.float64) + np.asarray(ad.value_of(delta))


def _mote_state(ctx: CriterionContext):
    """(theta_r, beta_r) per thread plus the physics Jacobians there; gamma-free."""
    if "mote_state" in ctx._cache:
        return ctx._cache["mote_state"]
    N = ctx.n_threads
    if ctx.cfg.mote_steps is None:
        eps_t, eps_b = ctx.perturbation("mote")
        thetas = ctx.ensemble.thetas + eps_t
        betas = ctx.ensemble.betas + eps_b
    else:
        start = ctx.problem.beta_space.center()
        wcfg = ctx.train_cfg.with_(steps=ctx.cfg.mote_steps)
        res = _warm_up(ctx, np.broadcast_to(start, (N, start.size)), wcfg)
        thetas, betas = res
    jac = [ctx.model.residual_jacobians(thetas[i], betas[i]) for i in range(N)]
    state = (thetas, betas, np.stack([j[0] for j in jac]), np.stack([j[1] for j in jac]),
             np.stack([j[2] for j in jac]))
    ctx._cache["mote_state"] = state
    return state


def _warm_up(ctx: CriterionContext, betas0, cfg: TrainConfig):
    """Physics-only joint training of (theta, beta) from the shared initialisation."""
    from .pinn import adam_minimize

    N = betas0.shape[0]
    theta0 = np.broadcast_to(ctx.ensemble.theta_si, (N, ctx.model.n_params)).copy()
    if cfg.steps == 0:
        return theta0, np.array(betas0, dtype=np.float64)
    space = ctx.problem.beta_space
    (theta, beta), div = adam_minimize(
        lambda th, be: physics_loss(ctx.problem, th, be, ctx.Xp, ctx.Xb),
        [theta0, np.array(betas0)], cfg, lambda ps: [ps[0], space.project(ps[1])])
    if np.any(div >= 0):
        raise CriterionDivergedError("MoTE warm-up diverged")
    return theta, beta


def mote(ctx: CriterionContext, gamma):
    """Per-thread scores -||beta_inf - beta_i||^2 from kernel regression."""
    thetas, betas, r_p, J_pt, J_pb = _mote_state(ctx)
    X = ctx.space.realize(gamma)
    Y = ctx.simulated_observations(X, "mote")
    pred, J_obs = observation_jacobian(ctx.model, thetas, X, create_graph=True)
    delta = kernel_regression_delta(J_obs, ad.sub(pred, Y), J_pt, J_pb, r_p, ctx.cfg.jitter)
    return ctx.thread_scores_error(ad.add(betas, delta))


# ---------------------------------------------------------------------------
# TIP


def gauss_newton_hessian(model, theta, beta, jitter: float = 0.0):
    """J_R^T J_R (+ jitter I) for the scaled residual R = row_scale * r."""
    _, Jt, _ = model.residual_jacobians(theta, beta)
    JR = Jt * model.row_scale[:, None]
    return JR.T @ JR + jitter * np.eye(JR.shape[1])


def physics_gradient(model, theta, beta) -> np.ndarray:
    """Gradient in theta of 0.5 ||row_scale * r||^2."""
    th = ad.variable(theta)
    r = ad.mul(model.residual(th, np.asarray(beta, dtype=np.float64)), model.row_scale)
    (g,) = ad.gradients(ad.mul(ad.square_norm(r), 0.5), [th])
    return g


def _safe_inverse(H: np.ndarray, jitter: float) -> np.ndarray:
    lam = 0.0
    for k in range(JITTER_ESCALATIONS + 1):
        try:
            L = np.linalg.cholesky(H + lam * np.eye(H.shape[0]))
            Linv = np.linalg.inv(L)
            inv = Linv.T @ Linv
            if np.all(np.isfinite(inv)):
                return inv
        except np.linalg.LinAlgError:
            pass
        lam = jitter * 10.0 ** (k + 1)
    raise IllConditionedError("Gauss-Newton Hessian solve failed after jitter escalation")


def tip_param_shift(model, theta_i, beta_i, beta_new, jitter: float = 1e-6) -> np.ndarray:
    """Implicit network response to moving beta from beta_i to beta_new."""
    theta_i = np.asarray(theta_i, dtype=np.float64)
    if np.array_equal(np.asarray(beta_new), np.asarray(beta_i)):
        return theta_i.copy()
    Hinv = _safe_inverse(gauss_newton_hessian(model, theta_i, beta_i, jitter), jitter)
    dg = physics_gradient(model, theta_i, beta_new) - physics_gradient(model, theta_i, beta_i)
    return theta_i - Hinv @ dg


def _physics_loss_model(model, theta, beta):
    r = ad.mul(model.residual(theta, beta), model.row_scale)
    return ad.mul(ad.square_norm(r), 0.5)


def tip_sensitivities(model, theta_i, beta_i, jitter: float = 1e-6, second_order: bool = True):
    """First and second beta-derivatives of the shifted parameters theta~(beta').

    Returns v (P, k) and w (P, k, k) (w is None when ``second_order`` is off).
    """
    theta_i = np.asarray(theta_i, dtype=np.float64)
    beta_i = np.asarray(beta_i, dtype=np.float64)
    k = beta_i.size
    Hinv = _safe_inverse(gauss_newton_hessian(model, theta_i, beta_i, jitter), jitter)
    eye = np.eye(k)
    D = np.zeros((theta_i.size, k))
    for a in range(k):
        th = ad.variable(theta_i)
        tag = ad.new_tag()
        loss = _physics_loss_model(model, th, ad.Dual(beta_i, eye[a], tag))
        (D[:, a],) = ad.gradients(ad.tangent(loss, tag), [th])
    v = -Hinv @ D
    if not second_order:
        return v, None
    T = np.zeros((theta_i.size, k, k))
    for a in range(k):
        for b in range(a, k):
            th = ad.variable(theta_i)
            inner, outer = ad.new_tag(), ad.new_tag()
            be = ad.Dual(ad.Dual(beta_i, eye[a], inner), ad.Dual(eye[b], None, inner), outer)
            loss = _physics_loss_model(model, th, be)
            (T[:, a, b],) = ad.gradients(ad.tangent(ad.tangent(loss, outer), inner), [th])
            T[:, b, a] = T[:, a, b]
    w = -np.einsum("pq,qab->pab", Hinv, T)
    return v, w


def misfit_hessian(model, theta_i, v, w, X, Y):
    """Hessian in beta' of ||u(theta~(beta'), X) - Y||^2 at beta' = beta_i.

    theta~ is expanded to second order: theta_i + v d + 0.5 d^T w d.  With
    ``w`` None only the Gauss-Newton part 2 S^T S is formed.  X and Y may be
    tracked; the result is a (k, k) tape-compatible matrix.
    """
    k = v.shape[-1]
    if w is None:
        cols = []
        for a in range(k):
            tag = ad.new_tag()
            out = model.predict(ad.Dual(theta_i, v[..., a], tag), X)
            cols.append(ad.reshape(ad.tangent(out, tag), ad.shape_of(out) + (1,)))
        S = ad.concat(cols, axis=-1)
        return ad.mul(ad.matmul(ad.swap_last(S), S), 2.0)
    rows = []
    for a in range(k):
        row = []
        for b in range(k):
            inner, outer = ad.new_tag(), ad.new_tag()
            th = ad.Dual(ad.Dual(theta_i, v[..., a], inner),
                         ad.Dual(v[..., b], w[..., a, b], inner), outer)
            e = ad.sub(model.predict(th, X), Y)
            ell = ad.square_norm(e, axis=-1, keepdims=True)
            row.append(ad.tangent(ad.tangent(ell, outer), inner))
        rows.append(ad.concat(row, axis=-1))
    return ad.concat([ad.reshape(r, ad.shape_of(r)[:-1] + (1, k)) for r in rows], axis=-2)


def regularized_logdet(Hl, jitter: float):
    """log det(H + jitter I) with escalation when not positive definite."""
    k = ad.shape_of(Hl)[-1]
    vals = np.asarray(ad.value_of(Hl)).reshape(-1, k, k)
    lam = jitter
    for _ in range(JITTER_ESCALATIONS + 1):
        if all(np.linalg.eigvalsh(0.5 * (h + h.T)).min() + lam > 0 for h in vals):
            return ad.logdet(ad.add(Hl, lam * np.eye(k)))
        lam *= 10.0
    raise DegenerateDesignError("observation-misfit Hessian is not positive definite")


def _tip_state(ctx: CriterionContext):
    if "tip_state" in ctx._cache:
        return ctx._cache["tip_state"]
    k = ctx.problem.beta_space.dim
    second = k <= ctx.cfg.tip_exact_max_dim
    vs, ws = [], []
    for th, be in zip(ctx.ensemble.thetas, ctx.ensemble.betas):
        v, w = tip_sensitivities(ctx.model, th, be, ctx.cfg.jitter, second)
        vs.append(v)
        ws.append(w)
    state = (np.stack(vs), np.stack(ws) if second else None)
    ctx._cache["tip_state"] = state
    return state


def tip(ctx: CriterionContext, gamma):
    """Per-thread log det of the regularised observation-misfit Hessian in beta."""
    v, w = _tip_state(ctx)
    X = ctx.space.realize(gamma)
    Y = ctx.simulated_observations(X, "tip")
    Hl = misfit_hessian(ctx.model, ctx.ensemble.thetas, v, w, X, Y)
    return regularized_logdet(Hl, ctx.cfg.jitter)


# ---------------------------------------------------------------------------
# mutual information baseline


def gaussian_mi(K_tt: np.ndarray, K_tg: np.ndarray, K_gg: np.ndarray, noise_var: float,
                jitter: float = 0.0) -> float:
    """I(f(X_t); f(X_g) + noise) for a zero-mean Gaussian process with the given kernel blocks."""
    if K_gg.shape[0] == 0:
        return 0.0
    lam = jitter
    scale = max(float(np.max(np.abs(np.diag(K_tt)))), 1e-300)
    for k in range(JITTER_ESCALATIONS + 2):
        try:
            A = K_gg + noise_var * np.eye(K_gg.shape[0])
            prior = K_tt + lam * np.eye(K_tt.shape[0])
            post = prior - K_tg @ np.linalg.solve(A, K_tg.T)
            L1 = np.linalg.cholesky(prior)
            L2 = np.linalg.cholesky(0.5 * (post + post.T))
            return float(np.sum(np.log(np.diag(L1))) - np.sum(np.log(np.diag(L2))))
        except np.linalg.LinAlgError:
            lam = scale * 1e-10 * 10.0 ** k
    raise IllConditionedError("conditional covariance singular after jitter escalation")


def mi_criterion(ctx: CriterionContext, gamma, X_test=None, noise_var: float | None = None):
    """Mutual information between test-point values and observations at X_gamma."""
    if ctx.n_threads < 2:
        raise InvalidParameterError("mutual information needs at least two threads")
    X_test = ctx.problem.test_points(ctx.cfg.mi_test_points) if X_test is None else X_test
    noise_var = ctx.cfg.noise_var if noise_var is None else noise_var
    X = np.asarray(ad.value_of(ctx.space.realize(np.asarray(ad.value_of(gamma)))))
    if X.shape[0] == 0:
        return 0.0
    F = np.asarray(ad.value_of(ctx.model.predict(ctx.ensemble.thetas,
                                                 np.vstack([X_test, X]))))
    C = np.cov(F, rowvar=False)
    nt = len(X_test)
    return gaussian_mi(C[:nt, :nt], C[:nt, nt:], C[nt:, nt:], max(noise_var, 1e-12))


DIFFERENTIABLE = {"fist": fist, "mote": mote, "tip": tip}

__all__ = [
    "CriterionConfig", "ForwardEnsemble", "CriterionContext", "PinnModel", "ResidualModel",
    "fist", "mote", "tip", "mi_criterion", "mote_estimate", "kernel_regression_delta",
    "observation_jacobian", "tip_param_shift", "tip_sensitivities", "gauss_newton_hessian",
    "misfit_hessian", "regularized_logdet", "gaussian_mi", "reverse_rows", "DIFFERENTIABLE",
]
