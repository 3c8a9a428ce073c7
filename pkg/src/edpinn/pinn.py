"""Physics-informed losses, Adam, and forward / inverse training.

All training routines work on stacks of independent problems: parameter
arrays carry leading batch axes and every batch member has its own loss and
optimizer state.  A batch of one is the ordinary single-network case.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .errors import InvalidParameterError, TrainingDivergedError
from .pde import PDEProblem


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 3000
    lr: float = 0.01
    n_interior: int = 300
    n_boundary: int = 1
    seed: int = 0
    b1: float = 0.9
    b2: float = 0.999
    eps: float = 1e-8
    trace_every: int = 100
    lr_final: float | None = None  # geometric decay from lr to this over the run

    def __post_init__(self):
        if self.steps < 0:
            raise InvalidParameterError("steps must be >= 0")
        if self.lr <= 0 or (self.lr_final is not None and self.lr_final <= 0):
            raise InvalidParameterError("learning rate must be positive")
        if self.n_interior < 1 or self.n_boundary < 1:
            raise InvalidParameterError("collocation counts must be positive")

    def with_(self, **kw) -> "TrainConfig":
        return replace(self, **kw)


@dataclass(frozen=True, eq=False)
class ObservationSet:
    """Observation inputs X (M, d) and values Y (..., M)."""

    X: np.ndarray
    Y: np.ndarray
    noise_var: float = 0.0

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        object.__setattr__(self, "X", X)
        if not isinstance(self.Y, (ad.Var, ad.Dual)):
            object.__setattr__(self, "Y", np.asarray(self.Y, dtype=np.float64))
        if ad.shape_of(self.Y)[-1:] != (X.shape[0],):
            raise InvalidParameterError("X and Y must hold the same number of points")

    def __len__(self):
        return self.X.shape[0]


@dataclass
class TrainResult:
    theta: np.ndarray
    beta: np.ndarray | None
    trace: list = field(default_factory=list)
    diverged_at: np.ndarray | None = None  # step index per batch member, -1 if fine


# ---------------------------------------------------------------------------
# losses


def observation_loss(problem: PDEProblem, theta, X, Y):
    """||u(X) - Y||^2 / (2|X|) per batch member.  X may be tracked."""
    pred = ad.getitem(problem.network_solution(theta)(X), (Ellipsis, 0))
    d = ad.sub(pred, Y)
    return ad.mul(ad.square_norm(d, axis=-1), 0.5 / ad.shape_of(pred)[-1])


def physics_loss(problem: PDEProblem, theta, beta, Xp, Xb):
    """Interior plus boundary residual losses, each normalised by 2x its point count."""
    u = problem.network_solution(theta)
    rp = problem.interior_residual(u, beta, Xp)
    rb = problem.boundary_residual(u, beta, Xb)
    n_b = sum(np.shape(v)[-2] for v in Xb.values())
    lp = ad.mul(ad.square_norm(rp, axis=-1), 0.5 / np.shape(Xp)[-2])
    lb = ad.mul(ad.square_norm(rb, axis=-1), 0.5 / n_b)
    return ad.add(lp, lb)


def pinn_loss(problem: PDEProblem, theta, beta, Xp, Xb, obs: ObservationSet | None = None):
    """(total, observation loss, physics loss); empty or missing obs gives zero."""
    l_pde = physics_loss(problem, theta, beta, Xp, Xb)
    if obs is None or len(obs) == 0:
        l_obs = np.zeros(ad.shape_of(l_pde))
        return l_pde, l_obs, l_pde
    problem.check_domain(obs.X)
    l_obs = observation_loss(problem, theta, obs.X, obs.Y)
    return ad.add(l_obs, l_pde), l_obs, l_pde


# ---------------------------------------------------------------------------
# optimisation


class Adam:
    def __init__(self, shapes, lr, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        out = []
        for i, (p, g) in enumerate(zip(params, grads)):
            self.m[i] = self.b1 * self.m[i] + (1.0 - self.b1) * g
            self.v[i] = self.b2 * self.v[i] + (1.0 - self.b2) * g * g
            out.append(p - self.lr * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps))
        return out


def adam_minimize(loss_fn, params, cfg: TrainConfig, project=None, trace=None):
    """Minimise a batched loss with independent Adam states per batch member.

    ``loss_fn(*vars)`` returns losses of shape (B,) for parameters with a
    leading batch axis B.  Members whose loss turns non-finite are frozen at
    their last finite iterate.  Returns (params, diverged_at).
    """
    params = [np.array(p, dtype=np.float64) for p in params]
    batch = params[0].shape[0]
    opt = Adam([p.shape for p in params], cfg.lr, cfg.b1, cfg.b2, cfg.eps)
    diverged_at = np.full(batch, -1)
    alive = np.ones(batch, dtype=bool)
    decay = 1.0 if cfg.lr_final is None else (cfg.lr_final / cfg.lr) ** (1.0 / max(cfg.steps - 1, 1))
    for step in range(cfg.steps):
        opt.lr = cfg.lr * decay ** step
        vs = [ad.variable(p) for p in params]
        loss = loss_fn(*vs)
        lval = np.broadcast_to(ad.value_of(loss), (batch,))
        bad = alive & ~np.isfinite(lval)
        if bad.any():
            diverged_at[bad] = step
            alive &= ~bad
            if not alive.any():
                break
        if trace is not None and step % cfg.trace_every == 0:
            trace.append((step, lval.copy()))
        seed = np.where(alive, 1.0, 0.0)
        grads = ad.gradients(loss, vs, seed=np.broadcast_to(seed, ad.shape_of(loss)),
                             check_finite=False)
        grads = [np.where(_expand(alive, g.ndim), np.nan_to_num(g), 0.0) for g in grads]
        new = opt.step(params, grads)
        if project is not None:
            new = project(new)
        params = [np.where(_expand(alive, p.ndim), q, p) for p, q in zip(params, new)]
    if trace is not None:
        vs = [np.asarray(p) for p in params]
        final = np.broadcast_to(ad.value_of(loss_fn(*vs)), (batch,))
        trace.append((cfg.steps, final.copy()))
    return params, diverged_at


def _expand(mask, ndim):
    return mask.reshape(mask.shape + (1,) * (ndim - 1))


def train_forward_batch(problem: PDEProblem, betas, init, cfg: TrainConfig):
    """Physics-only training of one network per row of ``betas``.

    ``init`` is (P,) shared or (B, P).  Returns a TrainResult with (B, P) theta.
    """
    betas = np.atleast_2d(np.asarray(betas, dtype=np.float64))
    B = betas.shape[0]
    theta0 = np.broadcast_to(np.asarray(init, dtype=np.float64),
                             (B, problem.u_arch.param_count)).copy()
    if cfg.steps == 0:
        return TrainResult(theta0, betas, [], np.full(B, -1))
    Xp, Xb = problem.sample_collocation(cfg.n_interior, cfg.n_boundary, cfg.seed)
    trace = []
    (theta,), div = adam_minimize(
        lambda th: physics_loss(problem, th, betas, Xp, Xb), [theta0], cfg, trace=trace)
    return TrainResult(theta, betas, trace, div)


def train_forward(problem: PDEProblem, beta, init, cfg: TrainConfig) -> TrainResult:
    """Forward simulator for one parameter value; raises on divergence."""
    values = getattr(init, "values", init)
    res = train_forward_batch(problem, np.asarray(beta)[None], values, cfg)
    _raise_if_diverged(res)
    return TrainResult(res.theta[0], np.asarray(beta, dtype=np.float64),
                       [(s, l[0]) for s, l in res.trace], res.diverged_at)


def train_inverse_batch(problem: PDEProblem, X, Y, theta_init, beta_init, cfg: TrainConfig):
    """Joint (theta, beta) training for B independent observation sets.

    X is (M, d) shared by all members or (B, M, d); Y is (B, M).  Beta is
    projected onto its space after every step.
    """
    X = problem.check_domain(X)
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    B = Y.shape[0]
    theta0 = np.broadcast_to(np.asarray(theta_init, float), (B, problem.u_arch.param_count)).copy()
    beta0 = np.broadcast_to(np.asarray(beta_init, float), (B, problem.beta_space.dim)).copy()
    if cfg.steps == 0:
        return TrainResult(theta0, beta0, [], np.full(B, -1))
    Xp, Xb = problem.sample_collocation(cfg.n_interior, cfg.n_boundary, cfg.seed)
    space = problem.beta_space

    def loss(th, be):
        l_obs = observation_loss(problem, th, X, Y)
        return ad.add(l_obs, physics_loss(problem, th, be, Xp, Xb))

    def project(ps):
        return [ps[0], space.project(ps[1])]

    trace = []
    (theta, beta), div = adam_minimize(loss, [theta0, beta0], cfg, project, trace)
    return TrainResult(theta, beta, trace, div)


def train_inverse(problem: PDEProblem, obs: ObservationSet, theta_init, beta_init,
                  cfg: TrainConfig) -> TrainResult:
    if len(obs) == 0:
        raise InvalidParameterError("inverse training needs observations")
    if cfg.steps == 0:
        return TrainResult(np.array(theta_init, dtype=np.float64),
                           np.array(beta_init, dtype=np.float64), [], np.full(1, -1))
    res = train_inverse_batch(problem, obs.X, np.asarray(obs.Y)[None], theta_init, beta_init, cfg)
    _raise_if_diverged(res)
    return TrainResult(res.theta[0], res.beta[0], [(s, l[0]) for s, l in res.trace],
                       res.diverged_at)


def _raise_if_diverged(res: TrainResult):
    if res.diverged_at is not None and np.any(res.diverged_at >= 0):
        raise TrainingDivergedError(int(res.diverged_at[res.diverged_at >= 0].min()),
                                    "non-finite loss")


def oracle_mse(problem: PDEProblem, theta, beta, n: int = 256) -> np.ndarray:
    """Mean squared error of the network against the reference solver."""
    X = problem.test_points(n)
    ref = problem.oracle(beta, X) if np.ndim(beta) == 1 else \
        np.stack([problem.oracle(b, X) for b in beta])
    pred = np.asarray(ad.value_of(problem.network_solution(theta)(X)))[..., 0]
    return np.mean((pred - ref) ** 2, axis=-1)


__all__ = [
    "TrainConfig", "ObservationSet", "TrainResult", "Adam", "adam_minimize",
    "observation_loss", "physics_loss", "pinn_loss", "train_forward", "train_forward_batch",
    "train_inverse", "train_inverse_batch", "oracle_mse",
]
