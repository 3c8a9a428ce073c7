"""Criterion aggregation and multi-restart projected gradient ascent."""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from .design import DesignSpace
from .errors import EDError, NoFeasibleDesignError
from .seeding import derive_seed


class ThreadCriterionError(EDError):
    def __init__(self, thread: int, cause: BaseException):
        self.thread = thread
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 1)
        super().__init__(f"criterion failed on thread {thread}: {cause}")


@dataclass
class EDResult:
    gamma: np.ndarray
    score: float
    traces: list = field(default_factory=list)  # per restart: (gammas (p+1, dim), scores (p+1,))
    restart_scores: np.ndarray | None = None
    failed: list = field(default_factory=list)
    wall_clock: float = 0.0
    config_hash: str = ""


def aggregate(per_thread):
    """Mean over threads; keeps tape structure for tracked inputs."""
    n = ad.shape_of(per_thread)[-1]
    return ad.mul(ad.sum_(per_thread, axis=-1), 1.0 / n)


def aggregate_checked(scores_fn: Callable, gamma):
    """Aggregate with a thread-indexed error when any thread score is non-finite."""
    scores = scores_fn(gamma)
    vals = np.asarray(ad.value_of(scores))
    bad = np.flatnonzero(~np.isfinite(vals))
    if bad.size:
        raise ThreadCriterionError(int(bad[0]), ArithmeticError("non-finite score"))
    return aggregate(scores)


def value_and_grad(scores_fn: Callable, gamma):
    """Aggregated criterion and its gradient in gamma."""
    g = ad.variable(np.asarray(gamma, dtype=np.float64))
    alpha = aggregate_checked(scores_fn, g)
    if not isinstance(alpha, ad.Var):
        return float(alpha), np.zeros_like(g.value)
    (grad,) = ad.gradients(alpha, [g])
    return float(alpha.value), np.asarray(grad)


def default_step(space: DesignSpace) -> float:
    return 0.05 * space.diagonal


STEP_RULES = ("gradient", "normalized")


def ascent_step(grad: np.ndarray, lr: float, rule: str = "gradient") -> np.ndarray:
    """lr * grad, or a move of length lr along grad for the normalized rule."""
    if rule == "normalized":
        norm = float(np.linalg.norm(grad))
        return np.zeros_like(grad) if norm == 0.0 else grad * (lr / norm)
    return lr * grad


def optimize_design(space: DesignSpace, scores_fn: Callable, restarts: int = 8, steps: int = 100,
                    lr: float | None = None, seed: int = 0, differentiable: bool = True,
                    config_hash: str = "", step_rule: str = "gradient") -> EDResult:
    """Projected gradient ascent from ``restarts`` random feasible starts.

    Each restart keeps its best iterate, so a restart never reports less than
    its starting score.  Restarts whose criterion fails are recorded and
    skipped.  Criteria without gradients use random search with the same
    evaluation budget.

    ``step_rule`` "normalized" moves exactly ``lr`` along the gradient each
    step, which makes the step length independent of the criterion's scale.
    """
    if restarts < 1 or steps < 0:
        raise ValueError("need restarts >= 1 and steps >= 0")
    if step_rule not in STEP_RULES:
        raise ValueError(f"unknown step rule {step_rule!r}")
    lr = default_step(space) if lr is None else lr
    t0 = time.perf_counter()
    traces, finals, failed = [], [], []
    best_gamma, best_score = None, -np.inf
    for k in range(restarts):
        gamma = space.sample(derive_seed(seed, "restart", k))
        gammas, scores = [gamma.copy()], []
        try:
            if differentiable:
                for _ in range(steps):
                    val, grad = value_and_grad(scores_fn, gamma)
                    scores.append(val)
                    gamma = space.project(gamma + ascent_step(grad, lr, step_rule))
                    gammas.append(gamma.copy())
            else:
                rng = np.random.default_rng(derive_seed(seed, "search", k))
                for _ in range(steps):
                    scores.append(_value(scores_fn, gamma))
                    gamma = space.sample(rng)
                    gammas.append(gamma.copy())
            scores.append(_value(scores_fn, gamma))
        except (EDError, ArithmeticError, np.linalg.LinAlgError) as exc:
            failed.append((k, repr(exc)))
            traces.append((np.array(gammas[:len(scores)]), np.array(scores)))
            if scores:
                j = int(np.argmax(scores))
                finals.append(scores[j])
                if scores[j] > best_score:
                    best_score, best_gamma = scores[j], gammas[j]
            else:
                finals.append(-np.inf)
            continue
        scores = np.array(scores)
        j = int(np.argmax(np.where(np.isfinite(scores), scores, -np.inf)))
        finals.append(scores[j])
        traces.append((np.array(gammas), scores))
        if scores[j] > best_score:
            best_score, best_gamma = float(scores[j]), gammas[j]
    if best_gamma is None:
        raise NoFeasibleDesignError("every restart failed")
    return EDResult(np.array(best_gamma), float(best_score), traces, np.array(finals), failed,
                    time.perf_counter() - t0, config_hash)


def _value(scores_fn, gamma) -> float:
    return float(ad.value_of(aggregate_checked(scores_fn, np.asarray(gamma, dtype=np.float64))))


def baseline_random(space: DesignSpace, seed) -> np.ndarray:
    return space.sample(seed)


def _lattice_shape(m: int) -> tuple[int, int]:
    """Rows x columns with rows >= columns, as close to square as possible."""
    best = None
    for c in range(1, m + 1):
        if m % c == 0:
            r = m // c
            if r >= c and (best is None or r - c < best[0] - best[1]):
                best = (r, c)
    return best


def baseline_grid(space: DesignSpace) -> np.ndarray:
    """Evenly spread design; near-square lattice for 2-D free placement."""
    lo, hi = space.lower, space.upper
    if space.kind == "grid-1d":
        return np.array([lo[0], hi[1]])
    if space.kind == "time-grid":
        return np.linspace(lo[0], hi[0], space.dim)
    M, d = space.n_points, space.input_dim
    box = np.stack([lo[:d], hi[:d]], axis=1)
    if d == 1:
        return np.linspace(box[0, 0], box[0, 1], M)
    if d == 2:
        r, c = _lattice_shape(M)
        xs = np.linspace(box[0, 0], box[0, 1], r)
        ys = np.linspace(box[1, 0], box[1, 1], c)
        return np.stack(np.meshgrid(xs, ys, indexing="ij"), axis=-1).reshape(-1)
    n = int(np.ceil(M ** (1.0 / d)))
    axes = [np.linspace(b[0], b[1], n) for b in box]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)[:M]
    return pts.reshape(-1)
