"""Shared network initialisation learned across the parameter prior (REPTILE)."""
from __future__ import annotations

import numpy as np

from .errors import InvalidParameterError, TrainingDivergedError
from .network import init_params
from .pde import PDEProblem
from .pinn import TrainConfig, train_forward_batch
from .seeding import derive_seed


def reptile(problem: PDEProblem, rounds: int, tasks: int, inner_cfg: TrainConfig, seed: int,
            interpolation: float = 1.0, init=None, history: list | None = None) -> np.ndarray:
    """Meta-learned initial parameters.

    Each round draws ``tasks`` parameter values, fine-tunes the current
    initialisation on each with the physics loss only, and moves the
    initialisation toward the mean of the fine-tuned parameters.  With
    ``interpolation`` 1 the initialisation becomes that mean.
    """
    if rounds < 0 or tasks < 1:
        raise InvalidParameterError("rounds must be >= 0 and tasks >= 1")
    if not 0.0 < interpolation <= 1.0:
        raise InvalidParameterError("interpolation must lie in (0, 1]")
    if init is None:
        theta = np.array(init_params(problem.u_arch, derive_seed(seed, "init")).values)
    else:
        theta = np.array(getattr(init, "values", init), dtype=np.float64)
    for j in range(rounds):
        betas = problem.beta_space.sample_many(
            [derive_seed(seed, "round", j, "task", t) for t in range(tasks)])
        cfg = inner_cfg.with_(seed=derive_seed(seed, "round", j, "collocation"))
        res = train_forward_batch(problem, betas, theta, cfg)
        if np.any(res.diverged_at >= 0):
            raise TrainingDivergedError(int(res.diverged_at.max()), f"meta round {j}")
        mean = res.theta.mean(axis=0)
        theta = mean if interpolation == 1.0 else theta + interpolation * (mean - theta)
        if not np.all(np.isfinite(theta)):
            raise TrainingDivergedError(inner_cfg.steps, f"meta round {j} produced non-finite values")
        if history is not None:
            history.append(theta.copy())
    return theta
