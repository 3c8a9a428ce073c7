"""Design spaces: the map from a design vector gamma to observation inputs.

Three layouts are supported:

``free``
    M points anywhere in a box; gamma holds their coordinates back to back.
``time-grid``
    sensors at positions gamma, each read at a fixed list of times.
``grid-1d``
    s evenly spaced points from gamma[0] to gamma[1].

``realize`` is written with autodiff primitives so X depends differentiably
on a tracked gamma.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import InfeasibleDesignError, InvalidParameterError
from .pinn import ObservationSet

KINDS = ("free", "time-grid", "grid-1d")


@dataclass(frozen=True, eq=False)
class DesignSpace:
    kind: str
    lower: np.ndarray  # bounds on gamma
    upper: np.ndarray
    n_points: int
    input_dim: int
    times: np.ndarray | None = None

    @classmethod
    def free(cls, n_points: int, box) -> "DesignSpace":
        box = np.asarray(box, dtype=np.float64).reshape(-1, 2)
        d = box.shape[0]
        return cls("free", np.tile(box[:, 0], n_points), np.tile(box[:, 1], n_points),
                   int(n_points), d)

    @classmethod
    def time_grid(cls, n_sensors: int, interval, times) -> "DesignSpace":
        lo, hi = (float(v) for v in interval)
        times = np.asarray(times, dtype=np.float64)
        return cls("time-grid", np.full(n_sensors, lo), np.full(n_sensors, hi),
                   int(n_sensors) * times.size, 2, times)

    @classmethod
    def grid_1d(cls, n_points: int, interval) -> "DesignSpace":
        if n_points < 2:
            raise InvalidParameterError("a 1-D grid needs at least two points")
        lo, hi = (float(v) for v in interval)
        return cls("grid-1d", np.array([lo, lo]), np.array([hi, hi]), int(n_points), 1)

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.upper - self.lower))

    def contains(self, gamma, tol: float = 0.0) -> bool:
        g = np.asarray(ad.value_of(gamma))
        return bool(g.shape == (self.dim,) and np.all(g >= self.lower - tol)
                    and np.all(g <= self.upper + tol))

    def project(self, gamma) -> np.ndarray:
        """Euclidean projection onto the box of feasible gamma."""
        return np.clip(np.asarray(gamma, dtype=np.float64), self.lower, self.upper)

    def sample(self, seed) -> np.ndarray:
        return np.random.default_rng(seed).uniform(self.lower, self.upper)

    def realize(self, gamma):
        """Observation inputs (M, input_dim) for a feasible gamma."""
        if not self.contains(gamma):
            raise InfeasibleDesignError(f"design vector outside its feasible box: "
                                        f"{np.asarray(ad.value_of(gamma))}")
        if self.kind == "free":
            return ad.reshape(gamma, (self.n_points, self.input_dim))
        if self.kind == "time-grid":
            s, f = self.dim, self.times.size
            xs = ad.reshape(ad.broadcast_to(ad.reshape(gamma, (s, 1)), (s, f)), (s * f, 1))
            ts = np.tile(self.times, s).reshape(s * f, 1)
            return ad.concat([xs, ts], axis=-1)
        w = np.linspace(0.0, 1.0, self.n_points).reshape(-1, 1)
        g0 = ad.getitem(gamma, slice(0, 1))
        g1 = ad.getitem(gamma, slice(1, 2))
        return ad.add(ad.mul(g0, 1.0 - w), ad.mul(g1, w))


def observe(predict, X, noise_var: float, seed) -> ObservationSet:
    """Simulated readings predict(X) plus Gaussian noise of the given variance."""
    X = np.asarray(X, dtype=np.float64)
    clean = np.asarray(predict(X), dtype=np.float64)
    if noise_var < 0:
        raise InvalidParameterError("noise variance must be non-negative")
    if noise_var == 0:
        return ObservationSet(X, clean, 0.0)
    eps = np.random.default_rng(seed).normal(0.0, np.sqrt(noise_var), size=clean.shape)
    return ObservationSet(X, clean + eps, noise_var)


def observe_forward(problem, theta, X, noise_var: float, seed) -> ObservationSet:
    """Observations generated by a trained forward network."""
    X = problem.check_domain(X)

    def predict(P):
        return ad.value_of(problem.network_solution(np.asarray(theta))(P))[..., 0]

    return observe(predict, X, noise_var, seed)
