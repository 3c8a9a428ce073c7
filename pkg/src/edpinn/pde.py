"""PDE problems, parameter spaces and reference solvers.

A problem exposes its residual operators in terms of a generic solution
callable ``u(x)`` mapping points (..., n, d) to values (..., n, 1).  That
callable can be a network with fixed or tracked parameters, or a closed-form
solution written with the autodiff primitives, so the same operator code is
checked against exact solutions and used for training.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra

from . import autodiff as ad
from .errors import DomainError, InvalidParameterError
from .network import MLPArchitecture, apply, init_params


# ---------------------------------------------------------------------------
# input derivatives of a solution callable


def derivatives(u: Callable, X, axis: int, order: int):
    """Returns [u, du/dx_axis] or [u, du, d2u] along ``axis``, each (..., n).

    Uses one level of duals for first order and two nested levels for
    second order.  ``X`` is a plain array of points.
    """
    X = np.asarray(X, dtype=np.float64)
    E = np.zeros_like(X)
    E[..., axis] = 1.0
    inner = ad.new_tag()
    if order == 1:
        y = u(ad.Dual(X, E, inner))
        return [ad.getitem(ad.primal(y, inner), (Ellipsis, 0)),
                ad.getitem(ad.tangent(y, inner), (Ellipsis, 0))]
    if order != 2:
        raise ValueError("order must be 1 or 2")
    outer = ad.new_tag()
    y = u(ad.Dual(ad.Dual(X, E, inner), ad.Dual(E, None, inner), outer))
    p, t = ad.primal(y, outer), ad.tangent(y, outer)
    first = (Ellipsis, 0)
    return [ad.getitem(ad.primal(p, inner), first), ad.getitem(ad.tangent(p, inner), first),
            ad.getitem(ad.tangent(t, inner), first)]


def _values(u: Callable, X):
    return ad.getitem(u(np.asarray(X, dtype=np.float64)), (Ellipsis, 0))


def _coef(beta, k: int):
    """Component k of beta (..., dim) shaped to broadcast against (..., n)."""
    return ad.getitem(beta, (Ellipsis, slice(k, k + 1)))


def _check_box(box: np.ndarray, X: np.ndarray, tol: float = 1e-12):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[-1] != box.shape[0]:
        raise DomainError(f"points must have {box.shape[0]} coordinates")
    if np.any(X < box[:, 0] - tol) or np.any(X > box[:, 1] + tol) or not np.all(np.isfinite(X)):
        raise DomainError("query point outside the domain")
    return X


# ---------------------------------------------------------------------------
# parameter spaces


@dataclass(frozen=True, eq=False)
class BetaSpace:
    """Either a bounded vector ("vector") or a network-valued function ("function")."""

    kind: str
    lower: np.ndarray = None
    upper: np.ndarray = None
    arch: MLPArchitecture = None
    test_points: np.ndarray = None
    center_seed: int = 0

    @classmethod
    def vector(cls, lower, upper) -> "BetaSpace":
        lo = np.asarray(lower, dtype=np.float64)
        hi = np.asarray(upper, dtype=np.float64)
        if lo.shape != hi.shape or np.any(lo > hi):
            raise InvalidParameterError("bad bounds")
        return cls("vector", lower=lo, upper=hi)

    @classmethod
    def function(cls, arch: MLPArchitecture, test_points, center_seed: int = 0) -> "BetaSpace":
        return cls("function", arch=arch,
                   test_points=np.asarray(test_points, dtype=np.float64),
                   center_seed=center_seed)

    @property
    def dim(self) -> int:
        return self.lower.size if self.kind == "vector" else self.arch.param_count

    def sample(self, seed) -> np.ndarray:
        if self.kind == "vector":
            rng = np.random.default_rng(seed)
            return rng.uniform(self.lower, self.upper)
        return np.array(init_params(self.arch, seed).values)

    def sample_many(self, seeds) -> np.ndarray:
        return np.stack([self.sample(s) for s in seeds])

    def center(self) -> np.ndarray:
        """Starting point for inverse solves."""
        if self.kind == "vector":
            return (self.lower + self.upper) / 2.0
        # its own seed stream so the center never coincides with a prior draw
        return np.array(init_params(self.arch, [self.center_seed, 1]).values)

    def project(self, beta):
        if self.kind == "vector":
            return np.clip(beta, self.lower, self.upper)
        return beta

    def contains(self, beta) -> bool:
        if self.kind == "vector":
            b = np.asarray(beta)
            return bool(np.all(b >= self.lower) and np.all(b <= self.upper))
        return np.shape(beta)[-1] == self.dim

    def function_values(self, beta, X=None):
        """Network-valued parameter evaluated at X (defaults to the test grid)."""
        X = self.test_points if X is None else X
        return ad.getitem(apply(self.arch, beta, X), (Ellipsis, 0))

    def error(self, beta_hat, beta_true):
        """Squared error (vector) or test-grid mean squared error (function).

        Generic over tracked arguments; reduces the last axis.
        """
        if self.kind == "vector":
            d = ad.sub(beta_hat, beta_true)
            return ad.square_norm(d, axis=-1)
        d = ad.sub(self.function_values(beta_hat), self.function_values(beta_true))
        return ad.mul(ad.square_norm(d, axis=-1), 1.0 / self.test_points.shape[0])


# ---------------------------------------------------------------------------
# problems


class PDEProblem:
    """Base class: a box domain, residual operators and a reference solver."""

    name: str = "pde"
    box: np.ndarray
    beta_space: BetaSpace
    u_arch: MLPArchitecture

    @property
    def input_dim(self) -> int:
        return self.box.shape[0]

    def interior_residual(self, u: Callable, beta, X):
        raise NotImplementedError

    def boundary_residual(self, u: Callable, beta, Xb: dict):
        raise NotImplementedError

    def sample_collocation(self, n_interior: int, n_boundary: int, seed):
        raise NotImplementedError

    def oracle(self, beta, X) -> np.ndarray:
        raise NotImplementedError

    def network_solution(self, theta):
        arch = self.u_arch
        return lambda x: apply(arch, theta, x)

    def check_domain(self, X) -> np.ndarray:
        return _check_box(self.box, X)

    def uniform_points(self, n: int, seed) -> np.ndarray:
        rng = np.random.default_rng(seed)
        return rng.uniform(self.box[:, 0], self.box[:, 1], size=(n, self.input_dim))

    def test_points(self, n: int) -> np.ndarray:
        """Deterministic evaluation points (a lattice for 2-D domains)."""
        if self.input_dim == 1:
            return np.linspace(self.box[0, 0], self.box[0, 1], n)[:, None]
        m = int(round(np.sqrt(n)))
        g = [np.linspace(lo, hi, m) for lo, hi in self.box]
        return np.stack(np.meshgrid(*g, indexing="ij"), axis=-1).reshape(-1, 2)


# -- damped oscillator -------------------------------------------------------


def oscillator_solution(mu, k, M, x0, v0, t):
    """Closed-form displacement of M x'' + mu x' + k x = 0.

    ``t`` may be an array, tape node or dual; mu, k, M, x0, v0 are floats.
    """
    if M <= 0:
        raise InvalidParameterError("mass must be positive")
    if mu < 0 or k < 0:
        raise InvalidParameterError("damping and stiffness must be non-negative")
    g = mu / (2.0 * M)
    w0 = np.sqrt(k / M)
    if g < w0:
        wd = np.sqrt(w0 * w0 - g * g)
        # x = e^{-g t}(a cos(wd t) + b sin(wd t)) is the A cos(wd t + phi) form
        a = x0
        b = (v0 + g * x0) / wd
        decay = ad.exp(ad.mul(t, -g))
        osc = ad.add(ad.mul(ad.cos(ad.mul(t, wd)), a), ad.mul(ad.sin(ad.mul(t, wd)), b))
        return ad.mul(decay, osc)
    if g == w0:
        C = x0
        B = v0 + w0 * x0
        return ad.mul(ad.add(ad.mul(t, B), C), ad.exp(ad.mul(t, -w0)))
    s = np.sqrt(g * g - w0 * w0)
    r1, r2 = -(g + s), -(g - s)
    # D + F = x0, r1 D + r2 F = v0
    D = (v0 - r2 * x0) / (r1 - r2)
    F = x0 - D
    return ad.add(ad.mul(ad.exp(ad.mul(t, r1)), D), ad.mul(ad.exp(ad.mul(t, r2)), F))


class Oscillator(PDEProblem):
    """M u'' + mu u' + k u = 0 on [0, T] with u(0)=x0, u'(0)=v0; beta = (mu, k)."""

    name = "oscillator"

    def __init__(self, t_max: float = 20.0, mass: float = 1.0, x0: float = 1.0,
                 v0: float = 0.0, beta_low=(0.0, 0.0), beta_high=(4.0, 4.0),
                 depth: int = 6, width: int = 8):
        self.box = np.array([[0.0, float(t_max)]])
        self.mass, self.x0, self.v0 = float(mass), float(x0), float(v0)
        self.beta_space = BetaSpace.vector(beta_low, beta_high)
        self.u_arch = MLPArchitecture(1, 1, depth, width, "tanh",
                                      input_box=((0.0, float(t_max)),))

    def interior_residual(self, u, beta, X):
        val, du, d2u = derivatives(u, X, 0, 2)
        r = ad.add(ad.mul(d2u, self.mass), ad.mul(_coef(beta, 0), du))
        return ad.add(r, ad.mul(_coef(beta, 1), val))

    def boundary_residual(self, u, beta, Xb):
        val, du = derivatives(u, Xb["initial"], 0, 1)
        return ad.concat([ad.sub(val, self.x0), ad.sub(du, self.v0)], axis=-1)

    def sample_collocation(self, n_interior, n_boundary, seed):
        Xp = self.uniform_points(n_interior, seed)
        return Xp, {"initial": np.zeros((max(int(n_boundary), 1), 1))}

    def solution(self, beta):
        mu, k = (float(v) for v in np.asarray(beta))
        return lambda x: oscillator_solution(mu, k, self.mass, self.x0, self.v0, x)

    def oracle(self, beta, X):
        X = self.check_domain(X)
        return np.asarray(ad.value_of(self.solution(beta)(X[:, 0])), dtype=np.float64)


# -- 1-D wave with a two-segment speed -----------------------------------------


def wave_initial(x):
    return np.exp(-4.0 * (np.asarray(x) - 2.0) ** 2)


def _wave_initial_generic(x):
    d = ad.sub(x, 2.0)
    return ad.exp(ad.mul(ad.mul(d, d), -4.0))


def wave_speed(v1, v2, x, interface: float = 4.0, length: float = 6.0):
    x = np.asarray(x, dtype=np.float64)
    v = np.where(x < interface, v1, v2)
    return np.where((x <= 0.0) | (x >= length), 0.0, v)


@dataclass(frozen=True)
class WaveSolution:
    """Leapfrog solution on a space-time lattice, interpolated bilinearly."""

    x: np.ndarray
    t: np.ndarray
    u: np.ndarray  # (nt, nx)
    energy: np.ndarray  # discrete energy per staggered time level

    def __call__(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        return RegularGridInterpolator((self.x, self.t), self.u.T)(X)


def solve_wave(v1: float, v2: float, dx: float = 0.005, length: float = 6.0,
               t_max: float = 6.0, interface: float = 4.0, courant: float = 0.5) -> WaveSolution:
    """Second-order centered scheme for u_tt = v(x)^2 u_xx with fixed ends."""
    nx = int(round(length / dx)) + 1
    x = np.linspace(0.0, length, nx)
    dx = x[1] - x[0]
    vmax = max(v1, v2)
    nt = int(np.ceil(t_max / (courant * dx / vmax))) + 1
    t = np.linspace(0.0, t_max, nt)
    dt = t[1] - t[0]
    c2 = (wave_speed(v1, v2, x, interface, length) * dt / dx) ** 2
    u = np.empty((nt, nx))
    u[0] = wave_initial(x)
    u[0, 0] = u[0, -1] = 0.0

    def lap(w):
        out = np.zeros_like(w)
        out[1:-1] = w[2:] - 2.0 * w[1:-1] + w[:-2]
        return out

    # zero initial velocity: Taylor start
    u[1] = u[0] + 0.5 * c2 * lap(u[0])
    for n in range(1, nt - 1):
        u[n + 1] = 2.0 * u[n] - u[n - 1] + c2 * lap(u[n])
    # conserved quantity of the scheme, weighted by 1/v^2 on interior nodes
    w = np.zeros(nx)
    inner = slice(1, nx - 1)
    w[inner] = 1.0 / wave_speed(v1, v2, x[inner], interface, length) ** 2
    du = (u[1:] - u[:-1]) / dt
    kinetic = np.sum(w * du * du, axis=1) * dx
    gx = np.diff(u, axis=1) / dx
    potential = np.sum(gx[1:] * gx[:-1], axis=1) * dx
    return WaveSolution(x, t, u, kinetic + potential)


@lru_cache(maxsize=32)
def _wave_cached(v1: float, v2: float, dx: float) -> WaveSolution:
    return solve_wave(v1, v2, dx)


def wave_oracle(v1, v2, x, t, dx: float = 0.005, decimals: int | None = 6) -> np.ndarray:
    """Displacement at (x, t) pairs, optionally rounded to ``decimals``."""
    if not (0.5 <= v1 <= 2.0 and 0.5 <= v2 <= 2.0):
        raise InvalidParameterError("wave speeds must lie in [0.5, 2]")
    X = np.stack(np.broadcast_arrays(np.asarray(x, float), np.asarray(t, float)), axis=-1)
    _check_box(np.array([[0.0, 6.0], [0.0, 6.0]]), X.reshape(-1, 2))
    out = _wave_cached(float(v1), float(v2), float(dx))(X.reshape(-1, 2)).reshape(X.shape[:-1])
    return np.round(out, decimals) if decimals is not None else out


def dalembert(x, t, speed: float = 1.0, length: float = 6.0):
    """Uniform-speed reference with fixed ends (odd periodic extension)."""
    def ext(s):
        s = np.mod(s, 2 * length)
        return np.where(s <= length, wave_initial(s), -wave_initial(2 * length - s))
    x = np.asarray(x, float)
    t = np.asarray(t, float)
    return 0.5 * (ext(x - speed * t) + ext(x + speed * t))


class Wave(PDEProblem):
    """u_tt = v(x)^2 u_xx on [0,6]^2; v = v1 left of x=4, v2 right; beta = (v1, v2).

    Inputs are (x, t).
    """

    name = "wave"

    def __init__(self, length: float = 6.0, t_max: float = 6.0, interface: float = 4.0,
                 beta_low=(0.5, 0.5), beta_high=(2.0, 2.0), depth: int = 3, width: int = 16,
                 oracle_dx: float = 0.005):
        self.length, self.t_max, self.interface = float(length), float(t_max), float(interface)
        self.box = np.array([[0.0, self.length], [0.0, self.t_max]])
        self.beta_space = BetaSpace.vector(beta_low, beta_high)
        self.u_arch = MLPArchitecture(2, 1, depth, width, "sin",
                                      input_box=tuple(map(tuple, self.box)))
        self.oracle_dx = oracle_dx

    def interior_residual(self, u, beta, X):
        X = np.asarray(X, dtype=np.float64)
        _, _, uxx = derivatives(u, X, 0, 2)
        _, _, utt = derivatives(u, X, 1, 2)
        left = (X[..., 0] < self.interface).astype(np.float64)
        v1, v2 = _coef(beta, 0), _coef(beta, 1)
        v2sq = ad.add(ad.mul(ad.mul(v1, v1), left), ad.mul(ad.mul(v2, v2), 1.0 - left))
        return ad.sub(utt, ad.mul(v2sq, uxx))

    def boundary_residual(self, u, beta, Xb):
        x0 = Xb["initial"]
        val, dt = derivatives(u, x0, 1, 1)
        ic = ad.sub(val, wave_initial(np.asarray(x0)[..., 0]))
        bc = _values(u, Xb["ends"])
        return ad.concat([ic, dt, bc], axis=-1)

    def sample_collocation(self, n_interior, n_boundary, seed):
        rng = np.random.default_rng(seed)
        Xp = rng.uniform(self.box[:, 0], self.box[:, 1], size=(n_interior, 2))
        n_ic = max(n_boundary // 2, 1)
        n_bc = max(n_boundary - n_ic, 1)
        ic = np.stack([rng.uniform(0, self.length, n_ic), np.zeros(n_ic)], axis=1)
        side = np.where(rng.random(n_bc) < 0.5, 0.0, self.length)
        ends = np.stack([side, rng.uniform(0, self.t_max, n_bc)], axis=1)
        return Xp, {"initial": ic, "ends": ends}

    def oracle(self, beta, X):
        X = self.check_domain(X)
        v1, v2 = (float(v) for v in np.asarray(beta))
        return wave_oracle(v1, v2, X[:, 0], X[:, 1], dx=self.oracle_dx)


# -- 2-D Eikonal with a network-valued speed ------------------------------------


def octile_distance(X, source=(0.0, 0.0)):
    d = np.abs(np.asarray(X, float) - np.asarray(source, float))
    lo, hi = np.min(d, axis=-1), np.max(d, axis=-1)
    return hi + (np.sqrt(2.0) - 1.0) * lo


@dataclass(frozen=True)
class TravelTimes:
    x: np.ndarray
    y: np.ndarray
    T: np.ndarray  # (nx, ny)

    def __call__(self, X) -> np.ndarray:
        return RegularGridInterpolator((self.x, self.y), self.T)(np.asarray(X, float))


def solve_eikonal(speed: Callable, size: float = 5.0, h: float = 0.05,
                  source=(0.0, 0.0)) -> TravelTimes:
    """Grid shortest paths for |grad T| = 1/v with T(source) = 0.

    ``speed`` maps points (n, 2) to positive speeds (n,).  Edges join the 8
    neighbours of each node with weight mean slowness times edge length.
    """
    n = int(round(size / h)) + 1
    g = np.linspace(0.0, size, n)
    XX, YY = np.meshgrid(g, g, indexing="ij")
    pts = np.stack([XX.ravel(), YY.ravel()], axis=1)
    v = np.asarray(speed(pts), dtype=np.float64).reshape(-1)
    if np.any(v <= 0) or not np.all(np.isfinite(v)):
        raise InvalidParameterError("speed must be positive and finite")
    slow = (1.0 / v).reshape(n, n)
    idx = np.arange(n * n).reshape(n, n)
    rows, cols, wts = [], [], []
    step = g[1] - g[0]
    for di, dj in ((1, 0), (0, 1), (1, 1), (1, -1)):
        i0 = slice(0, n - di)
        i1 = slice(di, n)
        j0 = slice(max(0, -dj), n - max(0, dj))
        j1 = slice(max(0, dj), n - max(0, -dj))
        length = step * np.hypot(di, dj)
        rows.append(idx[i0, j0].ravel())
        cols.append(idx[i1, j1].ravel())
        wts.append((0.5 * (slow[i0, j0] + slow[i1, j1]) * length).ravel())
    graph = coo_matrix((np.concatenate(wts), (np.concatenate(rows), np.concatenate(cols))),
                       shape=(n * n, n * n)).tocsr()
    si = int(round(source[0] / step)) * n + int(round(source[1] / step))
    T = dijkstra(graph, directed=False, indices=si)
    return TravelTimes(g, g, T.reshape(n, n))


def eikonal_oracle(speed: Callable, X, size: float = 5.0, h: float = 0.05,
                   source=(0.0, 0.0), decimals: int | None = 3) -> np.ndarray:
    X = _check_box(np.array([[0.0, size], [0.0, size]]), X)
    out = solve_eikonal(speed, size, h, source)(X)
    return np.round(out, decimals) if decimals is not None else out


class Eikonal(PDEProblem):
    """v(x)^2 |grad T|^2 = 1 on [0,5]^2 with T(x0) = 0 built into the network.

    beta is the flat parameter vector of a small speed network.
    """

    name = "eikonal"

    def __init__(self, size: float = 5.0, source=(0.0, 0.0), depth: int = 6, width: int = 8,
                 beta_depth: int = 1, beta_width: int = 16, speed_floor: float = 0.2,
                 test_grid: int = 20, oracle_h: float = 0.05):
        self.size = float(size)
        self.source = tuple(float(s) for s in source)
        self.box = np.array([[0.0, self.size], [0.0, self.size]])
        box = tuple(map(tuple, self.box))
        self.u_arch = MLPArchitecture(2, 1, depth, width, "tanh", "eikonal-time",
                                      anchor=self.source, input_box=box)
        beta_arch = MLPArchitecture(2, 1, beta_depth, beta_width, "sin", "abs-offset",
                                    offset=speed_floor, input_box=box)
        g = np.linspace(0.0, self.size, test_grid)
        grid = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1).reshape(-1, 2)
        self.beta_space = BetaSpace.function(beta_arch, grid)
        self.oracle_h = oracle_h

    def speed(self, beta, X):
        return self.beta_space.function_values(beta, X)

    def interior_residual(self, u, beta, X):
        _, tx = derivatives(u, X, 0, 1)
        _, ty = derivatives(u, X, 1, 1)
        v = self.speed(beta, np.asarray(X, dtype=np.float64))
        grad2 = ad.add(ad.mul(tx, tx), ad.mul(ty, ty))
        return ad.sub(ad.mul(ad.mul(v, v), grad2), 1.0)

    def boundary_residual(self, u, beta, Xb):
        return _values(u, Xb["source"])

    def sample_collocation(self, n_interior, n_boundary, seed):
        Xp = self.uniform_points(n_interior, seed)
        return Xp, {"source": np.array([self.source])}

    def oracle(self, beta, X):
        X = self.check_domain(X)
        b = np.asarray(beta, dtype=np.float64)
        return eikonal_oracle(lambda P: np.asarray(ad.value_of(self.speed(b, P))), X,
                              self.size, self.oracle_h, self.source)


PROBLEMS = {"oscillator": Oscillator, "wave": Wave, "eikonal": Eikonal}


def make_problem(name: str, **overrides) -> PDEProblem:
    try:
        cls = PROBLEMS[name]
    except KeyError:
        raise InvalidParameterError(f"unknown problem {name!r}") from None
    return cls(**overrides)


def sample_beta(space: BetaSpace, seed) -> np.ndarray:
    return space.sample(seed)
