"""Inverse-problem evaluation of a fixed design.

For each instance a ground-truth parameter is drawn from the prior, the
reference solver produces noisy readings at the design's observation inputs,
and an inverse PINN started from the shared initialisation estimates the
parameter.  Reports summarise the per-instance errors by median and
semi-interquartile range.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .design import DesignSpace
from .errors import InvalidParameterError
from .pde import PDEProblem
from .pinn import TrainConfig, train_inverse_batch
from .seeding import derive_seed


@dataclass(frozen=True, eq=False)
class IPInstance:
    beta: np.ndarray
    noise_var: float
    seed: int


@dataclass
class RunReport:
    method: str
    gamma: np.ndarray
    errors: np.ndarray
    diverged: np.ndarray
    instances: list = field(default_factory=list)
    config_hash: str = ""

    @property
    def median(self) -> float:
        return float(np.median(self.errors))

    @property
    def siqr(self) -> float:
        return siqr(self.errors)

    def trimmed(self, fraction: float = 0.1) -> "RunReport":
        """Copy without the top and bottom ``fraction`` of errors."""
        order = np.argsort(self.errors, kind="stable")
        k = int(np.floor(fraction * len(order)))
        keep = np.sort(order[k:len(order) - k])
        return RunReport(self.method, self.gamma, self.errors[keep], self.diverged[keep],
                         [self.instances[i] for i in keep], self.config_hash)


def siqr(errors) -> float:
    """Half the distance between the linearly interpolated quartiles."""
    q1, q3 = np.percentile(np.asarray(errors, dtype=np.float64), [25, 75], method="linear")
    return float((q3 - q1) / 2.0)


def make_instances(problem: PDEProblem, n: int, noise_var: float, seed) -> list[IPInstance]:
    if n < 1:
        raise InvalidParameterError("need at least one instance")
    out = []
    for j in range(n):
        s = derive_seed(seed, "instance", j)
        out.append(IPInstance(problem.beta_space.sample(derive_seed(s, "beta")), noise_var, s))
    return out


def observations_for(problem: PDEProblem, X: np.ndarray, inst: IPInstance) -> np.ndarray:
    clean = problem.oracle(inst.beta, X)
    if inst.noise_var == 0:
        return clean
    rng = np.random.default_rng(derive_seed(inst.seed, "noise"))
    return clean + rng.normal(0.0, np.sqrt(inst.noise_var), size=clean.shape)


def solve_instances(problem: PDEProblem, X, instances, theta_si, cfg: TrainConfig):
    """Estimated parameters (n, dim) and per-instance divergence flags."""
    X = problem.check_domain(X)
    Y = np.stack([observations_for(problem, X, inst) for inst in instances])
    res = train_inverse_batch(problem, X, Y, theta_si, problem.beta_space.center(), cfg)
    return res.beta, res.diverged_at >= 0


def instance_errors(problem: PDEProblem, beta_hat, instances, diverged) -> np.ndarray:
    truth = np.stack([inst.beta for inst in instances])
    err = np.asarray(problem.beta_space.error(beta_hat, truth), dtype=np.float64)
    return np.where(diverged, np.inf, err)


def run_ip_instance(problem: PDEProblem, space: DesignSpace, gamma, instance: IPInstance,
                    theta_si, cfg: TrainConfig) -> float:
    X = np.asarray(space.realize(np.asarray(gamma, dtype=np.float64)))
    beta_hat, div = solve_instances(problem, X, [instance], theta_si, cfg)
    return float(instance_errors(problem, beta_hat, [instance], div)[0])


def evaluate_design(problem: PDEProblem, space: DesignSpace, gamma, n: int, theta_si,
                    cfg: TrainConfig, seed, noise_var: float, method: str = "",
                    config_hash: str = "") -> RunReport:
    """All instances are solved together as one batch of independent networks."""
    gamma = np.asarray(gamma, dtype=np.float64)
    X = np.asarray(space.realize(gamma))
    instances = make_instances(problem, n, noise_var, seed)
    beta_hat, div = solve_instances(problem, X, instances, theta_si, cfg)
    errors = instance_errors(problem, beta_hat, instances, div)
    return RunReport(method, gamma, errors, div, instances, config_hash)


def evaluate_designs(problem: PDEProblem, space: DesignSpace, gammas, n: int, theta_si,
                     cfg: TrainConfig, seed, noise_var: float, methods=None,
                     config_hash: str = "") -> list[RunReport]:
    """Several designs on the same instances, trained together as one batch.

    Mathematically the same as calling :func:`evaluate_design` once per
    design; the stacked batch can change results at the level of float
    rounding, which training then amplifies slightly.
    """
    gammas = [np.asarray(g, dtype=np.float64) for g in gammas]
    methods = list(methods) if methods is not None else [""] * len(gammas)
    instances = make_instances(problem, n, noise_var, seed)
    Xs = [problem.check_domain(np.asarray(space.realize(g))) for g in gammas]
    X = np.concatenate([np.broadcast_to(x, (n,) + x.shape) for x in Xs])
    Y = np.concatenate([np.stack([observations_for(problem, x, inst) for inst in instances])
                        for x in Xs])
    res = train_inverse_batch(problem, X, Y, theta_si, problem.beta_space.center(), cfg)
    reports = []
    for k, (g, m) in enumerate(zip(gammas, methods)):
        sl = slice(k * n, (k + 1) * n)
        div = res.diverged_at[sl] >= 0
        errors = instance_errors(problem, res.beta[sl], instances, div)
        reports.append(RunReport(m, g, errors, div, instances, config_hash))
    return reports


def report_csv(reports, header: str = "") -> str:
    """Per-instance rows and a summary row per method."""
    buf = io.StringIO()
    if header:
        buf.write(header if header.endswith("\n") else header + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "row", "instance_seed", "beta", "error", "diverged", "median", "siqr", "n"])
    for rep in reports:
        for inst, err, dv in zip(rep.instances, rep.errors, rep.diverged):
            beta = " ".join(f"{v:.10g}" for v in np.ravel(inst.beta)[:8])
            w.writerow([rep.method, "instance", inst.seed, beta, f"{err:.10g}", int(dv), "", "", ""])
        w.writerow([rep.method, "summary", "", "", "", int(rep.diverged.sum()),
                    f"{rep.median:.10g}", f"{rep.siqr:.10g}", len(rep.errors)])
    return buf.getvalue()
