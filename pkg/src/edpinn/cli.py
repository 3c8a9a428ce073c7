"""Command-line pipeline: meta-init, forward ensemble, design, evaluation.

Every run resolves one configuration (defaults, then the YAML file, then
flags), hashes it, and writes all artifacts under ``<out>/<hash>/``.  Stages
reuse artifacts already present in that directory, so ``design`` after
``meta-init`` does not retrain the shared initialisation.
"""
from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import io
import json
import sys
from pathlib import Path

import numpy as np
import yaml

from . import criteria, edloop, harness, metainit, network
from .design import DesignSpace
from .errors import ConfigError, EDError, StageError
from .pde import make_problem
from .pinn import TrainConfig, train_forward_batch
from .seeding import derive_seed

SUBCOMMANDS = ("meta-init", "forward", "design", "evaluate", "all")
METHODS = ("fist", "mote", "tip", "mi", "random", "grid")

BASE_CONFIG = {
    "problem": "oscillator",
    "seed": 0,
    "threads": 8,
    "instances": 10,
    "noise_var": 1e-3,
    "methods": ["fist", "mote", "random", "grid"],
    "design": {},
    "meta": {"rounds": 20, "tasks": 4, "steps": 500, "lr": None, "interpolation": 1.0},
    "train": {},
    "criterion": {"inner_lr": None, "inner_optimizer": "gd", "jitter": 1e-6, "noise_var": 0.0,
                  "tip_exact_max_dim": 4, "mi_test_points": 50},
    "optimizer": {"restarts": 8, "steps": 100, "lr": None, "step_rule": "gradient"},
}

# per-problem defaults: architectures live in the problem classes; training
# budgets are scaled-down versions of the reference runs
PROBLEM_DEFAULTS = {
    "oscillator": {
        "design": {"kind": "free", "n_points": 3},
        "train": {"steps": 3000, "lr": 0.01, "n_interior": 300, "n_boundary": 1},
        "criterion": {"perturb_var": 0.5, "fist_steps": 50, "mote_steps": None},
    },
    "wave": {
        "design": {"kind": "time-grid", "n_sensors": 3, "time_step": 0.2},
        "train": {"steps": 2000, "lr": 0.001, "n_interior": 1500, "n_boundary": 200},
        "criterion": {"perturb_var": 0.5, "fist_steps": 200, "mote_steps": 0},
    },
    "eikonal": {
        "design": {"kind": "free", "n_points": 30},
        "train": {"steps": 3000, "lr": 0.001, "n_interior": 1000, "n_boundary": 1},
        "criterion": {"perturb_var": 0.01, "fist_steps": 200, "mote_steps": 0},
    },
}

DESIGN_KEYS = {"kind", "n_points", "n_sensors", "time_step"}
TRAIN_KEYS = {"steps", "lr", "lr_final", "n_interior", "n_boundary"}
CRITERION_KEYS = {"perturb_var", "fist_steps", "mote_steps", "inner_lr", "inner_optimizer",
                  "jitter", "noise_var", "tip_exact_max_dim", "mi_test_points"}


# ---------------------------------------------------------------------------
# configuration


def _merge(base: dict, over: dict, prefix: str, unknown: list) -> dict:
    out = copy.deepcopy(base)
    for key, val in over.items():
        name = f"{prefix}{key}"
        if key not in base:
            unknown.append(name)
        elif isinstance(base[key], dict):
            if not isinstance(val, dict):
                unknown.append(name)
            else:
                out[key] = _merge(base[key], val, name + ".", unknown)
        else:
            out[key] = val
    return out


def default_config(problem: str) -> dict:
    if problem not in PROBLEM_DEFAULTS:
        raise ConfigError(["problem"], f"unknown problem {problem!r}")
    cfg = copy.deepcopy(BASE_CONFIG)
    cfg["problem"] = problem
    for section, values in PROBLEM_DEFAULTS[problem].items():
        cfg[section] = {**cfg[section], **values}
    return cfg


def resolve_config(user: dict | None = None, **flags) -> dict:
    """Defaults for the chosen problem, overridden by ``user`` then by flags."""
    user = dict(user or {})
    if not isinstance(user, dict):
        raise ConfigError(["<root>"], "config must be a mapping")
    problem = flags.get("problem") or user.get("problem", BASE_CONFIG["problem"])
    base = default_config(problem)
    allowed = {"design": DESIGN_KEYS, "train": TRAIN_KEYS, "criterion": CRITERION_KEYS}
    for section, keys in allowed.items():
        base[section] = {k: base[section].get(k) for k in sorted(keys)}
    unknown: list = []
    cfg = _merge(base, user, "", unknown)
    if unknown:
        raise ConfigError(unknown, "unrecognised keys")
    for key, val in flags.items():
        if val is not None:
            cfg[key] = val
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict) -> None:
    bad = []

    def check(path, ok):
        if not ok:
            bad.append(path)

    def is_int(v, lo=0):
        return isinstance(v, int) and not isinstance(v, bool) and v >= lo

    def is_num(v, lo=0.0, strict=False):
        return (isinstance(v, (int, float)) and not isinstance(v, bool)
                and (v > lo if strict else v >= lo))

    check("problem", cfg["problem"] in PROBLEM_DEFAULTS)
    check("seed", is_int(cfg["seed"]))
    check("threads", is_int(cfg["threads"], 1))
    check("instances", is_int(cfg["instances"], 1))
    check("noise_var", is_num(cfg["noise_var"]))
    methods = cfg["methods"]
    check("methods", isinstance(methods, list) and methods and all(m in METHODS for m in methods))
    d = cfg["design"]
    check("design.kind", d.get("kind") in ("free", "time-grid", "grid-1d"))
    if d.get("kind") == "time-grid":
        check("design.n_sensors", is_int(d.get("n_sensors"), 1))
        check("design.time_step", is_num(d.get("time_step"), strict=True))
    else:
        check("design.n_points", is_int(d.get("n_points"), 2 if d.get("kind") == "grid-1d" else 1))
    m = cfg["meta"]
    check("meta.rounds", is_int(m["rounds"]))
    check("meta.tasks", is_int(m["tasks"], 1))
    check("meta.steps", is_int(m["steps"]))
    check("meta.lr", m["lr"] is None or is_num(m["lr"], strict=True))
    check("meta.interpolation", is_num(m["interpolation"], strict=True) and m["interpolation"] <= 1)
    t = cfg["train"]
    check("train.steps", is_int(t["steps"]))
    check("train.lr", is_num(t["lr"], strict=True))
    check("train.lr_final", t["lr_final"] is None or is_num(t["lr_final"], strict=True))
    check("train.n_interior", is_int(t["n_interior"], 1))
    check("train.n_boundary", is_int(t["n_boundary"], 1))
    c = cfg["criterion"]
    check("criterion.perturb_var", is_num(c["perturb_var"]))
    check("criterion.fist_steps", is_int(c["fist_steps"]))
    check("criterion.mote_steps", c["mote_steps"] is None or is_int(c["mote_steps"]))
    check("criterion.inner_lr", c["inner_lr"] is None or is_num(c["inner_lr"], strict=True))
    check("criterion.inner_optimizer", c["inner_optimizer"] in ("gd", "adam"))
    check("criterion.jitter", is_num(c["jitter"], strict=True))
    check("criterion.noise_var", is_num(c["noise_var"]))
    check("criterion.tip_exact_max_dim", is_int(c["tip_exact_max_dim"]))
    check("criterion.mi_test_points", is_int(c["mi_test_points"], 1))
    o = cfg["optimizer"]
    check("optimizer.restarts", is_int(o["restarts"], 1))
    check("optimizer.steps", is_int(o["steps"]))
    check("optimizer.lr", o["lr"] is None or is_num(o["lr"], strict=True))
    check("optimizer.step_rule", o["step_rule"] in edloop.STEP_RULES)
    if bad:
        raise ConfigError(bad, "invalid values")


def config_hash(cfg: dict) -> str:
    """Short digest of the canonical JSON form; equal configs give equal hashes."""
    canon = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=float)
    return hashlib.sha256(canon.encode()).hexdigest()[:12]


def load_config_file(path) -> dict:
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(["--config"], str(exc)) from None
    except yaml.YAMLError as exc:
        raise ConfigError(["<yaml>"], str(exc).splitlines()[0]) from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(["<root>"], "config must be a mapping")
    return data


# ---------------------------------------------------------------------------
# pipeline


class Pipeline:
    """One resolved configuration and its artifact directory."""

    def __init__(self, cfg: dict, out_root):
        self.cfg = cfg
        self.hash = config_hash(cfg)
        self.dir = Path(out_root) / self.hash
        self.dir.mkdir(parents=True, exist_ok=True)
        self.seed = cfg["seed"]
        self.problem = make_problem(cfg["problem"])
        self.space = self._design_space()
        t = cfg["train"]
        self.train_cfg = TrainConfig(steps=t["steps"], lr=t["lr"], lr_final=t["lr_final"],
                                     n_interior=t["n_interior"], n_boundary=t["n_boundary"],
                                     seed=derive_seed(self.seed, "collocation"))
        (self.dir / "config.yaml").write_text(yaml.safe_dump(cfg, sort_keys=True))

    def _design_space(self) -> DesignSpace:
        d, box = self.cfg["design"], self.problem.box
        if d["kind"] == "free":
            return DesignSpace.free(d["n_points"], box)
        if d["kind"] == "grid-1d":
            return DesignSpace.grid_1d(d["n_points"], box[0])
        lo, hi = box[-1]
        n = int(round((hi - lo) / d["time_step"])) + 1
        return DesignSpace.time_grid(d["n_sensors"], box[0], np.linspace(lo, hi, n))

    def header(self) -> str:
        return f"# config_hash={self.hash} seed={self.seed}\n"

    def write(self, name: str, text: str) -> Path:
        path = self.dir / name
        path.write_text(text)
        return path

    # -- stages -------------------------------------------------------------
    def meta_init(self) -> np.ndarray:
        path = self.dir / "theta_si.bin"
        if path.exists():
            return np.array(network.load(path).values)
        m = self.cfg["meta"]
        inner = self.train_cfg.with_(steps=m["steps"], lr=m["lr"] or self.train_cfg.lr)
        theta = metainit.reptile(self.problem, m["rounds"], m["tasks"], inner,
                                 derive_seed(self.seed, "meta"), m["interpolation"])
        network.save(network.ParamVector(theta, self.problem.u_arch), path)
        return theta

    def forward(self) -> criteria.ForwardEnsemble:
        theta_si = self.meta_init()
        n = self.cfg["threads"]
        fdir = self.dir / "forward"
        paths = [fdir / f"thread_{i:03d}.bin" for i in range(n)]
        betas_path = fdir / "betas.csv"
        if betas_path.exists() and all(p.exists() for p in paths):
            thetas = np.stack([network.load(p).values for p in paths])
            betas = np.loadtxt(betas_path, delimiter=",", comments="#", skiprows=2, ndmin=2)[:, 1:]
            return criteria.ForwardEnsemble(betas, thetas, theta_si)
        betas = self.problem.beta_space.sample_many(
            [derive_seed(self.seed, "forward", i) for i in range(n)])
        res = train_forward_batch(self.problem, betas, theta_si, self.train_cfg)
        bad = np.flatnonzero(res.diverged_at >= 0)
        if bad.size:
            from .errors import TrainingDivergedError
            raise TrainingDivergedError(int(res.diverged_at[bad[0]]), f"forward thread {bad[0]}")
        fdir.mkdir(exist_ok=True)
        for p, th in zip(paths, res.theta):
            network.save(network.ParamVector(th, self.problem.u_arch), p)
        buf = io.StringIO()
        buf.write(self.header())
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["thread"] + [f"beta_{j}" for j in range(betas.shape[1])])
        for i, b in enumerate(betas):
            w.writerow([i] + [repr(float(v)) for v in b])
        betas_path.write_text(buf.getvalue())
        return criteria.ForwardEnsemble(betas, res.theta, theta_si)

    def criterion_context(self, ensemble) -> criteria.CriterionContext:
        c = dict(self.cfg["criterion"])
        c["inner_lr"] = c["inner_lr"] or self.train_cfg.lr
        ccfg = criteria.CriterionConfig(seed=derive_seed(self.seed, "criterion"), **c)
        return criteria.CriterionContext(self.problem, ensemble, self.space, ccfg, self.train_cfg)

    def design(self, method: str) -> edloop.EDResult:
        path = self.dir / f"design_{method}.csv"
        if path.exists():
            return read_design_csv(path)
        o = self.cfg["optimizer"]
        dseed = derive_seed(self.seed, "design", method)
        if method == "random":
            gamma = edloop.baseline_random(self.space, dseed)
            result = edloop.EDResult(gamma, float("nan"), config_hash=self.hash)
        elif method == "grid":
            result = edloop.EDResult(edloop.baseline_grid(self.space), float("nan"),
                                     config_hash=self.hash)
        else:
            ctx = self.criterion_context(self.forward())
            if method == "mi":
                def scores(g):
                    return np.array([criteria.mi_criterion(ctx, g)])
            else:
                fn = criteria.DIFFERENTIABLE[method]

                def scores(g):
                    return fn(ctx, g)
            result = edloop.optimize_design(self.space, scores, o["restarts"], o["steps"], o["lr"],
                                            dseed, method != "mi", self.hash, o["step_rule"])
        self.write(path.name, design_csv(result, method, self.header()))
        return result

    def evaluate(self, methods) -> list[harness.RunReport]:
        theta_si = self.meta_init()
        gammas = [self.design(m).gamma for m in methods]
        reports = harness.evaluate_designs(
            self.problem, self.space, gammas, self.cfg["instances"], theta_si, self.train_cfg,
            derive_seed(self.seed, "evaluate"), self.cfg["noise_var"], methods, self.hash)
        self.write("evaluate.csv", harness.report_csv(reports, self.header()))
        return reports


def design_csv(result: edloop.EDResult, method: str, header: str) -> str:
    buf = io.StringIO()
    buf.write(header)
    w = csv.writer(buf, lineterminator="\n")
    dim = result.gamma.size
    w.writerow(["method", "row", "restart", "step", "score"] + [f"gamma_{j}" for j in range(dim)])
    w.writerow([method, "best", "", "", repr(float(result.score))]
               + [repr(float(v)) for v in result.gamma])
    for k, (gammas, scores) in enumerate(result.traces):
        for j, (g, s) in enumerate(zip(gammas, scores)):
            w.writerow([method, "trace", k, j, repr(float(s))] + [repr(float(v)) for v in g])
    return buf.getvalue()


def read_design_csv(path) -> edloop.EDResult:
    with open(path) as fh:
        rows = [r for r in csv.reader(line for line in fh if not line.startswith("#"))]
    best = next(r for r in rows[1:] if r[1] == "best")
    return edloop.EDResult(np.array([float(v) for v in best[5:]]), float(best[4]))


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--out", default="runs", help="output root directory")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--method", help="criterion or baseline; comma-separated for evaluate/all")
    common.add_argument("--problem", choices=sorted(PROBLEM_DEFAULTS))
    common.add_argument("--threads-n", type=int, dest="threads", help="forward ensemble size")
    common.add_argument("--instances", type=int, help="inverse-problem instances per design")
    parser = argparse.ArgumentParser(prog="edpinn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def run(args) -> dict:
    user = load_config_file(args.config) if args.config else {}
    methods = None
    if args.method:
        methods = [m.strip() for m in args.method.split(",") if m.strip()]
    cfg = resolve_config(user, problem=args.problem, seed=args.seed, threads=args.threads,
                         instances=args.instances, methods=methods)
    pipe = Pipeline(cfg, args.out)
    stage = args.command
    try:
        if stage == "meta-init":
            pipe.meta_init()
        elif stage == "forward":
            pipe.forward()
        elif stage == "design":
            for m in cfg["methods"]:
                stage = f"design:{m}"
                pipe.design(m)
        else:
            if stage == "all":
                stage = "meta-init"
                pipe.meta_init()
                stage = "forward"
                pipe.forward()
                for m in cfg["methods"]:
                    stage = f"design:{m}"
                    pipe.design(m)
            stage = "evaluate"
            pipe.evaluate(cfg["methods"])
    except EDError as exc:
        raise StageError(stage, exc) from exc
    return {"dir": str(pipe.dir), "hash": pipe.hash}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        info = run(args)
    except EDError as exc:
        print(f"edpinn: error: {exc}", file=sys.stderr)
        return getattr(exc, "exit_code", 1)
    print(info["dir"])
    return 0


if __name__ == "__main__":
    sys.exit(main())
