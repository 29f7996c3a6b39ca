"""Configuration-driven CT reconstruction experiments.

A configuration is an INI file with three sections::

    [experiment]
    scenario = low_dose          ; low_dose | sparse_view | custom
    solvers = stochastic_pnp_admm, pnp_sgd, pnp_fista
    seeds = 0, 1, 2
    datapasses = 30
    output_dir = runs/low_dose

    [schedule]
    tau = 1
    inner_iters = 10
    momentum = fista

    [denoiser]
    kind = nlm
    gamma = 1
    gamma.pnp_sgd = 4            ; per-solver override

Keys that are left out take the preset values in :data:`PRESETS` and
:data:`DEFAULTS`.  :func:`run_experiment` writes a run directory::

    manifest.json
    ground_truth.pgm / ground_truth.txt
    observation.csv
    <solver>/seed_<s>.csv           metric history
    <solver>/recon_seed_<s>.pgm/.txt

and :func:`compare_report` aligns the metric histories of several run
directories on common axes.
"""

from __future__ import annotations

import configparser
import csv
import dataclasses
import functools
import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ct import CtGeometry, build_radon, partition_by_angle, poisson_observe, shepp_logan
from .denoisers import estimate_beta, make_denoiser
from .diagnostics import estimate_theorem1_bounds
from .fidelity import least_squares, pwls
from .files import write_image, write_observation_csv
from .operators import sampler_rng
from .schedules import Schedule, ScheduleError, make_theorem1_schedule
from .solvers import (METRIC_COLUMNS, DivergenceError, ProxError, run_pnp_admm, run_pnp_fista,
                      run_pnp_sgd, run_stochastic_pnp_admm)

__all__ = [
    "ConfigError",
    "GridSearchError",
    "ReportError",
    "ExperimentConfig",
    "Problem",
    "RunResult",
    "PRESETS",
    "DEFAULTS",
    "SOLVERS",
    "OUTPUT_ROOT_ENV",
    "build_problem",
    "run_solver",
    "run_experiment",
    "grid_search_gamma",
    "compare_report",
    "load_history",
]

SOLVERS = ("pnp_fista", "pnp_sgd", "pnp_admm", "stochastic_pnp_admm")
OUTPUT_ROOT_ENV = "STOCHPNP_OUTPUT_ROOT"

# scenario invariants: keys listed here are fixed by the scenario
PRESETS = {
    "low_dose": {"width": 64, "num_angles": 180, "num_detectors": 91,
                 "I0": 1e3, "fidelity": "pwls"},
    "sparse_view": {"width": 128, "num_angles": 45, "num_detectors": 181,
                    "I0": 1e4, "fidelity": "least_squares"},
    "custom": {},
}
_FIXED = {"low_dose": ("I0", "fidelity"), "sparse_view": ("I0", "fidelity"), "custom": ()}

DEFAULTS = {
    "experiment": {
        "width": 32, "height": None, "num_angles": 32, "num_detectors": None,
        "I0": 1e4, "fidelity": "least_squares", "ridge_eps": 0.0, "K": 10,
        "partition": "strided", "attenuation_scale": None, "lipschitz_target": 100.0,
        "noise_seed": 0, "solvers": ("stochastic_pnp_admm",), "seeds": (0,),
        "datapasses": 30, "outer_iters": None, "tol": None, "output_dir": "runs",
        "record_wall_time": True, "sampling": "with_replacement",
    },
    "schedule": {
        "tau": 1.0, "rule": "constant", "inner_iters": 10, "eta": None,
        "momentum": "fista", "sigma_safety": 4.0, "prox_tol": 1e-10,
        "sgd_eta": None, "sgd_momentum": "fista", "fista_eta": None,
    },
    "denoiser": {
        "kind": "nlm", "gamma": 1.0, "beta": None,
        "params": {"patch_radius": 1, "window_radius": 4, "h": 0.1},
    },
}

_INT = {"width", "height", "num_angles", "num_detectors", "K", "noise_seed", "datapasses",
        "outer_iters", "inner_iters"}
_FLOAT = {"I0", "ridge_eps", "attenuation_scale", "lipschitz_target", "tol", "tau", "eta",
          "sigma_safety", "prox_tol", "sgd_eta", "fista_eta", "gamma", "beta"}
_BOOL = {"record_wall_time"}
_LIST = {"solvers": str, "seeds": int}
_NULL = {"", "auto", "none"}


class ConfigError(ValueError):
    """Invalid configuration; ``problems`` lists every violated constraint."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n  - " + "\n  - ".join(self.problems))


class GridSearchError(RuntimeError):
    def __init__(self, message, table):
        super().__init__(message)
        self.table = table


class ReportError(RuntimeError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    """Resolved experiment parameters (see the module docstring for the file format)."""

    scenario: str = "custom"
    width: int = 32
    height: int | None = None
    num_angles: int = 32
    num_detectors: int | None = None
    I0: float = 1e4
    fidelity: str = "least_squares"
    ridge_eps: float = 0.0
    K: int = 10
    partition: str = "strided"
    attenuation_scale: float | None = None
    lipschitz_target: float | None = 100.0
    noise_seed: int = 0
    solvers: tuple = ("stochastic_pnp_admm",)
    seeds: tuple = (0,)
    datapasses: int = 30
    outer_iters: int | None = None
    tol: float | None = None
    output_dir: str = "runs"
    record_wall_time: bool = True
    sampling: str = "with_replacement"
    tau: float = 1.0
    rule: str = "constant"
    inner_iters: int = 10
    eta: float | None = None
    momentum: str = "fista"
    sigma_safety: float = 4.0
    prox_tol: float = 1e-10
    sgd_eta: float | None = None
    sgd_momentum: str = "fista"
    fista_eta: float | None = None
    denoiser: str = "nlm"
    denoiser_params: dict = field(default_factory=dict)
    gamma: float = 1.0
    gamma_overrides: dict = field(default_factory=dict)
    beta: float | None = None

    # -- construction -----------------------------------------------------------

    @classmethod
    def preset(cls, scenario, **overrides):
        """Configuration for a named scenario with keyword overrides."""
        if scenario not in PRESETS:
            raise ConfigError([f"unknown scenario {scenario!r}; expected one of {sorted(PRESETS)}"])
        values = {**DEFAULTS["experiment"], **DEFAULTS["schedule"]}
        values.update(PRESETS[scenario])
        values["denoiser"] = DEFAULTS["denoiser"]["kind"]
        values["denoiser_params"] = dict(DEFAULTS["denoiser"]["params"])
        values["gamma"] = DEFAULTS["denoiser"]["gamma"]
        values["beta"] = DEFAULTS["denoiser"]["beta"]
        values.update(overrides)
        if isinstance(values["solvers"], str):
            values["solvers"] = (values["solvers"],)
        values["solvers"] = tuple(values["solvers"])
        values["seeds"] = tuple(int(s) for s in values["seeds"])
        cfg = cls(scenario=scenario, **values)
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path):
        parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
        parser.optionxform = str
        with open(path) as fh:
            parser.read_file(fh)
        return cls.from_sections({s: dict(parser[s]) for s in parser.sections()})

    @classmethod
    def from_sections(cls, sections):
        """Build from ``{section: {key: string}}``, collecting every parse error."""
        problems = []
        known = {"experiment", "schedule", "denoiser"}
        for s in sections:
            if s not in known:
                problems.append(f"unknown section [{s}]")
        exp = dict(sections.get("experiment", {}))
        sch = dict(sections.get("schedule", {}))
        den = dict(sections.get("denoiser", {}))
        scenario = exp.pop("scenario", "custom").strip()
        overrides = {}
        for section, raw, allowed in (("experiment", exp, DEFAULTS["experiment"]),
                                      ("schedule", sch, DEFAULTS["schedule"])):
            for key, text in raw.items():
                if key not in allowed:
                    problems.append(f"[{section}] unknown key {key!r}")
                    continue
                try:
                    overrides[key] = _parse_value(key, text)
                except ValueError as exc:
                    problems.append(f"[{section}] {key}: {exc}")
        params = dict(DEFAULTS["denoiser"]["params"])
        gamma_overrides = {}
        if "kind" in den:
            overrides["denoiser"] = den.pop("kind").strip()
            if overrides["denoiser"] != DEFAULTS["denoiser"]["kind"]:
                params = {}
        for key, text in den.items():
            try:
                if key.startswith("gamma."):
                    gamma_overrides[key[len("gamma."):]] = float(text)
                elif key in ("gamma", "beta"):
                    overrides[key] = _parse_value(key, text)
                else:
                    params[key] = _number(text)
            except ValueError as exc:
                problems.append(f"[denoiser] {key}: {exc}")
        overrides["denoiser_params"] = params
        overrides["gamma_overrides"] = gamma_overrides
        if problems:
            raise ConfigError(problems)
        return cls.preset(scenario, **overrides)

    def replace(self, **changes):
        cfg = dataclasses.replace(self, **changes)
        cfg.validate()
        return cfg

    # -- validation ---------------------------------------------------------------

    def validate(self):
        p = []
        for key in _FIXED.get(self.scenario, ()):
            want = PRESETS[self.scenario][key]
            if getattr(self, key) != want:
                p.append(f"scenario {self.scenario} requires {key} = {want!r}, "
                         f"got {getattr(self, key)!r}")
        if self.width < 8 or (self.height is not None and self.height < 8):
            p.append("image width and height must be >= 8")
        if self.num_angles < 1:
            p.append("num_angles must be >= 1")
        if self.num_detectors is not None and self.num_detectors < 1:
            p.append("num_detectors must be >= 1")
        if not self.I0 > 0:
            p.append("I0 must be positive")
        if self.fidelity not in ("least_squares", "pwls"):
            p.append(f"fidelity must be least_squares or pwls, got {self.fidelity!r}")
        if self.ridge_eps < 0:
            p.append("ridge_eps must be >= 0")
        if not 1 <= self.K <= self.num_angles:
            p.append(f"K must lie in [1, num_angles={self.num_angles}] (minibatches are "
                     f"groups of views), got {self.K}")
        if self.partition not in ("contiguous", "strided", "shuffled"):
            p.append(f"unknown partition strategy {self.partition!r}")
        if self.attenuation_scale is not None and not self.attenuation_scale > 0:
            p.append("attenuation_scale must be positive")
        if self.lipschitz_target is not None and not self.lipschitz_target > 0:
            p.append("lipschitz_target must be positive")
        if not self.solvers:
            p.append("at least one solver is required")
        for s in self.solvers:
            if s not in SOLVERS:
                p.append(f"unknown solver {s!r}; expected one of {list(SOLVERS)}")
        if not self.seeds:
            p.append("at least one seed is required")
        if self.datapasses < 1:
            p.append("datapasses must be >= 1")
        if self.outer_iters is not None and self.outer_iters < 1:
            p.append("outer_iters must be >= 1")
        if self.sampling not in ("with_replacement", "without_replacement"):
            p.append(f"unknown sampling {self.sampling!r}")
        if not self.tau > 0:
            p.append("tau must be positive")
        if self.rule not in ("constant", "theorem1"):
            p.append(f"schedule rule must be constant or theorem1, got {self.rule!r}")
        if self.inner_iters < 1:
            p.append("inner_iters must be >= 1")
        for key in ("eta", "sgd_eta", "fista_eta"):
            v = getattr(self, key)
            if v is not None and v < 0:
                p.append(f"{key} must be >= 0")
        for key in ("momentum", "sgd_momentum"):
            if getattr(self, key) not in ("zero", "fista"):
                p.append(f"{key} must be zero or fista")
        if self.rule == "theorem1":
            if "stochastic_pnp_admm" not in self.solvers:
                p.append("rule = theorem1 only applies to stochastic_pnp_admm")
            if self.beta is None and self.denoiser not in ("identity", "blend", "gaussian", "box"):
                p.append("theorem1 schedules need a known beta: use an analytic-beta "
                         "denoiser or set [denoiser] beta")
        if self.sigma_safety < 1:
            p.append("sigma_safety must be >= 1")
        if not self.prox_tol > 0:
            p.append("prox_tol must be positive")
        for name, g in [("gamma", self.gamma)] + [(f"gamma.{k}", v)
                                                  for k, v in self.gamma_overrides.items()]:
            if not g > 0:
                p.append(f"{name} must be positive")
        for k in self.gamma_overrides:
            if k not in SOLVERS:
                p.append(f"gamma override for unknown solver {k!r}")
        if self.beta is not None and not 0 <= self.beta:
            p.append("beta must be >= 0")
        try:
            make_denoiser(self.denoiser, 8, 8, 1.0, **self.denoiser_params)
        except (ValueError, TypeError, ZeroDivisionError) as exc:
            p.append(f"denoiser: {exc}")
        if p:
            raise ConfigError(p)

    # -- derived values -----------------------------------------------------------

    @property
    def image_height(self):
        return self.width if self.height is None else self.height

    @property
    def detectors(self):
        if self.num_detectors is not None:
            return self.num_detectors
        return math.ceil(math.sqrt(2.0) * max(self.width, self.image_height))

    @property
    def attenuation(self):
        return 10.0 / self.width if self.attenuation_scale is None else self.attenuation_scale

    def gamma_for(self, solver):
        return float(self.gamma_overrides.get(solver, self.gamma))

    def resolve_output_dir(self):
        out = Path(self.output_dir)
        root = os.environ.get(OUTPUT_ROOT_ENV)
        if root and not out.is_absolute():
            out = Path(root) / out
        return out

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["solvers"] = list(self.solvers)
        d["seeds"] = list(self.seeds)
        return d

    def to_ini(self):
        """Round-trippable INI text."""
        exp_keys = list(DEFAULTS["experiment"])
        sch_keys = list(DEFAULTS["schedule"])
        lines = ["[experiment]", f"scenario = {self.scenario}"]
        for k in exp_keys:
            lines.append(f"{k} = {_format_value(getattr(self, k))}")
        lines.append("")
        lines.append("[schedule]")
        for k in sch_keys:
            lines.append(f"{k} = {_format_value(getattr(self, k))}")
        lines += ["", "[denoiser]", f"kind = {self.denoiser}",
                  f"gamma = {_format_value(self.gamma)}", f"beta = {_format_value(self.beta)}"]
        for k, v in self.gamma_overrides.items():
            lines.append(f"gamma.{k} = {_format_value(v)}")
        for k, v in self.denoiser_params.items():
            lines.append(f"{k} = {_format_value(v)}")
        return "\n".join(lines) + "\n"


def _number(text):
    text = text.strip()
    try:
        return int(text)
    except ValueError:
        return float(text)


def _parse_value(key, text):
    text = text.strip()
    if key in _LIST:
        kind = _LIST[key]
        items = [t.strip() for t in text.split(",") if t.strip()]
        return tuple(kind(t) for t in items)
    if text.lower() in _NULL and key not in ("output_dir",):
        if key in DEFAULTS["experiment"] or key in DEFAULTS["schedule"] or key == "beta":
            return None
    if key in _INT:
        return int(text)
    if key in _FLOAT:
        return float(text)
    if key in _BOOL:
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {text!r}")
    return text


def _format_value(v):
    if v is None:
        return "auto"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (tuple, list)):
        return ", ".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


# -- problem assembly ------------------------------------------------------------


@functools.lru_cache(maxsize=8)
def _radon(num_angles, num_detectors, width, height):
    return build_radon(CtGeometry(num_angles, num_detectors), width, height)


@dataclass
class Problem:
    """Everything shared by the solver runs of one configuration."""

    cfg: ExperimentConfig
    geom: CtGeometry
    x_true: np.ndarray
    observation: object
    fid: object
    scale: float
    x0: np.ndarray

    @property
    def truth_sha256(self):
        return hashlib.sha256(np.ascontiguousarray(self.x_true).tobytes()).hexdigest()


def build_problem(cfg):
    """Phantom, operator, seeded observation and normalized fidelity for ``cfg``.

    Line integrals are multiplied by ``cfg.attenuation`` before the Poisson
    draw so that ``I0`` photons give realistic transmission; the fidelity
    divides the log-sinogram back so it is posed in phantom units.  The
    fidelity is then scaled so that its largest block Lipschitz constant
    equals ``cfg.lipschitz_target``.
    """
    w, h = cfg.width, cfg.image_height
    geom = CtGeometry(cfg.num_angles, cfg.detectors)
    A = _radon(geom.num_angles, geom.num_detectors, w, h)
    phantom = shepp_logan(w, h)
    c = cfg.attenuation
    obs = poisson_observe(A.scaled(c), phantom, cfg.I0, sampler_rng(cfg.noise_seed))
    rng = sampler_rng(cfg.noise_seed + 1) if cfg.partition == "shuffled" else None
    part = partition_by_angle(geom, cfg.K, rng, cfg.partition)
    target = obs.log_sino / c
    if cfg.fidelity == "pwls":
        fid = pwls(A, target, obs.weights, part, cfg.ridge_eps)
    else:
        fid = least_squares(A, target, part, cfg.ridge_eps)
    scale = 1.0
    if cfg.lipschitz_target is not None:
        scale = cfg.lipschitz_target / fid.lipschitz_block()
        fid = fid.scaled(scale)
    return Problem(cfg, geom, phantom.pixels, obs, fid, scale, np.zeros(w * h))


def _denoiser_for(problem, solver):
    cfg = problem.cfg
    return make_denoiser(cfg.denoiser, cfg.width, cfg.image_height, cfg.gamma_for(solver),
                         **cfg.denoiser_params)


def _beta_info(problem, denoiser):
    cfg = problem.cfg
    if denoiser.beta_analytic is not None:
        return float(denoiser.beta_analytic), "analytic"
    if cfg.beta is not None:
        return float(cfg.beta), "configured"
    est = estimate_beta(denoiser, [problem.x_true], sampler_rng(cfg.noise_seed + 2),
                        num_pairs=3, power_steps=5)
    return float(est), "estimated"


def _iteration_budget(cfg, solver, schedule=None):
    if solver == "pnp_fista":
        return cfg.datapasses
    if solver == "pnp_sgd":
        return cfg.datapasses * cfg.K
    if cfg.outer_iters is not None:
        return cfg.outer_iters
    if solver == "pnp_admm":
        return cfg.datapasses
    if schedule.inner_rule == "constant":
        return max(1, math.ceil(cfg.datapasses * cfg.K / schedule.inner_iters_const))
    total, k = 0, 0
    while total < cfg.datapasses * cfg.K:
        k += 1
        total += schedule.inner_iters(k)
    return k


def stochastic_schedule(problem, beta):
    """The inner-loop schedule of ``stochastic_pnp_admm`` for this problem."""
    cfg, fid = problem.cfg, problem.fid
    if cfg.rule == "theorem1":
        sigma_sq, xi = estimate_theorem1_bounds(fid, cfg.tau, problem.x0, problem.x0,
                                                cfg.sigma_safety)
        return make_theorem1_schedule(fid, beta, cfg.tau, sigma_sq, xi)
    eta = cfg.eta
    if eta is None:
        # step 1/L for the inner objective tau f_q + 1/2 ||. - z||^2
        eta = 1.0 / (cfg.tau * fid.lipschitz_block() + 1.0)
    return Schedule.constant(cfg.tau, eta, cfg.inner_iters, cfg.momentum)


@dataclass
class RunResult:
    solver: str
    seed: int
    gamma: float
    state: object
    params: dict
    error: str | None = None

    @property
    def diverged(self):
        return self.error is not None

    @property
    def final_err_log10(self):
        h = self.state.history if self.state is not None else []
        return h[-1].err_to_truth_log10 if h else float("nan")


def run_solver(problem, solver, seed, gamma=None):
    """Run one solver for one seed; divergence is caught and reported in the result."""
    cfg, fid = problem.cfg, problem.fid
    if gamma is not None:
        cfg = cfg.replace(gamma_overrides={**cfg.gamma_overrides, solver: float(gamma)})
        problem = dataclasses.replace(problem, cfg=cfg)
    gamma = cfg.gamma_for(solver)
    D = _denoiser_for(problem, solver)
    rng = sampler_rng(seed)
    replace = cfg.sampling == "with_replacement"
    x0, xt = problem.x0, problem.x_true
    params = {"gamma": gamma}
    try:
        if solver == "pnp_fista":
            eta = cfg.fista_eta if cfg.fista_eta is not None else 1.0 / fid.lipschitz_full()
            params.update(eta=eta, iters=_iteration_budget(cfg, solver))
            state = run_pnp_fista(fid, D, eta, x0, params["iters"], x_true=xt, tol=cfg.tol)
        elif solver == "pnp_sgd":
            eta = cfg.sgd_eta if cfg.sgd_eta is not None else 1.0 / fid.lipschitz_block()
            params.update(eta=eta, momentum=cfg.sgd_momentum,
                          iters=_iteration_budget(cfg, solver))
            state = run_pnp_sgd(fid, D, eta, cfg.sgd_momentum, x0, params["iters"], rng,
                                x_true=xt, tol=cfg.tol, replace=replace)
        elif solver == "pnp_admm":
            params.update(tau=cfg.tau, outer_iters=_iteration_budget(cfg, solver),
                          prox_tol=cfg.prox_tol)
            state = run_pnp_admm(fid, D, cfg.tau, x0, params["outer_iters"], x_true=xt,
                                 tol=cfg.tol, prox_tol=cfg.prox_tol)
        else:
            beta, _ = _beta_info(problem, D) if cfg.rule == "theorem1" else (None, None)
            sched = stochastic_schedule(problem, beta)
            params.update(schedule=sched.describe(),
                          outer_iters=_iteration_budget(cfg, solver, sched))
            state = run_stochastic_pnp_admm(fid, D, sched, x0, x0, params["outer_iters"], rng,
                                            x_true=xt, tol=cfg.tol, replace=replace)
    except DivergenceError as exc:
        return RunResult(solver, seed, gamma, exc.state, params, str(exc))
    except ProxError as exc:
        return RunResult(solver, seed, gamma, None, params, str(exc))
    return RunResult(solver, seed, gamma, state, params)


# -- run directories ---------------------------------------------------------------


def run_experiment(cfg, output_dir=None, problem=None):
    """Run every configured solver and seed and write the artifacts.

    Returns ``(run_dir, results)``.  Divergent runs are recorded in the
    manifest (``status = "diverged"``) with their partial metric history.
    """
    out = Path(output_dir) if output_dir is not None else cfg.resolve_output_dir()
    out.mkdir(parents=True, exist_ok=True)
    if problem is None:
        problem = build_problem(cfg)
    fid = problem.fid
    mu, L = fid.constants()
    lam_min, lam_full, lam_block = fid.hessian_bounds()
    truth_img = problem.x_true.reshape(cfg.image_height, cfg.width)
    write_image(out / "ground_truth", truth_img)
    write_observation_csv(out / "observation.csv", problem.geom, problem.observation)

    manifest = {
        "config": cfg.to_dict(),
        "config_ini": cfg.to_ini(),
        "ground_truth_sha256": problem.truth_sha256,
        "problem": {
            "n": fid.n, "d": fid.d, "K": fid.K, "block_sizes": fid.partition.sizes,
            "num_angles": problem.geom.num_angles,
            "num_detectors": problem.geom.num_detectors,
            "attenuation_scale": cfg.attenuation, "fidelity_scale": problem.scale,
            "I0": cfg.I0, "fidelity": cfg.fidelity,
            "mu": mu, "L": L, "hessian_min": lam_min, "hessian_max": lam_full,
            "hessian_block_max": lam_block,
            "zero_counts": int(np.sum(problem.observation.counts == 0)),
        },
        "solvers": {},
        "runs": [],
    }
    results = []
    for solver in cfg.solvers:
        D = _denoiser_for(problem, solver)
        beta, beta_src = _beta_info(problem, D)
        if solver == "stochastic_pnp_admm" and cfg.rule == "theorem1":
            try:
                stochastic_schedule(problem, beta)
            except ScheduleError as exc:
                raise ConfigError([f"theorem1 schedule: {exc}"]) from exc
        entry = {"gamma": cfg.gamma_for(solver), "beta": beta, "beta_source": beta_src,
                 "denoiser": cfg.denoiser, "denoiser_params": cfg.denoiser_params}
        sdir = out / solver
        sdir.mkdir(exist_ok=True)
        for seed in cfg.seeds:
            res = run_solver(problem, solver, seed)
            results.append(res)
            entry.setdefault("params", res.params)
            rec = {"solver": solver, "seed": seed, "gamma": res.gamma,
                   "status": "diverged" if res.diverged else "ok",
                   "metrics": f"{solver}/seed_{seed}.csv"}
            if res.error:
                rec["error"] = res.error
            if res.state is not None:
                res.state.write_csv(sdir / f"seed_{seed}.csv", timing=cfg.record_wall_time)
                rec.update(outer_iters=res.state.k, datapasses=res.state.datapasses,
                           denoiser_calls=res.state.denoiser_calls,
                           final_err_log10=res.final_err_log10)
                if not res.diverged:
                    img = res.state.x.reshape(cfg.image_height, cfg.width)
                    write_image(sdir / f"recon_seed_{seed}", img)
                    rec["reconstruction"] = f"{solver}/recon_seed_{seed}.pgm"
            manifest["runs"].append(rec)
        manifest["solvers"][solver] = entry
    manifest["all_completed"] = not any(r.diverged for r in results)
    with open(out / "manifest.json", "w") as fh:
        json.dump(_finite_or_null(manifest), fh, indent=2, default=_json_default)
        fh.write("\n")
    return out, results


def _finite_or_null(o):
    # strict JSON has no NaN/inf
    if isinstance(o, dict):
        return {k: _finite_or_null(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_finite_or_null(v) for v in o]
    if isinstance(o, (float, np.floating)) and not math.isfinite(o):
        return None
    return o


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, tuple):
        return list(o)
    return str(o)


def grid_search_gamma(cfg, gamma_grid, solver=None, seed=None, problem=None):
    """Run ``solver`` once per denoiser scale and rank by final error.

    Returns ``(best_gamma, table)`` where ``table`` has one dict per grid
    point, in grid order.  Raises :class:`GridSearchError` (carrying the
    table) when every run diverged.
    """
    gamma_grid = [float(g) for g in gamma_grid]
    if not gamma_grid:
        raise ValueError("gamma grid is empty")
    bad = [g for g in gamma_grid if not g > 0]
    if bad:
        raise ConfigError([f"gamma must be positive, got {g}" for g in bad])
    solver = solver or cfg.solvers[0]
    seed = cfg.seeds[0] if seed is None else seed
    if problem is None:
        problem = build_problem(cfg)
    table = []
    for g in gamma_grid:
        res = run_solver(problem, solver, seed, gamma=g)
        err = res.final_err_log10
        table.append({"solver": solver, "gamma": g, "seed": seed,
                      "final_err_log10": err,
                      "min_err_log10": float(np.min(res.state.series("err_to_truth_log10")))
                      if res.state is not None and res.state.history else float("nan"),
                      "status": "diverged" if res.diverged else "ok"})
    ok = [r for r in table if r["status"] == "ok" and np.isfinite(r["final_err_log10"])]
    if not ok:
        raise GridSearchError(f"all {len(table)} runs of {solver} diverged", table)
    best = min(ok, key=lambda r: r["final_err_log10"])
    return best["gamma"], table


# -- reporting ---------------------------------------------------------------------


REPORT_COLUMNS = ("run", "solver", "axis", "x", "err_log10_median", "num_seeds",
                  "denoiser_calls_per_datapass")
AXES = ("datapasses", "denoiser_calls", "wall_ms")


def load_history(path):
    """Read a metric CSV into a dict of column arrays."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = {}
    for c in METRIC_COLUMNS:
        vals = [r[c] for r in rows]
        out[c] = np.array([float(v) for v in vals])
    return out


def _step_lookup(xs, ys, grid):
    """Value of the step function ``x -> ys[last i with xs[i] <= x]`` on ``grid``."""
    idx = np.searchsorted(xs, grid, side="right") - 1
    out = np.full(len(grid), np.nan)
    ok = idx >= 0
    out[ok] = ys[idx[ok]]
    return out


def compare_report(run_dirs, output=None):
    """Aligned error curves of several run directories.

    For every (run directory, solver) the metric histories of all seeds are
    put on the union grid of each axis (data passes, denoiser calls, wall
    time) as step functions and the median over seeds is reported.  Returns
    the list of row dicts (columns :data:`REPORT_COLUMNS`) and writes them
    as CSV when ``output`` is given.  All runs must share one ground truth.
    """
    run_dirs = [Path(d) for d in run_dirs]
    series = []
    truth = None
    for rd in run_dirs:
        mpath = rd / "manifest.json"
        if not mpath.exists():
            raise ReportError(f"{rd} has no manifest.json")
        man = json.loads(mpath.read_text())
        h = man["ground_truth_sha256"]
        if truth is None:
            truth = h
        elif h != truth:
            raise ReportError(f"ground truth of {rd} differs from {run_dirs[0]}")
        K = man["problem"]["K"]
        by_solver = {}
        for rec in man["runs"]:
            p = rd / rec["metrics"]
            if p.exists():
                by_solver.setdefault(rec["solver"], []).append(load_history(p))
        for solver, hists in by_solver.items():
            series.append((str(rd), solver, K, hists))
    if len(series) < 2:
        raise ReportError("a report needs at least two runs (directories or solvers)")

    rows = []
    for run, solver, K, hists in series:
        hists = [h for h in hists if len(h["outer_iter"])]
        if not hists:
            continue
        calls = np.median([h["denoiser_calls_cum"][-1] for h in hists])
        passes = np.median([h["grad_block_evals_cum"][-1] / K for h in hists])
        per_pass = calls / passes if passes > 0 else float("nan")
        for axis in AXES:
            xs_all = []
            for h in hists:
                xs_all.append(_axis_values(h, axis, K))
            grid = np.unique(np.concatenate(xs_all))
            curves = np.array([_step_lookup(x, h["err_to_truth_log10"], grid)
                               for x, h in zip(xs_all, hists)])
            with np.errstate(all="ignore"):
                med = np.median(curves, axis=0)
            for x, m in zip(grid, med):
                rows.append({"run": run, "solver": solver, "axis": axis, "x": float(x),
                             "err_log10_median": float(m), "num_seeds": len(hists),
                             "denoiser_calls_per_datapass": float(per_pass)})
    if output is not None:
        with open(output, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS)
            w.writeheader()
            for r in rows:
                w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return rows


def _axis_values(h, axis, K):
    if axis == "datapasses":
        return h["grad_block_evals_cum"] / K
    if axis == "denoiser_calls":
        return h["denoiser_calls_cum"]
    return h["wall_ms_cum"]


def report_series(rows, solver, axis, run=None):
    """``(x, median error)`` arrays for one solver and axis of a report."""
    sel = [r for r in rows if r["solver"] == solver and r["axis"] == axis
           and (run is None or r["run"] == run)]
    return (np.array([r["x"] for r in sel]), np.array([r["err_log10_median"] for r in sel]))
