"""Run configuration: TOML parsing, defaults and cross-field validation."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np
import tomli

from .dynamics import CutoffSpec, Model, SimParams
from .errors import ParseError, ValidationError
from .kernels import KernelSpec
from .potentials import ConfiningPotential, SingularPotential

SUITES = ("none", "gibbs", "wasserstein", "smallmass", "lyapunov", "kernelcheck")
FORMATS = ("csv", "binary")

EXPERIMENT_DEFAULTS = {
    "suite": "none",
    "ensemble": 1000,
    "burn_in": 10.0,
    "window": 40.0,
    "sample_every": 0.5,
    "m_grid": [0.2, 0.1, 0.05, 0.025, 0.0125],
    "xi": [0.1],
    "x0_b": None,
    "candidate": "VN1",
    "epsilon": [1e-3, 1e-2, 1e-1],
    "R_lyap": [2.0, 5.0, 10.0],
    "n_samples": 10000,
    "particle": 0,
    "lags": None,
    "sample_count": 100000,
    "n_proj": 50,
    "output_dt": None,
}

SIM_DEFAULTS = {
    "N": 2,
    "d": 1,
    "m": 1.0,
    "gamma": 1.0,
    "dt": 0.01,
    "T": 1.0,
    "seed": 0,
    "delta_min": 1e-4,
    "max_halvings": 20,
    "n_paths": 1,
    "output_dt": None,
    "x0": None,
    "v0": None,
    "z0": None,
}


@dataclass
class RunConfig:
    U: dict
    G: dict
    kernel: dict
    sim: dict = field(default_factory=lambda: dict(SIM_DEFAULTS))
    cutoff: dict | None = None
    experiment: dict = field(default_factory=lambda: dict(EXPERIMENT_DEFAULTS))
    output: dict = field(default_factory=lambda: {"dir": None, "format": "csv"})

    def as_dict(self):
        return asdict(self)

    def config_hash(self):
        text = json.dumps(self.as_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    # -- model construction -------------------------------------------------

    def confining(self) -> ConfiningPotential:
        u = dict(self.U)
        kind = u.pop("kind", "quadratic")
        if kind == "quadratic":
            return ConfiningPotential("quadratic", (u.pop("k", 1.0),), **u)
        return ConfiningPotential(kind, tuple(u.pop("coeffs")), **u)

    def singular(self) -> SingularPotential:
        g = dict(self.G)
        if g.get("kind") == "coulomb" and "dim" not in g:
            g["dim"] = self.sim["d"]
        return SingularPotential(**g)

    def kernel_spec(self) -> KernelSpec:
        if "per_particle" in self.kernel:
            return KernelSpec(tuple(tuple(map(tuple, per)) for per in self.kernel["per_particle"]))
        return KernelSpec.uniform(self.sim["N"], [tuple(mode) for mode in self.kernel["modes"]])

    def model(self) -> Model:
        cutoff = CutoffSpec(self.cutoff["R"]) if self.cutoff else None
        return Model(self.confining(), self.singular(), self.kernel_spec(), d=self.sim["d"], cutoff=cutoff)

    def sim_params(self, **override) -> SimParams:
        s = {**self.sim, **override}
        keys = ("m", "gamma", "dt", "T", "seed", "delta_min", "max_halvings")
        return SimParams(**{k: s[k] for k in keys})

    def initial_positions(self):
        N, d = self.sim["N"], self.sim["d"]
        if self.sim["x0"] is None:
            return np.linspace(-1.0, 1.0, N)[:, None] * np.ones((1, d)) if N > 1 else np.ones((1, d))
        return np.asarray(self.sim["x0"], dtype=float).reshape(N, d)


def _position(exc: tomli.TOMLDecodeError):
    return getattr(exc, "lineno", None), getattr(exc, "colno", None)


def parse_text(text: str) -> RunConfig:
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        line, col = _position(exc)
        msg = getattr(exc, "msg", str(exc))
        raise ParseError(msg, line=line, column=col) from None
    return build_config(raw)


def parse_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_text(fh.read())


def build_config(raw: dict) -> RunConfig:
    """Fill defaults, check types and cross-field rules; collect every violation."""
    problems = []
    pot = raw.get("potential", {})
    U = dict(pot.get("U", {"kind": "quadratic", "k": 1.0, "shift": 1.0}))
    G = dict(pot.get("G", {}))
    if "kind" not in G:
        problems.append("potential.G.kind is required")
    kernel = dict(raw.get("kernel", {}))
    if "modes" not in kernel and "per_particle" not in kernel:
        problems.append("kernel needs 'modes' or 'per_particle'")
    sim = dict(SIM_DEFAULTS)
    for k, v in raw.get("sim", {}).items():
        if k not in SIM_DEFAULTS:
            problems.append(f"sim.{k} is not a known key")
        sim[k] = v
    experiment = dict(EXPERIMENT_DEFAULTS)
    for k, v in raw.get("experiment", {}).items():
        if k not in EXPERIMENT_DEFAULTS:
            problems.append(f"experiment.{k} is not a known key")
        experiment[k] = v
    output = {"dir": None, "format": "csv", **raw.get("output", {})}
    cutoff = raw.get("cutoff")
    for section in raw:
        if section not in ("potential", "kernel", "sim", "cutoff", "experiment", "output"):
            problems.append(f"unknown section [{section}]")
    cfg = RunConfig(U=U, G=G, kernel=kernel, sim=sim, cutoff=cutoff, experiment=experiment, output=output)
    if problems:
        raise ValidationError(problems)
    problems += validate(cfg)
    if problems:
        raise ValidationError(problems)
    return cfg


def validate(cfg: RunConfig):
    """List of violated rules (empty when the configuration is usable)."""
    out = []
    sim, exp = cfg.sim, cfg.experiment
    try:
        U = cfg.confining()
    except (TypeError, ValueError, KeyError) as exc:
        out.append(f"potential.U: {exc}")
        U = None
    try:
        G = cfg.singular()
    except (TypeError, ValueError) as exc:
        out.append(f"potential.G: {exc}")
        G = None
    try:
        kernel = cfg.kernel_spec()
        if kernel.n_particles != sim["N"]:
            out.append(f"kernel lists {kernel.n_particles} particles but sim.N = {sim['N']}")
    except (TypeError, ValueError, KeyError) as exc:
        out.append(f"kernel: {exc}")
    try:
        cfg.sim_params()
    except (TypeError, ValueError) as exc:
        out.append(f"sim: {exc}")
    if not (isinstance(sim["N"], int) and sim["N"] >= 1):
        out.append("sim.N must be a positive integer")
    if not (isinstance(sim["d"], int) and sim["d"] >= 1):
        out.append("sim.d must be a positive integer")
    if cfg.cutoff is not None and not (cfg.cutoff.get("R", 0) > 2):
        out.append("cutoff.R must exceed 2")
    if exp["suite"] not in SUITES:
        out.append(f"experiment.suite must be one of {', '.join(SUITES)}")
    if cfg.output.get("format") not in FORMATS:
        out.append("output.format must be csv or binary")
    gamma = sim["gamma"]
    if U is not None and gamma == 0 and U.lam != 1:
        out.append("Assumption 2.1(iii): γ=0 requires λ=1")
    if exp["suite"] == "smallmass":
        if not gamma > 0:
            out.append("small-mass runs require γ>0")
        if cfg.cutoff is None:
            out.append("small-mass suite needs a [cutoff] section")
        ms = np.asarray(exp["m_grid"], dtype=float)
        if np.any(np.diff(ms) >= 0):
            out.append("experiment.m_grid must be strictly decreasing")
        if G is not None and sim["d"] == 1 and G.beta1 == 1 and not G.a4 > 0.5:
            out.append("Assumption 2.3: d=1 with log G requires a4 > 1/2")
    if exp["suite"] == "gibbs" and not exp["burn_in"] < exp["burn_in"] + exp["window"]:
        out.append("experiment.window must be positive")
    return out


def overdamped_check(cfg: RunConfig):
    if not cfg.sim["gamma"] > 0:
        raise ValidationError(["overdamped runs require γ>0"])
