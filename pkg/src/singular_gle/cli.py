"""Command-line entry point: ``singular-gle SUBCOMMAND --config run.toml``.

Exit codes: 0 success, 1 suite failure or integrator abort, 2 configuration error.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np
import tomli

from . import experiments, io
from .config import RunConfig, overdamped_check, parse_config, validate
from .dynamics import PhaseState, lift_initial_condition, simulate_gle, simulate_overdamped
from .errors import ConfigError, GLEError, NonFinite, StepRejected, ValidationError
from .kernels import fluctuation_dissipation_check
from .lyapunov import drift_search, stratified_samples

SUBCOMMANDS = ("simulate", "overdamped", "smallmass", "ergodicity", "lyapunov", "kernelcheck", "validate")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def build_parser():
    p = argparse.ArgumentParser(prog="singular-gle", description="Singular-interaction GLE simulations and checks.")
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("--config", required=True, metavar="PATH", help="TOML run configuration")
    p.add_argument("--out", metavar="DIR", help="output directory (default: $SINGULAR_GLE_OUT or ./out)")
    p.add_argument("--seed", type=int, help="master seed, overrides sim.seed")
    p.add_argument("--threads", type=int, default=None, help="worker threads for ensembles")
    p.add_argument("--format", choices=("csv", "binary"), help="table format, overrides output.format")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override a scalar config key (value in TOML syntax)")
    return p


def _apply_overrides(cfg: RunConfig, args):
    for item in args.set:
        key, sep, value = item.partition("=")
        section, dot, name = key.partition(".")
        if not (sep and dot):
            raise ValidationError([f"--set expects SECTION.KEY=VALUE, got {item!r}"])
        try:
            parsed = tomli.loads(f"v = {value}")["v"]
        except tomli.TOMLDecodeError:
            parsed = value
        target = {"sim": cfg.sim, "experiment": cfg.experiment, "output": cfg.output}.get(section)
        if target is None:
            raise ValidationError([f"--set cannot override section {section!r}"])
        target[name] = parsed
    if args.seed is not None:
        cfg.sim["seed"] = int(args.seed)
    if args.format is not None:
        cfg.output["format"] = args.format
    problems = validate(cfg)
    if problems:
        raise ValidationError(problems)
    return cfg


class Writer:
    def __init__(self, cfg: RunConfig, outdir):
        self.cfg = cfg
        self.dir = outdir
        self.meta = io.provenance(cfg.config_hash(), cfg.sim["seed"])
        self.binary = cfg.output["format"] == "binary"

    def table(self, name, columns):
        if self.binary:
            return io.write_binary(os.path.join(self.dir, name + ".npz"), columns, self.meta)
        return io.write_csv(os.path.join(self.dir, name + ".csv"), columns, self.meta)

    def summary(self, name, payload):
        return io.write_json(os.path.join(self.dir, name + ".json"), payload, self.meta)


def _trajectory_columns(traj, names):
    B, n = traj.data[names[0]].shape[:2]
    cols = {"path": np.repeat(np.arange(B), n), "t": np.tile(traj.t, B)}
    for key in names:
        arr = traj.data[key]
        for r in range(arr.shape[2]):
            for c in range(arr.shape[3]):
                cols[f"{key}{r}_{c}"] = arr[:, :, r, c].ravel()
    cols["min_pair_dist"] = traj.min_pair_dist.ravel()
    return cols


def _initial_phase(cfg: RunConfig):
    N, d = cfg.sim["N"], cfg.sim["d"]
    M = cfg.kernel_spec().n_modes
    x0 = cfg.initial_positions()
    v0 = np.zeros((N, d)) if cfg.sim["v0"] is None else np.asarray(cfg.sim["v0"], dtype=float).reshape(N, d)
    z0 = np.zeros((M, d)) if cfg.sim["z0"] is None else np.asarray(cfg.sim["z0"], dtype=float).reshape(M, d)
    return PhaseState(x0, v0, z0)


def cmd_simulate(cfg, w: Writer, threads):
    traj = simulate_gle(_initial_phase(cfg), cfg.sim_params(), cfg.model(), n_paths=cfg.sim["n_paths"],
                        output_dt=cfg.sim["output_dt"], threads=threads)
    w.table("trajectory", _trajectory_columns(traj, ("x", "v", "z")))
    print(f"simulate: {len(traj.t)} output times x {traj.x.shape[0]} paths, "
          f"rejections={int(traj.rejections.sum())}, min pair distance={float(np.min(traj.min_pair_dist)):.3e}")
    return True


def cmd_overdamped(cfg, w: Writer, threads):
    overdamped_check(cfg)
    init = _initial_phase(cfg)
    start = lift_initial_condition(init.x, init.z, cfg.kernel_spec())
    traj = simulate_overdamped(start, cfg.sim_params(), cfg.model(), n_paths=cfg.sim["n_paths"],
                               output_dt=cfg.sim["output_dt"], threads=threads)
    w.table("overdamped", _trajectory_columns(traj, ("q", "f")))
    print(f"overdamped: {len(traj.t)} output times x {traj.q.shape[0]} paths, "
          f"rejections={int(traj.rejections.sum())}")
    return True


def cmd_smallmass(cfg, w: Writer, threads):
    exp = cfg.experiment
    res = experiments.small_mass_sweep(cfg.model(), m_grid=exp["m_grid"], gamma=cfg.sim["gamma"], T=cfg.sim["T"],
                                       n_paths=exp["ensemble"], seed=cfg.sim["seed"], x0=cfg.initial_positions(),
                                       xi=exp["xi"], output_dt=exp["output_dt"], threads=threads)
    rows = res["rows"]
    w.table("smallmass", {k: [r[k] for r in rows] for k in rows[0]})
    slope_ok = 0.7 <= res["slope"] <= 1.3
    key = f"P_sup>{exp['xi'][0]:g}"
    probs = np.array([r[key] for r in rows])
    mono = bool(np.all(np.diff(probs) <= 0))
    w.summary("smallmass_summary", {**res, "slope_pass": slope_ok, "exceedance_monotone": mono})
    for r in rows:
        print(f"smallmass: m={r['m']:g} E[sup^4]={r['E_sup4']:.4g} +- {r['ci']:.2g} {key}={r[key]:.3f}")
    print(f"smallmass: slope={res['slope']:.3f} ({'PASS' if slope_ok else 'FAIL'} band [0.7, 1.3]); "
          f"exceedance monotone: {'PASS' if mono else 'FAIL'}")
    return slope_ok and mono


def cmd_ergodicity(cfg, w: Writer, threads):
    exp, sim = cfg.experiment, cfg.sim
    model = cfg.model()
    gibbs = experiments.gibbs_marginal_test(model, sim["m"], sim["gamma"], n_paths=exp["ensemble"], dt=sim["dt"],
                                            burn_in=exp["burn_in"], window=exp["window"],
                                            sample_every=exp["sample_every"], seed=sim["seed"],
                                            x0=cfg.initial_positions(), delta_min=sim["delta_min"], threads=threads)
    checks = gibbs["checks"]
    w.table("gibbs", {
        "check": np.arange(len(checks)),
        "mean": [c["mean"] for c in checks.values()],
        "exact": [c["exact"] for c in checks.values()],
        "rel_err": [c["rel_err"] for c in checks.values()],
        "ci": [c["ci"] for c in checks.values()],
        "pass": [c["pass"] for c in checks.values()],
    })
    for name, c in checks.items():
        print(f"ergodicity: {name} mean={c['mean']:.4g} exact={c['exact']:.4g} rel_err={c['rel_err']:.3%} "
              f"{'PASS' if c['pass'] else 'FAIL'}")
    init_a = _initial_phase(cfg)
    x_b = init_a.x + 4.0 if exp["x0_b"] is None else np.asarray(exp["x0_b"], dtype=float).reshape(init_a.x.shape)
    init_b = PhaseState(x_b, init_a.v, init_a.z)
    decay = experiments.wasserstein_decay(model, sim["m"], sim["gamma"], init_a, init_b, T=sim["T"], dt=sim["dt"],
                                          output_dt=exp["output_dt"] or 0.25, n_paths=exp["ensemble"],
                                          seed=sim["seed"], n_proj=exp["n_proj"], threads=threads)
    w.table("wasserstein", {"t": decay["t"], "distance": decay["distance"]})
    decay_ok = bool(decay["rate"] > 0 and decay["r2"] >= 0.9)
    print(f"ergodicity: sliced W1 rate={decay['rate']:.4f} R2={decay['r2']:.4f} floor={decay['floor']:.3g} "
          f"{'PASS' if decay_ok else 'FAIL'}")
    w.summary("ergodicity_summary", {"gibbs": gibbs, "wasserstein": {k: v for k, v in decay.items()},
                                     "pass": bool(gibbs["pass"] and decay_ok)})
    return bool(gibbs["pass"] and decay_ok)


def cmd_lyapunov(cfg, w: Writer, threads):
    exp, sim = cfg.experiment, cfg.sim
    model = cfg.model()
    rng = np.random.default_rng(sim["seed"])
    samples = stratified_samples(model, sim["m"], exp["n_samples"], rng)
    best, reports = drift_search(exp["candidate"], model, sim["m"], sim["gamma"], samples,
                                 eps_grid=exp["epsilon"], R_grid=exp["R_lyap"])
    w.table("lyapunov", {
        "epsilon": [r["params"]["epsilon"] for r in reports],
        "R": [r["params"]["R"] for r in reports],
        "c_fit": [np.nan if r["c_fit"] is None else r["c_fit"] for r in reports],
        "D_fit": [r["D_fit"] for r in reports],
        "n_violations": [r["n_violations"] for r in reports],
    })
    w.summary("lyapunov_summary", {"best": best, "grid": reports})
    for r in reports:
        print(f"lyapunov: {r['candidate']} eps={r['params']['epsilon']:g} R={r['params']['R']:g} "
              f"c={r['c_fit']} violations={r['n_violations']}")
    ok = best["n_violations"] == 0
    print(f"lyapunov: best {'PASS' if ok else 'FAIL'} ({best['n_violations']} violations)")
    return ok


def cmd_kernelcheck(cfg, w: Writer, threads):
    exp, sim = cfg.experiment, cfg.sim
    rng = np.random.default_rng(sim["seed"])
    lags = None if exp["lags"] is None else np.asarray(exp["lags"], dtype=float)
    res = fluctuation_dissipation_check(cfg.kernel_spec(), exp["particle"], lags=lags,
                                        sample_count=exp["sample_count"], rng=rng)
    w.table("kernelcheck", {k: res[k] for k in ("lag", "empirical", "exact", "rel_err", "stderr")})
    ok = bool(np.all(res["rel_err"] <= 0.05))
    print(f"kernelcheck: max rel err {float(np.max(res['rel_err'])):.3%} over {len(res['lag'])} lags "
          f"{'PASS' if ok else 'FAIL'}")
    return ok


COMMANDS = {
    "simulate": cmd_simulate,
    "overdamped": cmd_overdamped,
    "smallmass": cmd_smallmass,
    "ergodicity": cmd_ergodicity,
    "lyapunov": cmd_lyapunov,
    "kernelcheck": cmd_kernelcheck,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = _apply_overrides(parse_config(args.config), args)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.subcommand == "validate":
        print("config OK")
        return EXIT_OK
    writer = Writer(cfg, io.output_dir(args.out, cfg.output.get("dir")))
    try:
        ok = COMMANDS[args.subcommand](cfg, writer, args.threads)
    except ValidationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (StepRejected, NonFinite) as exc:
        print(f"integrator abort: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except GLEError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK if ok else EXIT_FAIL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
