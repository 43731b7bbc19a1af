"""Command line driver: ``kingstab <command> [options]``.

Commands write their artifacts into ``--out`` and a ``<command>_report.json``
whose rows carry lhs, rhs, tolerance and scale. The exit status is 0 when
every check of the command passed, 1 when some check failed and 2 on usage
or configuration errors (reported as JSON on stderr, before any file is
written).
"""

import argparse
import json
import os
import sys
import time
from dataclasses import replace

import numpy as np

from . import _kernels, checks, orbits
from .config import ExperimentConfig, load_config, validate
from .errors import ConfigError, KingstabError
from .functionals import distance_d, energy_scale
from .perturbation import OddBumpGenerator, flow, flowed_density, verify_S_membership
from .phase import SupportQuadrature
from .sim import SimConfig, dynamical_time, read_checkpoint, run, sample_steady_state, write_checkpoint
from .stability import CutoffRegion
from .steady_state import KingModel, KingParameters, build_king

COMMANDS = ("build", "orbits", "perturb", "verify", "evolve", "report")
FAST_N = 20_000
FAST_HORIZON_TDYN = 2.0


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def make_parser():
    common = _Parser(add_help=False)
    common.add_argument("--config", metavar="PATH")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", metavar="DIR")
    common.add_argument("--threads", type=int)
    common.add_argument("--check-level", choices=("fast", "full"), default="full")
    parser = _Parser(prog="kingstab", description="King model stability laboratory")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("build", parents=[common], help="solve the steady state, write profiles")
    sub.add_parser("orbits", parents=[common], help="orbit table on the cutoff region")
    sub.add_parser("perturb", parents=[common], help="flow a sample by the generator, check Casimirs")
    sub.add_parser("verify", parents=[common], help="identity and inequality report")
    ev = sub.add_parser("evolve", parents=[common], help="particle simulation")
    ev.add_argument("--unperturbed", action="store_true", help="start from the f0 sample itself")
    ev.add_argument("--resume", metavar="CKPT", help="continue from a checkpoint in --out")
    sub.add_parser("report", parents=[common], help="aggregate the reports found in --out")
    return parser


def resolve_config(args):
    """Merge the config file and command line flags; raises ConfigError."""
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.out is not None:
        cfg = replace(cfg, out=args.out)
    if args.threads is not None and args.threads < 1:
        raise ConfigError("--threads must be positive")
    validate(cfg)
    if os.path.exists(cfg.out) and not os.path.isdir(cfg.out):
        raise ConfigError(f"output path {cfg.out} exists and is not a directory")
    existing = os.path.abspath(cfg.out)
    while not os.path.exists(existing):
        existing = os.path.dirname(existing)
    if not os.path.isdir(existing) or not os.access(existing, os.W_OK):
        raise ConfigError(f"output directory {cfg.out} is not writable")
    return cfg


def _set_threads(n):
    if n is None or not _kernels.USE_NUMBA:
        return
    import numba

    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


# ---------------------------------------------------------------------------
# shared pieces
# ---------------------------------------------------------------------------

def _model(cfg):
    k = cfg.king
    return build_king(KingParameters(W0=k.W0, r_max_hint=k.r_max_hint,
                                     ode_tolerance=k.ode_tolerance, grid_size=k.grid_size))


def _load_or_build(cfg):
    snap = os.path.join(cfg.out, "model.npz")
    if os.path.exists(snap):
        model = KingModel.load(snap)
        if model.W0 == cfg.king.W0 and model.ode_tolerance == cfg.king.ode_tolerance:
            return model
    return _model(cfg)


def _generator(cfg, model):
    g = cfg.generator
    return OddBumpGenerator(model, amplitude=g.amplitude, coeffs=g.coeffs, eps=g.eps,
                            kappa=g.kappa)


def _cutoff(cfg, model):
    default = CutoffRegion.default(model)
    return CutoffRegion(cfg.cutoff.eps_E or default.eps_E, cfg.cutoff.eps_L or default.eps_L)


def _quad(cfg, model, E_top=None):
    q = cfg.quadrature
    return SupportQuadrature(model, E_top, n_r=q.n_r, n_s=q.n_s, n_c=q.n_c)


def _write_report(cfg, command, rows, **extra):
    payload = dict(command=command, seed=cfg.seed, check_level=extra.pop("check_level", None),
                   passed=all(r.passed for r in rows), rows=[r.as_dict() for r in rows])
    payload.update(extra)
    path = os.path.join(cfg.out, f"{command}_report.json")
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=_jsonable)
    return payload


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"cannot serialise {type(x).__name__}")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_build(cfg, args):
    k = cfg.king
    model, rows = checks.check_king_build(
        KingParameters(W0=k.W0, r_max_hint=k.r_max_hint, ode_tolerance=k.ode_tolerance,
                       grid_size=k.grid_size), tol=cfg.tolerances.poisson)
    model.to_csv(os.path.join(cfg.out, "profiles.csv"))
    model.save(os.path.join(cfg.out, "model.npz"))
    return _write_report(cfg, "build", rows, R=model.R, M=model.M, E0=model.E0,
                         f0_sup=model.f0_sup, C0=model.C0)


def cmd_orbits(cfg, args):
    model = _load_or_build(cfg)
    cut = _cutoff(cfg, model)
    n = 10 if args.check_level == "fast" else 20
    E, L = orbits.orbit_grid(model, cut.E_top(model), cut.eps_L, n, n)
    table = orbits.orbit_table(model, E, L)
    orbits.write_orbit_csv(os.path.join(cfg.out, "orbits.csv"), table)
    rows = checks.check_kepler_orbits() + checks.check_well_convexity(
        model, n, cut.eps_E, cut.eps_L)
    return _write_report(cfg, "orbits", rows, check_level=args.check_level,
                         eps_E=cut.eps_E, eps_L=cut.eps_L, orbits=int(table.shape[0]))


def _sample_size(cfg, level):
    return min(cfg.sim.N, FAST_N) if level == "fast" else cfg.sim.N


def cmd_perturb(cfg, args):
    model = _load_or_build(cfg)
    gen = _generator(cfg, model)
    s = cfg.generator.s
    ref = sample_steady_state(model, _sample_size(cfg, args.check_level), seed=cfg.seed)
    ens = flow(ref, gen, s, model)
    member = verify_S_membership(ens, ref, model, threshold=cfg.tolerances.casimir)
    pf, info = flowed_density(_quad(cfg, model), model, gen, s, tol=cfg.tolerances.casimir)
    dist = distance_d(pf, model)
    scale = energy_scale(model)
    worst = max(c["deviation"] for c in member["casimirs"])
    rows = [
        checks._row("particle_casimir_conservation", worst, 0.0, cfg.tolerances.casimir, 1.0,
                    worst < cfg.tolerances.casimir, casimirs=member["casimirs"]),
        checks._row("sorted_f_values_equal", float(member["sorted_values_equal"]), 1.0, 0.0, 1.0,
                    member["sorted_values_equal"]),
        checks._row("sup_f_bound", member["sup_f"], model.f0_sup, 1e-12, model.f0_sup,
                    member["sup_within"]),
        checks._row("grid_casimir_conservation", info["battery_deviation"], 0.0,
                    cfg.tolerances.casimir, 1.0, info["battery_deviation"] < cfg.tolerances.casimir,
                    flow_steps=info["steps"]),
    ]
    write_checkpoint(os.path.join(cfg.out, "reference.ckpt"), ref, 0.0)
    write_checkpoint(os.path.join(cfg.out, "perturbed.ckpt"), ens, 0.0)
    return _write_report(cfg, "perturb", rows, check_level=args.check_level, s=s,
                         generator=gen.params(), d_grid=dist.d, d_over_scale=dist.d / scale,
                         N=len(ens))


def cmd_verify(cfg, args):
    model = _load_or_build(cfg)
    tol = cfg.tolerances
    fast = args.check_level == "fast"
    n_gen = cfg.verify.generators_fast if fast else cfg.verify.generators_full
    n_rad = cfg.verify.radii_fast if fast else cfg.verify.radii_full
    gen = _generator(cfg, model)
    quad = _quad(cfg, model)
    rows = []
    rows += checks.check_appendix_identity(model, n_rad, tol.appendix)
    rows += checks.check_bracket_decomposition(model, 200 if fast else 1000, tol.appendix)
    rows += checks.check_antonov(model, n_gen, seed=cfg.seed, tol=tol.antonov)
    rows += checks.check_dual_route(model, gen)
    rows += checks.check_reconstruction(model, min(n_gen, 10), seed=cfg.seed + 1,
                                        rtol=tol.round_trip, orth_tol=tol.orthogonality,
                                        weak_tol=tol.weak_identity)
    rows += checks.check_functional_identities(model, gen, quad=quad, decrel_tol=tol.decrel,
                                               casimir_tol=tol.casimir)
    if not fast:
        rows += checks.check_local_minimizer(model, gen, quad=quad)
    return _write_report(cfg, "verify", rows, check_level=args.check_level)


def cmd_evolve(cfg, args):
    model = _load_or_build(cfg)
    sc = cfg.sim
    fast = args.check_level == "fast"
    start = 0.0
    ref_path = os.path.join(cfg.out, "reference.ckpt")
    if args.resume:
        ens, start, _ = read_checkpoint(args.resume)
        ref, _, _ = read_checkpoint(ref_path)
    else:
        ref = sample_steady_state(model, _sample_size(cfg, args.check_level), seed=cfg.seed)
        if args.unperturbed or cfg.generator.s == 0:
            ens = ref.copy()
        else:
            ens = flow(ref, _generator(cfg, model), cfg.generator.s, model)
        write_checkpoint(ref_path, ref, 0.0)
    t_dyn = dynamical_time(model, float(np.median(ref.L)))
    horizon_tdyn = min(sc.horizon_tdyn, FAST_HORIZON_TDYN) if fast else sc.horizon_tdyn
    unperturbed = args.unperturbed or cfg.generator.s == 0
    # the background run is judged on the fixed-grid d, so it must be sampled
    cic_stride = sc.cic_stride or (sc.output_stride if unperturbed else 0)
    simcfg = SimConfig(dt=t_dyn / sc.steps_per_tdyn, horizon=horizon_tdyn * t_dyn, N=len(ens),
                       softening=sc.softening, seed=cfg.seed, output_stride=sc.output_stride,
                       checkpoint_stride=sc.checkpoint_stride, cic_stride=cic_stride)
    t0 = time.perf_counter()
    series = run(ens, model, simcfg, ref=ref, start_time=start,
                 checkpoint_path=os.path.join(cfg.out, "evolve.ckpt"))
    elapsed = time.perf_counter() - t0
    series.to_csv(os.path.join(cfg.out, "diagnostics.csv"))
    summary = series.summary()
    drift = summary["H_drift"]
    d = series.column("d")
    rows = [
        checks._row("energy_drift", drift, 0.0, cfg.tolerances.energy_drift, 1.0,
                    drift < cfg.tolerances.energy_drift),
        checks._row("L_invariant", float(summary["L_invariant"]), 1.0, 0.0, 1.0,
                    summary["L_invariant"]),
        checks._row("sorted_f_invariant", float(summary["f_sorted_invariant"]), 1.0, 0.0, 1.0,
                    summary["f_sorted_invariant"]),
    ]
    extra = {}
    if unperturbed:
        # sampling noise sets d(0) here; the grid route has a fixed resolution floor
        d_cic = np.array([v for _, v in series.extra["d_cic"]])
        ratio = float(np.max(d_cic) / d_cic[0])
        rows.append(checks._row("distance_growth_grid", ratio, 3.0, 0.0, 1.0, ratio <= 3.0))
        extra.update(d_cic_initial=float(d_cic[0]), d_cic_max=float(np.max(d_cic)))
        if d[0] > 0:
            extra["paired_growth"] = float(np.max(d) / d[0])
    elif d[0] > 0:
        ratio = float(np.max(d) / d[0])
        rows.append(checks._row("distance_growth", ratio, 10.0, 0.0, 1.0, ratio <= 10.0))
    write_checkpoint(os.path.join(cfg.out, "evolve.ckpt"), ens, series.rows[-1][0],
                     int(round(series.rows[-1][0] / simcfg.dt)))
    return _write_report(cfg, "evolve", rows, check_level=args.check_level, t_dyn=t_dyn,
                         dt=simcfg.dt, horizon=simcfg.horizon, N=len(ens), runtime_s=elapsed,
                         d_initial=float(d[0]), d_max=float(np.max(d)),
                         d_over_scale=float(d[0]) / energy_scale(model), **extra)


def cmd_report(cfg, args):
    found = {}
    failures = []
    for name in COMMANDS[:-1]:
        path = os.path.join(cfg.out, f"{name}_report.json")
        if not os.path.exists(path):
            continue
        with open(path) as fh:
            rep = json.load(fh)
        found[name] = dict(passed=rep["passed"], rows=len(rep["rows"]))
        failures += [dict(command=name, **row) for row in rep["rows"] if not row["passed"]]
    if not found:
        raise ConfigError(f"no reports found in {cfg.out}")
    rows = [checks._row(f"{name}_passed", float(v["passed"]), 1.0, 0.0, 1.0, v["passed"],
                        rows=v["rows"]) for name, v in found.items()]
    payload = _write_report(cfg, "report", rows, failures=failures)
    for name, v in found.items():
        print(f"{name:8s} {'PASS' if v['passed'] else 'FAIL'} ({v['rows']} rows)")
    return payload


HANDLERS = dict(build=cmd_build, orbits=cmd_orbits, perturb=cmd_perturb, verify=cmd_verify,
                evolve=cmd_evolve, report=cmd_report)


def _fail(kind, messages, code):
    json.dump(dict(status=kind, failures=messages), sys.stderr, indent=2)
    sys.stderr.write("\n")
    return code


def main(argv=None):
    try:
        args = make_parser().parse_args(argv)
        cfg = resolve_config(args)
    except (UsageError, ConfigError) as exc:
        return _fail("usage_error", [str(exc)], 2)
    if args.command == "evolve" and args.resume and not os.path.exists(args.resume):
        return _fail("usage_error", [f"checkpoint {args.resume} not found"], 2)
    _set_threads(args.threads)
    os.makedirs(cfg.out, exist_ok=True)
    try:
        payload = HANDLERS[args.command](cfg, args)
    except ConfigError as exc:
        return _fail("usage_error", [str(exc)], 2)
    except (KingstabError, ValueError) as exc:
        return _fail("error", [f"{type(exc).__name__}: {exc}"], 1)
    if not payload["passed"]:
        failed = [r["name"] for r in payload["rows"] if not r["passed"]]
        return _fail("checks_failed", failed, 1)
    print(f"{args.command}: all {len(payload['rows'])} checks passed -> {cfg.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
