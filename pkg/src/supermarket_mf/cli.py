"""Command-line entry point: ``supermarket-mf <command> [options]``."""
from __future__ import annotations

import argparse
import csv
import os
import sys
import warnings

import numpy as np

from . import modelfile
from .core import (
    ChoiceDecomposition,
    fixed_point_residual,
    integrate,
    reference_linear_solution,
    truncated_stationary_vector,
)
from .errors import (
    ConvergenceError,
    InstabilityError,
    IntegrationError,
    ModelFileError,
    SimulationError,
    StabilityError,
    TruncationWarning,
)
from .gim1 import Gim1Model, gim1_aggregate_residual, gim1_decomposition, gim1_fixed_point
from .mg1 import Mg1Model, mg1_aggregate_residual, mg1_decomposition, mg1_fixed_point
from .multichoice import (
    MobileServerModel,
    MultiClassModel,
    mobile_fixed_point,
    mobile_residual,
    multichoice_decompositions,
    multiclass_fixed_point,
    multiclass_residual,
)
from .simulator import SimConfig, simulate, write_csv, write_manifest
from .tables import ABS_TOL, REL_TOL, validate_tables

DEFAULT_K = 30
EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _open_out(path):
    if path is None or path == "-":
        return sys.stdout, False
    return open(path, "w", newline=""), True


def _fmt(x):
    return repr(float(x))


def decomposition_for(model, K):
    if isinstance(model, Mg1Model):
        return mg1_decomposition(model, K)
    if isinstance(model, Gim1Model):
        return gim1_decomposition(model, K)
    if isinstance(model, (MobileServerModel, MultiClassModel)):
        return multichoice_decompositions(model, K)
    if K + 1 != len(model.level_dims):
        raise ModelFileError("general models fix their own level count; drop --levels")
    return model


def _solve(mf, K, eps):
    """Return ``(levels, report_lines, ok)`` for the file's model."""
    model = mf.model
    lines = []
    if isinstance(model, Mg1Model):
        seq = mg1_fixed_point(model, K=K)
        res = mg1_aggregate_residual(seq, model)
        lines += [f"theta {seq.info['theta']:.12g}  rho {seq.info['rho']:.12g}",
                  f"scalar recursion residual {res.scalar_sup:.3e}",
                  f"tail-vanishing terms {res.tail_sup:.3e}",
                  f"vector residual (diagnostic) {res.vector_sup:.3e}"]
        ok = res.scalar_sup < 1e-12
        levels = [seq.level(k) for k in range(seq.K + 1)]
    elif isinstance(model, Gim1Model):
        seq = gim1_fixed_point(model, K=K, eps=eps)
        res = gim1_aggregate_residual(seq, model)
        lines += [f"theta {seq.info['theta']:.12g}  rho {seq.info['rho']:.12g}  "
                  f"iterations {seq.info['iterations']}",
                  f"aggregate balance residual {res.aggregate_sup:.3e}",
                  f"vector residual (diagnostic) {res.vector_sup:.3e}"]
        ok = res.aggregate_sup < 1e-10
        levels = [seq.level(k) for k in range(seq.K + 1)]
    elif isinstance(model, MobileServerModel):
        fp = mobile_fixed_point(model, K=K)
        res = mobile_residual(fp, model)
        lines += [f"regime {fp.regime}  limit {fp.limit:.12g}", f"scalar balance residual {res.max():.3e}"]
        ok = res.max() < 1e-12
        levels = [np.array([v]) for v in fp.pi]
    elif isinstance(model, MultiClassModel):
        delta = multiclass_fixed_point(model, K=K)
        res = multiclass_residual(delta, model)
        lines += [f"rho {model.rho:.12g}", f"level balance residual {np.abs(res[:-1]).max():.3e}"]
        ok = np.abs(res[:-1]).max() < 1e-12
        levels = [np.array([v]) for v in delta]
    else:
        if not model.is_linear:
            raise ModelFileError("fixed points of general nonlinear models are not solved here; use 'ode'")
        pi = truncated_stationary_vector(model.generator)
        _, sup = fixed_point_residual(pi, model)
        lines.append(f"fixed-point residual {sup:.3e}")
        ok = sup < 1e-10
        levels = list(pi.levels)
    return levels, lines, ok


def cmd_fixed_point(args):
    mf = modelfile.load(args.model)
    K = args.levels if args.levels is not None else mf.solver.get("K")
    eps = args.eps if args.eps is not None else mf.solver.get("eps", 1e-12)
    levels, lines, ok = _solve(mf, K, eps)
    fh, close = _open_out(args.out)
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["level", "phase", "value"])
        for k, vec in enumerate(levels):
            for p, v in enumerate(np.atleast_1d(vec)):
                w.writerow([k, p, _fmt(v)])
    finally:
        if close:
            fh.close()
    for line in lines:
        print(line, file=sys.stderr)
    print("converged" if ok else "residual check FAILED", file=sys.stderr)
    return EXIT_OK if ok else EXIT_FAIL


def cmd_ode(args):
    mf = modelfile.load(args.model)
    solver = mf.solver
    if args.levels is not None:
        K = args.levels
    elif isinstance(mf.model, ChoiceDecomposition):
        K = len(mf.model.level_dims) - 1
    else:
        K = solver.get("K", DEFAULT_K)
    dec = decomposition_for(mf.model, K)
    t_end = args.t_end if args.t_end is not None else solver.get("t_end", 10.0)
    S0 = modelfile.initial_measure(mf, dec.level_dims)
    if "sample_times" in solver:
        times = [S0.time + t for t in solver["sample_times"] if t <= t_end]
    else:
        samples = solver.get("samples", 10)
        times = list(S0.time + np.linspace(0.0, t_end, samples + 1)) if t_end > 0 else [S0.time]
    traj = integrate(S0, dec, t_end, step=solver.get("step", 0.01), tol=solver.get("tol", 1e-8),
                     sample_times=times)
    linear = dec.is_linear
    fh, close = _open_out(args.out)
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "level", "phase", "value"] + (["reference"] if linear else []))
        for S in traj:
            ref = None
            if linear:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", TruncationWarning)
                    ref = reference_linear_solution(dec.generator, S0, S.time - S0.time)
            for k, vec in enumerate(S.levels):
                for p, v in enumerate(vec):
                    row = [_fmt(S.time), k, p, _fmt(v)]
                    if ref is not None:
                        row.append(_fmt(ref.levels[k][p]))
                    w.writerow(row)
    finally:
        if close:
            fh.close()
    if args.plot:
        _plot(traj, args.plot if isinstance(args.plot, str) else _plot_path(args.out))
    return EXIT_OK


def _plot_path(out):
    if out in (None, "-"):
        return "fractions.png"
    return os.path.splitext(out)[0] + ".png"


def _plot(traj, path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    t = [S.time for S in traj]
    agg = np.array([S.aggregate() for S in traj])
    fig, ax = plt.subplots(figsize=(6, 4))
    for k in range(1, agg.shape[1]):
        if agg[:, k].max() < 1e-6:
            break
        ax.plot(t, agg[:, k], label=f"k={k}")
    ax.set_xlabel("t")
    ax.set_ylabel("S_k(t) e")
    ax.legend(fontsize="small", ncol=2)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    print(f"plot written to {path}", file=sys.stderr)


def _sim_config(mf, args):
    sim = dict(mf.sim)
    if args.seed is not None:
        sim["seed"] = args.seed
    if args.replications is not None:
        sim["replications"] = args.replications
    if args.t_end is not None:
        sim["horizon"] = args.t_end
    if args.levels is not None:
        sim["levels"] = args.levels
    horizon = sim.get("horizon", 100.0)
    return SimConfig(
        n=sim.get("n", 100), model=mf.model, horizon=horizon, warmup=sim.get("warmup", 0.0),
        seed=sim.get("seed", 0), sample_times=tuple(sim.get("sample_times", ())),
        replications=sim.get("replications", 1), initial=sim.get("initial", "empty"),
        levels=sim.get("levels"), replace=sim.get("replace", True),
        mobile_rule=sim.get("mobile_rule", "longest"),
    )


def cmd_simulate(args):
    mf = modelfile.load(args.model)
    if isinstance(mf.model, ChoiceDecomposition):
        raise ModelFileError("general models cannot be simulated")
    cfg = _sim_config(mf, args)
    emp = simulate(cfg)
    out = args.out
    if out in (None, "-"):
        write_csv(emp, sys.stdout)
    else:
        write_csv(emp, out)
        base = os.path.splitext(out)[0]
        write_csv(emp, base + "_timeavg.csv", which="time_average")
        extra = {"csv": os.path.basename(out), "model_type": mf.model_type,
                 "model": modelfile.model_to_dict(mf.model)}
        write_manifest(cfg, base + ".manifest.json", extra)
    return EXIT_OK


def cmd_validate_tables(args):
    abs_tol, rel_tol = ABS_TOL, REL_TOL
    if args.tolerance:
        parts = [float(x) for x in args.tolerance.split(",")]
        abs_tol = parts[0]
        rel_tol = parts[1] if len(parts) > 1 else parts[0]
    report = validate_tables(abs_tol, rel_tol, mu_scale=args.mu_scale)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["table", "column", "level", "phase", "computed", "printed", "abs_diff", "flag"])
            for e in report.entries:
                w.writerow([e.table, e.column, e.level, e.phase, _fmt(e.computed), _fmt(e.printed),
                            _fmt(e.abs_diff), e.flag])
    print(f"tolerances: abs {abs_tol:g} for entries >= 1e-3, rel {rel_tol:g} below")
    for line in report.lines():
        print(line)
    return EXIT_OK if report.passed else EXIT_FAIL


def build_parser():
    p = argparse.ArgumentParser(prog="supermarket-mf",
                                description="Mean-field fixed points, ODEs and simulation of supermarket models.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, model=True):
        if model:
            sp.add_argument("--model", required=True, metavar="FILE", help="JSON model file")
        sp.add_argument("--out", metavar="PATH", help="output CSV (default stdout)")
        sp.add_argument("--levels", type=int, metavar="K", help="truncation level / reported levels")

    sp = sub.add_parser("fixed-point", help="solve the fixed point and report residuals")
    common(sp)
    sp.add_argument("--eps", type=float, metavar="E", help="stopping tolerance of iterative solvers")
    sp.set_defaults(func=cmd_fixed_point)

    sp = sub.add_parser("ode", help="integrate the mean-field ODE")
    common(sp)
    sp.add_argument("--t-end", type=float, metavar="T")
    sp.add_argument("--plot", nargs="?", const=True, default=None, metavar="PNG",
                    help="also write a plot of the level curves")
    sp.set_defaults(func=cmd_ode)

    sp = sub.add_parser("simulate", help="simulate the finite-n system")
    common(sp)
    sp.add_argument("--t-end", type=float, metavar="T", help="simulation horizon")
    sp.add_argument("--seed", type=int, metavar="S")
    sp.add_argument("--replications", type=int, metavar="R")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("validate-tables", help="recompute the reference tables")
    sp.add_argument("--tolerance", metavar="ABS[,REL]", help="override comparison tolerances")
    sp.add_argument("--out", metavar="PATH", help="write the entrywise comparison CSV")
    sp.add_argument("--mu-scale", type=float, default=1.0, help="scale every service sub-generator")
    sp.set_defaults(func=cmd_validate_tables)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ModelFileError as exc:
        print(f"model file error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except StabilityError as exc:
        print(f"stability error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except (InstabilityError, ConvergenceError, IntegrationError, SimulationError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
