"""
Command-line front end.

::

    firstexit sample --config model.json --n 1000000 --seed 1 --out samples.csv
    firstexit euler --config model.json --n 100000 --step 0.0015625 --out euler.csv
    firstexit default-probs samples.csv --horizon 10
    firstexit kstest samples.csv euler.csv --alpha 0.01
    firstexit calibrate --config model.json --out copula.json
    firstexit density --config pair.json --grid 0.1,10,50 --out density.csv
    firstexit reproduce 2 --n 1000000

Data goes to files or standard output; progress, warnings and standard
errors go to standard error.  Exit status: 0 success, 2 invalid input,
3 numerical non-convergence, 4 a reproduced case missed its reference.
"""
import argparse
import json
import logging
import sys

import numpy as np

from . import __version__
from ._backend import backend_name, set_threads
from .analysis import default_probs, ks_2sample_md
from .calibration import calibrate
from .density2d import joint_density
from .euler import euler_sample
from .experiments import CASES, reproduce
from .io import (ConfigError, dump_config, load_config, read_copula, read_samples,
                 write_copula, write_samples)
from .numerics import NonConvergenceError
from .sampler import DegenerateSelectionError, sample

log = logging.getLogger("firstexit")

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NONCONVERGENCE = 3
EXIT_MISMATCH = 4


def _print_table(dist, out=None):
    out = out or sys.stdout
    out.write("count,probability\n")
    for label, p, _ in dist.table():
        out.write(f"{label},{p:.6f}\n")
    for label, p, se in dist.table():
        print(f"{label} = {p:.6f} +- {se:.6f}  (n={dist.scenarios}, T={dist.horizon:g})",
              file=sys.stderr)


def run(cfg, copula=None, method=None, cache=None, report=None):
    """Simulate ``cfg`` and summarize default counts at ``cfg.horizon``.

    Copula runs calibrate (unless ``copula`` is given), sample and count;
    Euler runs simulate paths and count.  Samples go to ``cfg.output`` and a
    JSON summary to ``report`` when those are set.

    Returns
    -------
    (ExitTimeSamples, DefaultDistribution)
    """
    if cfg.method == "copula":
        if copula is None:
            log.info("calibrating %d-dimensional copula", cfg.model.n_dims)
            copula = calibrate(cfg.model, method=method, cache=cache)
        log.info("sampling %d scenarios (backend %s)", cfg.scenarios, backend_name())
        samples = sample(cfg.model, copula, cfg.scenarios, rng=cfg.seed)
        if samples.redraws:
            log.warning("%d degenerate scenario(s) redrawn", samples.redraws)
    else:
        log.info("Euler: %d scenarios, step %g, horizon %g",
                 cfg.scenarios, cfg.step, cfg.horizon)
        samples = euler_sample(cfg.model, cfg.euler)
    dist = default_probs(samples, cfg.horizon)
    if cfg.output:
        write_samples(cfg.output, samples)
        log.info("wrote %s", cfg.output)
    if report:
        doc = {"config": json.loads(dump_config(cfg)),
               "probs": dist.probs.tolist(), "stderr": dist.stderr.tolist(),
               "redraws": samples.redraws}
        if copula is not None:
            doc["copula"] = copula.to_dict()
        with open(report, "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return samples, dist


def _load_run(args, method):
    cfg = load_config(args.config)
    return cfg.override(method=method, scenarios=args.n, seed=args.seed,
                        horizon=args.horizon, step=getattr(args, "step", None),
                        output=args.out)


def _cmd_sample(args):
    cfg = _load_run(args, "copula")
    cop = read_copula(args.copula) if args.copula else None
    _, dist = run(cfg, copula=cop, method=args.method, cache=args.cache, report=args.report)
    _print_table(dist)
    return EXIT_OK


def _cmd_euler(args):
    cfg = _load_run(args, "euler")
    _, dist = run(cfg, report=args.report)
    _print_table(dist)
    return EXIT_OK


def _cmd_calibrate(args):
    cfg = load_config(args.config)
    cop = calibrate(cfg.model, method=args.method, cache=args.cache)
    if args.out:
        write_copula(args.out, cop)
    else:
        json.dump(cop.to_dict(), sys.stdout, indent=2, sort_keys=True)
        sys.stdout.write("\n")
    if cop.repair["max_eigen_clip"] > 0:
        log.warning("calibrated matrix was repaired: %s", cop.repair)
    return EXIT_OK


def _parse_grid(text):
    try:
        lo, hi, k = text.split(",")
        lo, hi, k = float(lo), float(hi), int(k)
    except ValueError:
        raise ConfigError("--grid", "expected LO,HI,COUNT") from None
    if not (0 < lo < hi) or k < 1:
        raise ConfigError("--grid", "need 0 < LO < HI and COUNT >= 1")
    return np.linspace(lo, hi, k)


def _cmd_density(args):
    cfg = load_config(args.config)
    if cfg.model.n_dims != 2:
        raise ConfigError("dims", "density needs exactly two coordinates")
    grid = _parse_grid(args.grid)
    s, t = np.meshgrid(grid, grid, indexing="ij")
    f = joint_density(cfg.model.pair(0, 1), s.ravel(), t.ravel())
    out = open(args.out, "w") if args.out else sys.stdout
    try:
        out.write("s,t,density\n")
        for a, b, v in zip(s.ravel(), t.ravel(), np.atleast_1d(f)):
            out.write(f"{float(a)!r},{float(b)!r},{float(v)!r}\n")
    finally:
        if args.out:
            out.close()
    return EXIT_OK


def _cmd_default_probs(args):
    dist = default_probs(read_samples(args.samples), args.horizon)
    _print_table(dist)
    return EXIT_OK


def _cmd_kstest(args):
    a, b = read_samples(args.a), read_samples(args.b)
    r = ks_2sample_md(a, b, alpha=args.alpha, permutations=args.permutations, seed=args.seed)
    print("statistic,p_value,decision,n_a,n_b,excluded_a,excluded_b")
    print(f"{r.statistic:.6f},{r.p_value:.6f},{r.decision},{r.n_a},{r.n_b},"
          f"{r.excluded_a},{r.excluded_b}")
    return EXIT_OK


def _cmd_reproduce(args):
    ids = sorted(CASES) if args.case == "all" else [int(args.case)]
    reports = [reproduce(i, n=args.n, seed=args.seed, cache=args.cache,
                         euler_scenarios=args.euler) for i in ids]
    text = "\n\n".join(r.format() for r in reports) + "\n"
    sys.stdout.write(text)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    return EXIT_OK if all(r.passed for r in reports) else EXIT_MISMATCH


def build_parser():
    p = argparse.ArgumentParser(prog="firstexit",
                                description="Joint first exit times of correlated Brownian motions.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads (default: all cores; never changes results)")
    p.add_argument("-q", "--quiet", action="store_true", help="only warnings on stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", required=True, help="model JSON file")
        sp.add_argument("--n", type=int, default=None, help="number of scenarios")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--horizon", type=float, default=None)
        sp.add_argument("--out", default=None, help="output file")
        sp.add_argument("--report", default=None, help="JSON summary file")

    sp = sub.add_parser("sample", help="copula sampler run")
    common(sp)
    sp.add_argument("--copula", default=None, help="use a calibrated copula file")
    sp.add_argument("--method", choices=("quadrature", "euler_mc"), default=None,
                    help="calibration method")
    sp.add_argument("--cache", default=None, help="calibration cache file")
    sp.set_defaults(func=_cmd_sample)

    sp = sub.add_parser("euler", help="Euler baseline run")
    common(sp)
    sp.add_argument("--step", type=float, default=None)
    sp.set_defaults(func=_cmd_euler)

    sp = sub.add_parser("calibrate", help="calibrate the Gaussian copula")
    sp.add_argument("--config", required=True)
    sp.add_argument("--method", choices=("quadrature", "euler_mc"), default="quadrature")
    sp.add_argument("--cache", default=None)
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=_cmd_calibrate)

    sp = sub.add_parser("density", help="joint exit-time density on a grid")
    sp.add_argument("--config", required=True)
    sp.add_argument("--grid", default="0.1,10,50", help="LO,HI,COUNT for both axes")
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=_cmd_density)

    sp = sub.add_parser("default-probs", help="default-count probabilities of a sample file")
    sp.add_argument("samples")
    sp.add_argument("--horizon", type=float, default=10.0)
    sp.set_defaults(func=_cmd_default_probs)

    sp = sub.add_parser("kstest", help="two-sample multidimensional K-S test")
    sp.add_argument("a")
    sp.add_argument("b")
    sp.add_argument("--alpha", type=float, default=0.01)
    sp.add_argument("--permutations", type=int, default=199)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=_cmd_kstest)

    sp = sub.add_parser("reproduce", help="rerun a reference case")
    sp.add_argument("case", choices=[str(i) for i in sorted(CASES)] + ["all"])
    sp.add_argument("--n", type=int, default=None)
    sp.add_argument("--seed", type=int, default=1)
    sp.add_argument("--euler", type=int, default=0, metavar="N",
                    help="also run the Euler baseline with N scenarios")
    sp.add_argument("--cache", default=None)
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=_cmd_reproduce)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    set_threads(args.threads)
    try:
        return args.func(args)
    except (NonConvergenceError, DegenerateSelectionError) as exc:
        print(f"error: numerical non-convergence: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except (ConfigError, ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
