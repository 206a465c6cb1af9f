"""Command line front end.

Heavy imports are deferred until after argument parsing so that --threads can
pin the BLAS/OpenMP thread counts through environment variables before numpy
is first loaded; that is also what makes single-threaded runs reproducible
byte for byte.
"""

import argparse
import os
import re
import sys


def _set_threads(n):
    for var in ("OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "OMP_NUM_THREADS",
                "NUMEXPR_NUM_THREADS", "VECLIB_MAXIMUM_THREADS"):
        os.environ[var] = str(n)


def build_parser():
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--threads", type=int, default=None,
                        help="cap BLAS/OpenMP threads (set before numpy loads)")
    shared.add_argument("--out-dir", default=None,
                        help="override the config's output directory")

    p = argparse.ArgumentParser(
        prog="pidesol",
        description="iterative neural solver for parabolic PIDEs")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", parents=[shared],
                         help="train per an experiment config")
    run.add_argument("config")
    run.add_argument("--seed", type=int, default=None,
                     help="train this single seed instead of the config list")

    ts = sub.add_parser("testset", parents=[shared],
                        help="build and cache the reference test set")
    ts.add_argument("config")
    ts.add_argument("--seed", type=int, default=None,
                    help="override the test-set seed")

    sl = sub.add_parser("slice", parents=[shared],
                        help="write a 1-D slice of a checkpointed field")
    sl.add_argument("checkpoint")
    sl.add_argument("axis", help='"t" or "xJ" with 1-based J')
    sl.add_argument("range", help="lo:hi for the varying coordinate")
    sl.add_argument("resolution", type=int)
    sl.add_argument("--config", required=True,
                    help="experiment config naming the problem")
    sl.add_argument("--t-fixed", type=float, default=0.0)
    sl.add_argument("--mc-paths", type=int, default=0,
                    help="add MC oracle columns with this many paths")
    sl.add_argument("--mc-steps", type=int, default=1)
    sl.add_argument("--seed", type=int, default=0, help="MC oracle seed")

    orc = sub.add_parser("oracle", parents=[shared],
                         help="evaluate the reference oracle on CSV points")
    orc.add_argument("config")
    orc.add_argument("points", help="CSV with header t,x1,...,xd")
    orc.add_argument("--seed", type=int, default=None,
                     help="override the oracle seed")
    return p


def cmd_run(args):
    from .bench import ExperimentConfig, fmt, run_experiment
    config = ExperimentConfig.from_json(args.config)
    if args.out_dir is not None:
        config.out_dir = args.out_dir
    if args.seed is not None:
        config.seeds = (args.seed,)
    summary = run_experiment(config, echo=print)
    print(f"mae_mean={fmt(summary['mae_mean'])} "
          f"mae_std={fmt(summary['mae_std'])}")
    print(os.path.join(config.out_dir, "summary.json"))
    return 0


def cmd_testset(args):
    from .bench import ExperimentConfig, build_test_set
    config = ExperimentConfig.from_json(args.config)
    if args.out_dir is not None:
        config.out_dir = args.out_dir
    if args.seed is not None:
        config.test_seed = args.seed
    path = os.path.join(config.out_dir, "test_set.csv")
    ts = build_test_set(config, path=path)
    print(f"{ts.size} points -> {path}")
    return 0


def cmd_slice(args):
    import numpy as np

    from .bench import ExperimentConfig, emit_slice, write_slice_csv
    from .network import HpinnField, load_checkpoint
    from .oracle import McConfig

    config = ExperimentConfig.from_json(args.config)
    problem = config.build_problem()
    net = load_checkpoint(args.checkpoint)
    if net.config.d != problem.d:
        raise SystemExit("checkpoint dimension does not match the problem")
    field = HpinnField(net.config, net.theta, problem.hard_constraint())
    lo, hi = (float(v) for v in args.range.split(":"))
    mc = None
    rng = None
    if args.mc_paths > 0:
        paths = args.mc_paths + args.mc_paths % 2
        mc = McConfig(paths=paths, steps=args.mc_steps, antithetic=True,
                      seed=args.seed)
        rng = np.random.default_rng(args.seed)
    rows = emit_slice(field, problem, args.axis, lo=lo, hi=hi,
                      resolution=args.resolution, t_fixed=args.t_fixed,
                      mc=mc, rng=rng)
    out_dir = args.out_dir or "."
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, f"slice_{args.axis}.csv")
    write_slice_csv(path, rows, args.axis)
    print(path)
    return 0


def cmd_oracle(args):
    import numpy as np

    from .bench import ExperimentConfig, _reference_at, fmt
    from .oracle import McConfig

    config = ExperimentConfig.from_json(args.config)
    problem = config.build_problem()
    with open(args.points) as fh:
        header = fh.readline().strip().split(",")
        rows = [[float(v) for v in line.strip().split(",")]
                for line in fh if line.strip()]
    if header[:1] != ["t"] or len(header) < problem.d + 1:
        raise SystemExit("points file must have columns t,x1,...,xd")

    closed = config.oracle["kind"] == "closed_form"
    if closed:
        sol = problem.solution_field()
    else:
        seed = args.seed if args.seed is not None else config.test_seed
        mc = McConfig(paths=int(config.oracle.get("paths", 10000)),
                      steps=int(config.oracle.get("steps", 1)),
                      antithetic=bool(config.oracle.get("antithetic", True)),
                      seed=seed)
        rng = np.random.default_rng(seed)

    out_dir = args.out_dir or "."
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "oracle_values.csv")
    with open(path, "w") as fh:
        fh.write(",".join(header[:problem.d + 1]) + ",value,se\n")
        for row in rows:
            t = row[0]
            x = np.asarray(row[1:problem.d + 1])
            if closed:
                val = float(sol.values(np.array([t]), x.reshape(1, -1))[0])
                se = None
            else:
                val, se = _reference_at(problem, t, x, mc, rng)
            fh.write(",".join([fmt(v) for v in row[:problem.d + 1]]
                              + [fmt(val), fmt(se)]) + "\n")
    print(path)
    return 0


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    # argparse reads a range like -1.5:1.5 as an option; a leading space keeps
    # it positional and float() ignores it later
    for i, tok in enumerate(argv):
        if re.match(r"^-\d*\.?\d*(e[+-]?\d+)?:", tok, re.IGNORECASE):
            argv[i] = " " + tok
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        _set_threads(args.threads)
    handler = {"run": cmd_run, "testset": cmd_testset,
               "slice": cmd_slice, "oracle": cmd_oracle}[args.command]
    return handler(args)


if __name__ == "__main__":
    raise SystemExit(main())
