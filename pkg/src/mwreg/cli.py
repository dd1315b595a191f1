"""Command-line interface.

Subcommands: fit, predict, gibbs, cv, simulate, experiment.  Every flag
can also be supplied through a config file of key=value lines (keys are
the long flag names with underscores); explicit flags win.  MWR_SEED in
the environment provides the default seed.  Exit codes are stable for
scripting: 0 success, 1 usage, 2 data or shape problems, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .fileio import (
    read_draws,
    read_model,
    read_tensor,
    write_draws,
    write_model,
    write_tensor,
)
from .fitting import FitConfig, SingularSystemError, fit, predict
from .posterior import (
    DegeneratePosteriorError,
    GibbsConfig,
    credible_intervals,
    dic,
    gibbs,
    posterior_predictive,
)
from .simulation import SimSpec, expand_grid, rpe, run_grid, simulate, write_results_csv
from .tensors import DenseTensor

__all__ = ["main", "entry", "UsageError"]

_PREDICTIVE_STREAM = 2
_FOLD_STREAM = 3


class UsageError(Exception):
    """Bad command line or config: exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _default_seed() -> int:
    raw = os.environ.get("MWR_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"MWR_SEED must be an integer, got {raw!r}") from None


def _parse_dims(text: str) -> tuple:
    parts = text.replace("x", ",").split(",")
    try:
        dims = tuple(int(p) for p in parts if p != "")
    except ValueError:
        raise UsageError(f"cannot parse dims from {text!r}") from None
    if not dims:
        raise UsageError(f"cannot parse dims from {text!r}")
    return dims


def _parse_list(text: str, kind, label: str) -> list:
    try:
        return [kind(p) for p in text.split(",") if p != ""]
    except ValueError:
        raise UsageError(f"cannot parse {label} list from {text!r}") from None


def _require(args, name: str, flag: str):
    value = getattr(args, name)
    if value is None:
        raise UsageError(f"{flag} is required")
    return value


def _build_parsers():
    parser = _Parser(prog="mwreg", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command")
    registry = {}

    def add(name, help_text):
        # add_parser reuses the parent class, so errors raise UsageError
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="key=value file mirroring the flags")
        registry[name] = p
        return p

    seed = _default_seed()

    p = add("fit", "fit a low-rank coefficient array")
    p.add_argument("--x", help="predictor tensor file")
    p.add_argument("--y", help="response tensor file")
    p.add_argument("--rank", type=int)
    p.add_argument("--lambda", dest="lam", type=float, default=0.0)
    p.add_argument("--out", help="model file to write")
    p.add_argument("--seed", type=int, default=seed)
    p.add_argument("--max-iters", type=int, default=500)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--anneal-steps", type=int, default=10)
    p.add_argument("--no-center", action="store_true")
    p.add_argument("--restarts", type=int, default=1)
    p.set_defaults(func=cmd_fit)

    p = add("predict", "predict responses with a fitted model")
    p.add_argument("--model")
    p.add_argument("--x")
    p.add_argument("--out")
    p.set_defaults(func=cmd_predict)

    p = add("gibbs", "sample the posterior over coefficients and noise")
    p.add_argument("--x")
    p.add_argument("--y")
    p.add_argument("--rank", type=int)
    p.add_argument("--lambda", dest="lam", type=float, default=0.0)
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--out", help="draws file to write")
    p.add_argument("--seed", type=int, default=seed)
    p.add_argument("--burn-in", type=int, default=0)
    p.add_argument("--thin", type=int, default=1)
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--no-center", action="store_true")
    p.add_argument("--x-new", help="predictors to form predictive intervals for")
    p.add_argument("--y-new", help="held-out responses to score coverage against")
    p.add_argument("--intervals-out", help="CSV for the intervals (default stdout)")
    p.add_argument("--dic", action="store_true", help="also report DIC")
    p.set_defaults(func=cmd_gibbs)

    p = add("cv", "cross-validate rank and penalty on one dataset")
    p.add_argument("--x")
    p.add_argument("--y")
    p.add_argument("--ranks", help="comma-separated candidate ranks")
    p.add_argument("--lambdas", help="comma-separated candidate penalties")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--seed", type=int, default=seed)
    p.add_argument("--no-center", action="store_true")
    p.set_defaults(func=cmd_cv)

    p = add("simulate", "generate one dataset from the factorial model")
    p.add_argument("--spec", help="JSON file of generator settings")
    p.add_argument("--n", type=int)
    p.add_argument("--in-dims")
    p.add_argument("--out-dims")
    p.add_argument("--rank", type=int)
    p.add_argument("--snr", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=seed)
    p.add_argument("--correlation", default="none")
    p.add_argument("--rho", type=float, default=0.6)
    p.add_argument("--out-prefix", help="prefix for the x/y/b tensor files")
    p.set_defaults(func=cmd_simulate)

    p = add("experiment", "run a factorial grid and write the results CSV")
    p.add_argument("--grid", help="JSON grid description")
    p.add_argument("--out", help="results CSV path")
    p.add_argument("--parallel", type=int, default=1)
    p.set_defaults(func=cmd_experiment)

    return parser, registry


def _config_argv(path: str, cmd_parser) -> list:
    out = []
    try:
        with open(path) as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise UsageError(f"cannot read config file: {exc}") from None
    for lineno, line in enumerate(lines, 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, eq, value = line.partition("=")
        if not eq:
            raise UsageError(f"{path}:{lineno}: expected key=value, got {line!r}")
        flag = "--" + key.strip().replace("_", "-")
        value = value.strip()
        action = cmd_parser._option_string_actions.get(flag)
        if action is None or flag == "--config":
            raise UsageError(f"{path}:{lineno}: unknown config key {key.strip()!r}")
        if isinstance(action, argparse._StoreTrueAction):
            low = value.lower()
            if low in ("1", "true", "yes", "on"):
                out.append(flag)
            elif low not in ("0", "false", "no", "off"):
                raise UsageError(f"{path}:{lineno}: {key.strip()} must be boolean")
        else:
            out.extend([flag, value])
    return out


def _parse(argv):
    parser, registry = _build_parsers()
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError("a command is required (fit, predict, gibbs, cv, simulate, experiment)")
    if getattr(args, "config", None):
        injected = _config_argv(args.config, registry[args.command])
        args = parser.parse_args([argv[0]] + injected + list(argv[1:]))
    return args


# ---------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------


def _fit_config(args, rank: int) -> FitConfig:
    if rank < 1:
        raise UsageError("--rank must be at least 1")
    if args.lam < 0 or not np.isfinite(args.lam):
        raise UsageError("--lambda must be finite and non-negative")
    if args.max_iters < 1:
        raise UsageError("--max-iters must be at least 1")
    if not args.tol > 0:
        raise UsageError("--tol must be positive")
    if args.anneal_steps < 0:
        raise UsageError("--anneal-steps must be non-negative")
    if args.restarts < 1:
        raise UsageError("--restarts must be at least 1")
    return FitConfig(
        rank=rank,
        lam=args.lam,
        max_iters=args.max_iters,
        rel_tol=args.tol,
        anneal_steps=args.anneal_steps,
        seed=args.seed,
        center_data=not args.no_center,
        n_starts=args.restarts,
    )


def cmd_fit(args) -> None:
    x = read_tensor(_require(args, "x", "--x"))
    y = read_tensor(_require(args, "y", "--y"))
    rank = _require(args, "rank", "--rank")
    out = _require(args, "out", "--out")
    cfg = _fit_config(args, rank)
    result = fit(x, y, cfg)
    write_model(out, result, cfg.lam, cfg.seed)
    print(f"objective {result.objective_trace[-1]:.17g}")
    print(f"iterations {result.iterations}")
    print(f"converged {str(result.converged).lower()}")
    print(f"model written to {out}")


def cmd_predict(args) -> None:
    result, _, _ = read_model(_require(args, "model", "--model"))
    x = read_tensor(_require(args, "x", "--x"))
    out = _require(args, "out", "--out")
    y_hat = predict(x, result)
    write_tensor(out, y_hat)
    print(f"predictions written to {out}")


def _interval_rows(lo: DenseTensor, hi: DenseTensor):
    dims = lo.dims
    lo_v = lo.array.ravel(order="F")
    hi_v = hi.array.ravel(order="F")
    idx = np.unravel_index(np.arange(lo_v.size), dims, order="F")
    for k in range(lo_v.size):
        cell = "x".join(str(int(idx[d][k]) + 1) for d in range(len(dims)))
        yield cell, lo_v[k], hi_v[k]


def cmd_gibbs(args) -> None:
    x = read_tensor(_require(args, "x", "--x"))
    y = read_tensor(_require(args, "y", "--y"))
    rank = _require(args, "rank", "--rank")
    out = _require(args, "out", "--out")
    if rank < 1:
        raise UsageError("--rank must be at least 1")
    if args.lam < 0 or not np.isfinite(args.lam):
        raise UsageError("--lambda must be finite and non-negative")
    if args.samples < 1:
        raise UsageError("--samples must be at least 1")
    if args.burn_in < 0:
        raise UsageError("--burn-in must be non-negative")
    if args.thin < 1:
        raise UsageError("--thin must be at least 1")
    if not 0.0 < args.level < 1.0:
        raise UsageError("--level must be in (0, 1)")
    cfg = GibbsConfig(
        rank=rank,
        n_samples=args.samples,
        lam=args.lam,
        burn_in=args.burn_in,
        thin=args.thin,
        seed=args.seed,
        credible_level=args.level,
        center_data=not args.no_center,
    )
    draws = gibbs(x, y, cfg)
    write_draws(out, draws, cfg.lam, cfg.seed)
    print(f"samples {len(draws)}")
    print(f"sigma2 mean {float(draws.sigma2s.mean()):.17g}")
    print(f"draws written to {out}")
    if args.dic:
        print(f"dic {dic(x, y, draws):.17g}")
    if args.x_new is None:
        return
    x_new = read_tensor(args.x_new)
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, _PREDICTIVE_STREAM)))
    pdraws = posterior_predictive(x_new, draws, rng)
    lo, hi = credible_intervals(pdraws, args.level)
    lines = ["cell,lo,hi"]
    lines += [f"{cell},{l:.17g},{h:.17g}" for cell, l, h in _interval_rows(lo, hi)]
    if args.intervals_out:
        with open(args.intervals_out, "w") as fh:
            fh.write("\n".join(lines) + "\n")
        print(f"intervals written to {args.intervals_out}")
    else:
        print("\n".join(lines))
    if args.y_new is not None:
        y_new = read_tensor(args.y_new)
        if y_new.dims != lo.dims:
            raise ValueError(f"y-new dims {y_new.dims} do not match intervals {lo.dims}")
        ya = y_new.array
        covered = (ya >= lo.array) & (ya <= hi.array)
        print(f"coverage {float(covered.mean()):.6g}")
        print(f"mean relative length {float((hi.array - lo.array).mean() / ya.std()):.6g}")


def cmd_cv(args) -> None:
    x = read_tensor(_require(args, "x", "--x"))
    y = read_tensor(_require(args, "y", "--y"))
    ranks = _parse_list(_require(args, "ranks", "--ranks"), int, "rank")
    lams = _parse_list(_require(args, "lambdas", "--lambdas"), float, "lambda")
    if not ranks or not lams:
        raise UsageError("--ranks and --lambdas must be non-empty")
    if any(r < 1 for r in ranks):
        raise UsageError("candidate ranks must be at least 1")
    if any(l < 0 for l in lams):
        raise UsageError("candidate lambdas must be non-negative")
    n = x.dims[0]
    if args.folds < 2:
        raise UsageError("--folds must be at least 2")
    if args.folds > n:
        raise UsageError(f"--folds is {args.folds} but there are only {n} observations")
    rng = np.random.default_rng(np.random.SeedSequence((args.seed, _FOLD_STREAM)))
    perm = rng.permutation(n)
    folds = np.array_split(perm, args.folds)
    print("rank,lambda,mean_rpe")
    best = None
    for rank in ranks:
        for lam in lams:
            scores = []
            for hold in folds:
                mask = np.ones(n, dtype=bool)
                mask[hold] = False
                x_tr = DenseTensor(x.array[mask])
                y_tr = DenseTensor(y.array[mask])
                cfg = FitConfig(rank=rank, lam=lam, seed=args.seed,
                                center_data=not args.no_center)
                res = fit(x_tr, y_tr, cfg)
                y_hat = predict(DenseTensor(x.array[~mask]), res)
                scores.append(rpe(DenseTensor(y.array[~mask]), y_hat))
            mean = float(np.mean(scores))
            print(f"{rank},{lam:g},{mean:.6g}")
            if best is None or mean < best[2]:
                best = (rank, lam, mean)
    print(f"selected rank={best[0]} lambda={best[1]:g} (mean_rpe={best[2]:.6g})")


def _sim_spec_from_args(args) -> SimSpec:
    if args.spec is not None:
        with open(args.spec) as fh:
            raw = json.load(fh)
        if not isinstance(raw, dict):
            raise ValueError(f"{args.spec}: spec must be a JSON object")
        allowed = {"n", "in_dims", "out_dims", "rank", "snr", "seed", "correlation", "rho"}
        unknown = set(raw) - allowed
        if unknown:
            raise ValueError(f"{args.spec}: unknown keys {sorted(unknown)}")
        raw.setdefault("out_dims", [])
        return SimSpec(**raw)
    n = _require(args, "n", "--n")
    rank = _require(args, "rank", "--rank")
    in_dims = _parse_dims(_require(args, "in_dims", "--in-dims"))
    out_dims = _parse_dims(args.out_dims) if args.out_dims else ()
    try:
        return SimSpec(
            n=n,
            in_dims=in_dims,
            out_dims=out_dims,
            rank=rank,
            snr=args.snr,
            seed=args.seed,
            correlation=args.correlation,
            rho=args.rho,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_simulate(args) -> None:
    prefix = _require(args, "out_prefix", "--out-prefix")
    spec = _sim_spec_from_args(args)
    x, y, true_b = simulate(spec)
    if true_b is None:
        b_arr = np.zeros(spec.in_dims + spec.out_dims)
    else:
        b_arr = true_b.materialize().array
    paths = [f"{prefix}_x.mwt", f"{prefix}_y.mwt", f"{prefix}_b.mwt"]
    write_tensor(paths[0], x)
    write_tensor(paths[1], y)
    write_tensor(paths[2], DenseTensor(b_arr))
    for p in paths:
        print(f"wrote {p}")


def cmd_experiment(args) -> None:
    grid_path = _require(args, "grid", "--grid")
    out = _require(args, "out", "--out")
    if args.parallel < 1:
        raise UsageError("--parallel must be at least 1")
    with open(grid_path) as fh:
        grid = json.load(fh)
    cells = expand_grid(grid)
    results = run_grid(cells, max_workers=args.parallel)
    write_results_csv(results, out)
    failures = sum(1 for _, _, err in results if err is not None)
    print(f"cells {len(results)}")
    print(f"failures {failures}")
    print(f"results written to {out}")


def main(argv=None) -> int:
    if argv is None:
        argv = sys.argv[1:]
    try:
        args = _parse(list(argv))
        args.func(args)
        return 0
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (SingularSystemError, DegeneratePosteriorError, np.linalg.LinAlgError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entry() -> None:
    sys.exit(main())
