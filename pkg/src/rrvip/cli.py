"""Command-line experiment harness.

Subcommands: gen, run, sweep, clt, lemma-check, timing.  Every run is fully
determined by (config file, flags, seed); flags win over the config file.
CSV output carries full double precision (17 significant digits) and the
report paths render matplotlib figures next to the delimited output unless
--no-figures is passed.

Exit codes: 0 success, 2 parameter error, 3 divergence, 4 invariant violation.
"""

from __future__ import annotations

import argparse
import json
import math
import struct
import sys
import time

import numpy as np

from . import analysis, plotting
from .errors import (
    DivergenceError,
    InvariantViolation,
    NotConvergedError,
    ParameterError,
)
from .problems import (
    QuadraticGameSpec,
    exact_solution,
    gamma_max,
    gamma_max_branches,
    generate_generic_affine,
    generate_quadratic_game,
    make_wgan_problem,
    problem_constants,
    problem_from_json,
    problem_to_json,
)
from .samplers import rng_for
from .solver import (
    PLAIN,
    RRRESH,
    RRROM,
    RRROM_RRRESH,
    VARIANTS,
    RunConfig,
    extrapolated_series,
    make_coupled,
    run_lockstep_chains,
    run_variant,
)

EXIT_OK = 0
EXIT_PARAMETER = 2
EXIT_DIVERGENCE = 3
EXIT_VIOLATION = 4


def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    if isinstance(x, float):
        return format(x, ".17g")
    return str(x)


def _write_csv(path: str, header: list, rows: list) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _write_json(path: str, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def _load_problem(path: str):
    with open(path, "r", encoding="utf-8") as fh:
        return problem_from_json(fh.read())


def _apply_config(args: argparse.Namespace, parser: argparse.ArgumentParser) -> argparse.Namespace:
    """Fill parser defaults from --config JSON; explicit flags win."""
    if not getattr(args, "config", None):
        return args
    with open(args.config, "r", encoding="utf-8") as fh:
        config = json.load(fh)
    section = config.get(args.command, config)
    for key, value in section.items():
        dest = key.replace("-", "_")
        if not hasattr(args, dest):
            continue
        if getattr(args, dest) == parser.get_default(dest):
            setattr(args, dest, value)
    return args


def _resolved_config(args: argparse.Namespace) -> dict:
    return {k: v for k, v in vars(args).items()
            if k not in ("func", "parser") and not k.startswith("_")}


def _check_admissible(problem, gammas, bias_suite: bool = False) -> None:
    consts = problem_constants(problem)
    branches = gamma_max_branches(problem.n, consts.mu, consts.L_max)
    if bias_suite:
        branches["mu/(3 n L_max^2)"] = consts.mu / (3 * problem.n * consts.L_max ** 2)
        branches["mu^(3/5)/(8 n L_max^(3/5))"] = consts.mu ** 0.6 / (8 * problem.n * consts.L_max ** 0.6)
    limit_name, limit = min(branches.items(), key=lambda kv: kv[1])
    ceiling = limit / 2.0 if bias_suite else limit
    for g in gammas:
        if g > ceiling:
            suffix = "/2 (so 2*gamma stays admissible)" if bias_suite else ""
            raise ParameterError(
                f"gamma {g:g} exceeds gamma_max{suffix} = {ceiling:.6e}; "
                f"binding branch: {limit_name}")


# ---------------------------------------------------------------------------
# gen

def cmd_gen(args) -> int:
    if args.kind == "quadratic":
        spec = QuadraticGameSpec(n=args.n, d=args.d, mu=args.mu, L=args.L,
                                 coupling_max=args.coupling_max, seed=args.seed,
                                 zero_offsets=args.zero_offsets)
        problem = generate_quadratic_game(spec)
    elif args.kind == "wgan":
        mean = np.array([float(v) for v in args.target_mean.split(",")])
        problem = make_wgan_problem(mean, args.cov_scale, args.m_samples, seed=args.seed)
    elif args.kind == "affine":
        problem = generate_generic_affine(args.n, args.d, mu=args.mu, L=args.L,
                                          skew_scale=args.skew_scale,
                                          offset_scale=args.offset_scale, seed=args.seed)
    else:
        raise ParameterError(f"unknown problem kind {args.kind!r}")

    text = problem_to_json(problem)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)

    consts = problem_constants(problem)
    print(f"x_star = {np.array2string(consts.x_star, precision=6, threshold=12)}", file=sys.stderr)
    print(f"mu = {_fmt(consts.mu)}", file=sys.stderr)
    print(f"L_max = {_fmt(consts.L_max)}", file=sys.stderr)
    print(f"sigma_star_sq = {_fmt(consts.sigma_star_sq)}", file=sys.stderr)
    if consts.mu > 0:
        print(f"gamma_max = {_fmt(gamma_max(problem.n, consts.mu, consts.L_max))}", file=sys.stderr)
    else:
        print("gamma_max = n/a (mu <= 0)", file=sys.stderr)
    return EXIT_OK


# ---------------------------------------------------------------------------
# run

def cmd_run(args) -> int:
    problem = _load_problem(args.problem)
    x_star = exact_solution(problem)
    d = problem.d
    if args.x0 == "zero":
        x0 = np.zeros(d)
    elif args.x0 == "gauss":
        x0 = rng_for(args.seed, 99, 0).standard_normal(d)
    else:
        x0 = np.array([float(v) for v in args.x0.split(",")])
    err0 = float(np.dot(x0 - x_star, x0 - x_star))
    if err0 == 0.0:
        raise ParameterError("x0 coincides with x*; relative error undefined")

    extrapolated = args.variant in (RRROM, RRROM_RRRESH)
    err_sum = None
    extrap_last_sum = None
    extrap_avg_sum = None
    wall_ms = 0.0
    diverged_epoch = None
    for s in range(args.seeds):
        config = RunConfig(gamma=args.gamma, epochs=args.epochs, perturb=args.perturb,
                           noise_scale=args.noise_scale, base_method=args.method,
                           variant=args.variant, x0=x0, seed=args.seed + s,
                           sigma_star_sq=args.sigma_star, inner_noise=args.inner_noise,
                           burn_in=args.burn_in)
        plan = None
        if extrapolated:
            mode = "reshuffle" if args.variant == RRROM_RRRESH else "withrep"
            plan = make_coupled(config.seed, independent=args.independent_perms, mode=mode)
        traj, companion = run_variant(problem, config, plan)
        wall_ms += traj.wall_time * 1e3
        if traj.diverged_at is not None:
            diverged_epoch = traj.diverged_at if diverged_epoch is None else min(
                diverged_epoch, traj.diverged_at)
        err = traj.per_epoch_error
        if err_sum is None:
            err_sum = np.zeros_like(err)
            extrap_last_sum = np.zeros_like(err)
            extrap_avg_sum = np.full_like(err, np.nan)
        m = min(err_sum.size, err.size)
        err_sum[:m] += err[:m]
        if extrapolated:
            last, avg = extrapolated_series(traj, companion, burn_in=args.burn_in)
            dl = last - x_star
            extrap_last_sum[:m] += np.einsum("ij,ij->i", dl, dl)[:m]
            da = avg - x_star
            ea = np.einsum("ij,ij->i", da, da)
            with np.errstate(invalid="ignore"):
                extrap_avg_sum[:m] = np.where(np.isnan(extrap_avg_sum[:m]), 0.0,
                                              extrap_avg_sum[:m]) + ea[:m]
        if args.dump_iterates and s == 0:
            with open(args.dump_iterates, "wb") as fh:
                fh.write(struct.pack("<Q", d))
                fh.write(np.ascontiguousarray(traj.epoch_iterates, dtype=np.float64).tobytes())

    err_mean = err_sum / args.seeds
    header = ["epoch", "err_sq", "err_sq_extrap_last", "err_sq_extrap_avg",
              "rel_err_log10", "wall_ms", "status"]
    rows = []
    for k in range(err_mean.size):
        el = extrap_last_sum[k] / args.seeds if extrapolated else None
        ea = extrap_avg_sum[k] / args.seeds if extrapolated else None
        # wall time is kept out of the CSV by default so reruns are
        # byte-identical; --wall-times opts in
        wall = wall_ms if (args.wall_times and k == err_mean.size - 1) else None
        rows.append([k, float(err_mean[k]), el,
                     None if ea is None or math.isnan(ea) else float(ea),
                     math.log10(err_mean[k] / err0) if err_mean[k] > 0 else None,
                     wall, "ok"])
    if diverged_epoch is not None:
        rows.append([diverged_epoch + 1, None, None, None, None, None, "diverged"])
    _write_csv(args.out + ".csv", header, rows)

    if not args.no_figures:
        series = {args.variant: np.log10(np.maximum(err_mean, 1e-300) / err0)}
        if extrapolated:
            series[args.variant + " (extrap last)"] = np.log10(
                np.maximum(extrap_last_sum / args.seeds, 1e-300) / err0)
        plotting.error_curve_figure(series, args.out + ".png")
    _write_json(args.out + ".json", {"config": _resolved_config(args),
                                     "wall_ms_total": wall_ms})
    print(f"wrote {args.out}.csv", file=sys.stderr)
    return EXIT_DIVERGENCE if diverged_epoch is not None else EXIT_OK


# ---------------------------------------------------------------------------
# sweep

def cmd_sweep(args) -> int:
    problem = _load_problem(args.problem)
    gammas = [float(v) for v in args.gammas.split(",")] if args.gammas else []
    if not gammas:
        raise ParameterError("empty gamma list")
    gammas = sorted(gammas)

    if args.suite == "bias":
        _check_admissible(problem, gammas, bias_suite=True)
        curve = analysis.bias_curve(problem, gammas, estimator=args.estimator,
                                    seeds=args.seeds, seed=args.seed)
        rows = list(zip(curve.gammas, curve.bias_plain, curve.bias_extrap))
        _write_csv(args.out + ".csv", ["gamma", "bias_plain", "bias_extrap"], rows)
        summary = {"config": _resolved_config(args),
                   "slope_plain": curve.slope_plain, "slope_extrap": curve.slope_extrap}
        _write_json(args.out + ".json", summary)
        print(f"slope_plain = {_fmt(curve.slope_plain) or 'unavailable'}")
        print(f"slope_extrap = {_fmt(curve.slope_extrap) or 'unavailable'}")
        if not args.no_figures:
            plotting.loglog_curve_figure(gammas, {"plain": curve.bias_plain,
                                                  "extrapolated": curve.bias_extrap},
                                         args.out + ".png", "stationary bias")
        return EXIT_OK

    _check_admissible(problem, gammas)
    config = RunConfig(gamma=gammas[0], epochs=0, variant=args.variant,
                       perturb=args.perturb, seed=args.seed)
    if args.suite == "mse":
        values = analysis.mse_plateau(problem, config, gammas, seeds=args.seeds)
        label = "plateau_mse"
    elif args.suite == "fourth":
        values = analysis.fourth_plateau(problem, config, gammas, seeds=args.seeds)
        label = "plateau_fourth"
    else:
        raise ParameterError(f"unknown sweep suite {args.suite!r}")
    slope = analysis.fit_loglog_slope(list(zip(gammas, values))) if len(gammas) >= 2 else None
    _write_csv(args.out + ".csv", ["gamma", label], list(zip(gammas, values)))
    _write_json(args.out + ".json", {"config": _resolved_config(args), "slope": slope})
    print(f"slope = {_fmt(slope) or 'unavailable'}")
    if not args.no_figures:
        plotting.loglog_curve_figure(gammas, {label: values}, args.out + ".png", label)
    return EXIT_OK


# ---------------------------------------------------------------------------
# clt

def cmd_clt(args) -> int:
    problem = _load_problem(args.problem)
    consts = problem_constants(problem)
    Ts = [int(v) for v in args.T.split(",")]
    if args.gammas:
        gammas = [float(v) for v in args.gammas.split(",")]
    else:
        gmax = gamma_max(problem.n, consts.mu, consts.L_max)
        gammas = [float(f) * gmax for f in args.gamma_fracs.split(",")]

    rows = []
    hist = {}
    for g in gammas:
        for T in Ts:
            config = RunConfig(gamma=g, epochs=T, seed=args.seed, perturb=args.perturb)
            sample = analysis.clt_harness(problem, config, args.observable, T, args.trials)
            averages = sample.averages
            if args.trials >= 4:
                q75, q25 = np.percentile(averages, [75, 25])
                print(f"gamma={g:.6e} T={T}: IQR of T-averaged {args.observable} = {q75 - q25:.6e}")
            for trial in range(args.trials):
                rows.append([T, g, trial, float(averages[trial]),
                             float(sample.normalized_sums[trial])])
            hist[f"T={T}, gamma={g:.2e}"] = averages
    _write_csv(args.out + ".csv", ["T", "gamma", "trial", "avg_value", "normalized_sum"], rows)
    _write_json(args.out + ".json", {"config": _resolved_config(args)})
    if not args.no_figures:
        plotting.histogram_grid_figure(hist, args.out + ".png",
                                       f"T-averaged {args.observable}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# lemma-check

def _check_fourth_moment_suite(instances: int, seed: int) -> list:
    failures = []
    rng = rng_for(seed, 31, 0)
    for t in range(instances):
        n = int(rng.integers(2, 9))
        d = int(rng.integers(1, 6))
        X = rng.standard_normal((n, d))
        for k in range(1, n + 1):
            report = analysis.full_moment_report(list(X), k)
            scale = max(1e-300, abs(report.brute))
            if abs(report.exact - report.brute) > 1e-10 * max(1.0, scale):
                failures.append(f"instance {t}: exact != brute at n={n} k={k}")
            if report.bound < report.exact - 1e-12:
                failures.append(f"instance {t}: bound < exact at n={n} k={k}")
    return failures


def _check_jacobian_suite(instances: int, perms: int, seed: int, gamma=None) -> tuple:
    failures = []
    informational = False
    rng = rng_for(seed, 32, 0)
    for t in range(instances):
        n = int(rng.integers(2, 7))
        d = int(rng.integers(2, 7))
        problem = generate_generic_affine(n, d, mu=0.5, L=2.0, seed=int(rng.integers(0, 2 ** 31)))
        consts = problem_constants(problem)
        gmax = gamma_max(n, max(consts.mu, 1e-6), consts.L_max)
        g = gamma if gamma is not None else gmax / 2.0
        if g > gmax:
            informational = True
        rep = analysis.jacobian_bound_check(problem, g, perms, seed=seed + t)
        if not rep["holds"]:
            failures.append(
                f"instance {t}: max norm {rep['max_norm']:.6f} exceeds bound {rep['bound']:.6f} "
                f"at gamma={g:.3e} (gamma_max={gmax:.3e})")
    return failures, informational


def _check_prop_bounds_suite(instances: int, seed: int, points: int = 1000) -> list:
    failures = []
    rng = rng_for(seed, 33, 0)
    for t in range(instances):
        if t % 2 == 0:
            problem = generate_quadratic_game(QuadraticGameSpec(
                n=20, d=5, mu=1.0, L=float(rng.uniform(1, 5)), seed=int(rng.integers(0, 2 ** 31))))
        else:
            problem = generate_generic_affine(int(rng.integers(2, 8)), int(rng.integers(2, 6)),
                                              seed=int(rng.integers(0, 2 ** 31)))
        consts = problem_constants(problem)
        L2 = consts.L_i ** 2
        for _ in range(points):
            x = consts.x_star + rng.standard_normal(problem.d) * rng.uniform(0.1, 10)
            values = problem.matrices @ x + problem.offsets
            F = values.mean(axis=0)
            dev = values - F
            dist_sq = float(np.dot(x - consts.x_star, x - consts.x_star))
            lhs2 = float(np.einsum("ij,ij->i", dev, dev).mean())
            rhs2 = 2.0 * float(L2.mean()) * dist_sq + 2.0 * consts.sigma_star_sq
            lhs4 = float((np.einsum("ij,ij->i", dev, dev) ** 2).mean())
            rhs4 = 128.0 * float((L2 ** 2).mean()) * dist_sq ** 2 + 128.0 * consts.sigma_star_4
            if lhs2 > rhs2 * (1 + 1e-12):
                failures.append(f"instance {t}: second-moment bound violated")
                break
            if lhs4 > rhs4 * (1 + 1e-12):
                failures.append(f"instance {t}: fourth-moment bound violated")
                break
    return failures


def _check_drift_suite(states: int, samples: int, seed: int) -> list:
    failures = []
    problem = generate_quadratic_game(QuadraticGameSpec(n=100, d=20, mu=1.0, L=1.0, seed=seed))
    consts = problem_constants(problem)
    g = gamma_max(problem.n, consts.mu, consts.L_max) / 2.0
    c1 = 1.0 - g * problem.n * consts.mu / 2.0
    c2 = (g * problem.n * consts.mu / 2.0
          + 8.0 * problem.n * g * g * consts.L_max ** 2 / consts.mu ** 2 * consts.sigma_star_sq)
    rng = rng_for(seed, 34, 0)
    for t in range(states):
        x = consts.x_star + rng.standard_normal(problem.d)
        energies = analysis.drift_energies(problem, x, g, samples, seed=seed + 7 * t)
        mean = float(energies.mean())
        se = float(energies.std(ddof=1) / math.sqrt(samples))
        budget = c1 * (float(np.dot(x - consts.x_star, x - consts.x_star)) + 1.0) + c2
        if mean > budget + 3.0 * se:
            failures.append(f"state {t}: drift {mean:.6f} > budget {budget:.6f} + 3se {3 * se:.2e}")
    return failures


def cmd_lemma_check(args) -> int:
    informational = False
    if args.suite == "fourth-moment":
        failures = _check_fourth_moment_suite(args.instances, args.seed)
    elif args.suite == "jacobian":
        failures, informational = _check_jacobian_suite(args.instances, args.samples,
                                                        args.seed, args.gamma)
    elif args.suite == "prop-bounds":
        failures = _check_prop_bounds_suite(max(2, args.instances // 10), args.seed)
    elif args.suite == "drift":
        failures = _check_drift_suite(10, args.samples if args.samples > 20 else 2000, args.seed)
    else:
        raise ParameterError(f"unknown lemma suite {args.suite!r}")

    if failures:
        for line in failures:
            print(f"FAIL {line}")
        if informational:
            print(f"suite {args.suite}: {len(failures)} exceedance(s) at user-forced gamma "
                  "above gamma_max (informational; the bound assumes admissible steps)")
            return EXIT_OK
        print(f"suite {args.suite}: {len(failures)} violation(s)")
        return EXIT_VIOLATION
    print(f"suite {args.suite}: all checks passed")
    return EXIT_OK


# ---------------------------------------------------------------------------
# timing

def _time_lockstep(problem, etas, epochs, seed, sampling, sigma_sq) -> float:
    t0 = time.perf_counter()
    run_lockstep_chains(problem, np.asarray(etas), epochs, seed=seed,
                        perturb_sigma_sq=sigma_sq, sampling=sampling)
    return time.perf_counter() - t0


def cmd_timing(args) -> int:
    problem = _load_problem(args.problem)
    consts = problem_constants(problem)
    g = args.gamma if args.gamma else gamma_max(problem.n, max(consts.mu, 1e-9),
                                                consts.L_max) / 2.0
    sigma = consts.sigma_star_sq
    concurrent = args.threads != 1

    # warm caches so the first timed run is not penalized
    run_lockstep_chains(problem, np.array([g]), min(2, args.epochs), seed=args.seed,
                        sampling="reshuffle")

    rows = []
    rows.append((PLAIN, _time_lockstep(problem, [g], args.epochs, args.seed, "withrep", 0.0)))
    rows.append((RRRESH, _time_lockstep(problem, [g], args.epochs, args.seed, "reshuffle", sigma)))
    if concurrent:
        rows.append((RRROM, _time_lockstep(problem, [g, 2 * g], args.epochs, args.seed,
                                           "withrep", 0.0)))
        rows.append((RRROM_RRRESH, _time_lockstep(problem, [g, 2 * g], args.epochs,
                                                  args.seed, "reshuffle", sigma)))
    else:
        rows.append((RRROM, _time_lockstep(problem, [g], args.epochs, args.seed, "withrep", 0.0)
                     + _time_lockstep(problem, [2 * g], args.epochs, args.seed, "withrep", 0.0)))
        rows.append((RRROM_RRRESH,
                     _time_lockstep(problem, [g], args.epochs, args.seed, "reshuffle", sigma)
                     + _time_lockstep(problem, [2 * g], args.epochs, args.seed, "reshuffle", sigma)))

    for name, seconds in rows:
        print(f"{name:>14s}  {seconds:.6f} s")
    if args.out:
        _write_csv(args.out + ".csv", ["method", "seconds"], rows)
        _write_json(args.out + ".json", {"config": _resolved_config(args),
                                         "concurrent": concurrent})
        if not args.no_figures:
            plotting.timing_bar_figure(rows, args.out + ".png")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rrvip",
                                     description="finite-sum VI solver experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--threads", type=int, default=0, help="0 = auto")
        p.add_argument("--config", default=None, help="JSON config file; flags win")
        p.add_argument("--out", default=None)
        p.add_argument("--no-figures", action="store_true")

    p = sub.add_parser("gen", help="generate a problem file")
    common(p)
    p.add_argument("--kind", choices=["quadratic", "wgan", "affine"], default="quadratic")
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--d", type=int, default=100)
    p.add_argument("--mu", type=float, default=1.0)
    p.add_argument("--L", type=float, default=1.0)
    p.add_argument("--coupling-max", type=float, default=0.1)
    p.add_argument("--zero-offsets", action="store_true")
    p.add_argument("--target-mean", default="3,4")
    p.add_argument("--cov-scale", type=float, default=0.1)
    p.add_argument("--m-samples", type=int, default=50)
    p.add_argument("--skew-scale", type=float, default=0.5)
    p.add_argument("--offset-scale", type=float, default=1.0)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("run", help="run one variant, write the trajectory CSV")
    common(p)
    p.add_argument("--problem", default=None)
    p.add_argument("--variant", choices=list(VARIANTS), default=RRRESH)
    p.add_argument("--method", choices=["sgda", "seg", "omd"], default="sgda")
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--wall-times", action="store_true",
                   help="write wall-clock ms into the CSV (breaks bitwise determinism)")
    p.add_argument("--seeds", type=int, default=1)
    p.add_argument("--x0", default="zero", help="zero | gauss | comma list")
    p.add_argument("--perturb", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--noise-scale", type=float, default=1.0)
    p.add_argument("--sigma-star", type=float, default=None,
                   help="override sigma*^2 when x* is unknown")
    p.add_argument("--independent-perms", action="store_true")
    p.add_argument("--inner-noise", action="store_true")
    p.add_argument("--burn-in", type=int, default=0)
    p.add_argument("--dump-iterates", default=None)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="bias / mse / fourth-moment order sweeps")
    common(p)
    p.add_argument("--problem", default=None)
    p.add_argument("--suite", choices=["bias", "mse", "fourth"], default=None)
    p.add_argument("--gammas", default="")
    p.add_argument("--estimator", choices=["exact-enum", "monte-carlo"], default="exact-enum")
    p.add_argument("--variant", choices=[RRRESH, PLAIN], default=RRRESH)
    p.add_argument("--perturb", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--seeds", type=int, default=20)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("clt", help="concentration histograms of T-averaged observables")
    common(p)
    p.add_argument("--problem", default=None)
    p.add_argument("--T", default="100,500,1000")
    p.add_argument("--trials", type=int, default=2000)
    p.add_argument("--gammas", default="")
    p.add_argument("--gamma-fracs", default="0.1,0.001",
                   help="fractions of gamma_max when --gammas is not given")
    p.add_argument("--observable", default="value")
    p.add_argument("--perturb", action=argparse.BooleanOptionalAction, default=True)
    p.set_defaults(func=cmd_clt)

    p = sub.add_parser("lemma-check", help="randomized invariant suites")
    common(p)
    p.add_argument("--suite", choices=["fourth-moment", "jacobian", "prop-bounds", "drift"],
                   required=True)
    p.add_argument("--instances", type=int, default=50)
    p.add_argument("--samples", type=int, default=20)
    p.add_argument("--gamma", type=float, default=None)
    p.set_defaults(func=cmd_lemma_check)

    p = sub.add_parser("timing", help="wall-clock comparison of the four variants")
    common(p)
    p.add_argument("--problem", default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--gamma", type=float, default=None)
    p.set_defaults(func=cmd_timing)

    return parser


_REQUIRED = {
    "run": ("problem", "gamma", "epochs", "out"),
    "sweep": ("problem", "suite", "out"),
    "clt": ("problem", "out"),
    "timing": ("problem", "epochs"),
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args = _apply_config(args, parser)
    for name in _REQUIRED.get(args.command, ()):
        if getattr(args, name, None) is None:
            print(f"parameter error: {args.command} needs --{name.replace('_', '-')} "
                  "(flag or config file)", file=sys.stderr)
            return EXIT_PARAMETER
    try:
        return args.func(args)
    except ParameterError as exc:
        print(f"parameter error: {exc}", file=sys.stderr)
        return EXIT_PARAMETER
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (InvariantViolation, NotConvergedError) as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_VIOLATION


if __name__ == "__main__":
    sys.exit(main())
