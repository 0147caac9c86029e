"""Command-line interface: ``clselect simulate | select | bench | oracle``.

Exit codes: 0 success, 2 input error, 3 equilibrium diagnostic failed (outputs
are still written), 4 numerical failure on the final estimate.
"""

import argparse
import math
import os
import sys
import tempfile
import time
from importlib import resources

import numpy as np

from . import __version__
from .config import MODELS, read_flat_config, spec_from_config, spec_to_config
from .errors import (
    DegenerateMaskError,
    NoValidStateError,
    NonConvergenceError,
    NumericalDomainError,
    ParameterDomainError,
    SingularMatrixError,
)
from .estimator import PENALTY_PRESETS, EstimatorConfig, MaskObjective, g0_common_location
from .harness import ExperimentPlan, brute_force_optimum, enumerate_objective, run_plan
from .model import (
    Dataset,
    OrdinalProbitSpec,
    estimate_thresholds,
    make_family,
    simulate_common_location,
    simulate_exchangeable,
    simulate_ordinal,
)
from .reporting import atomic_write_text, dumps, file_fingerprint, manifest, trace_csv_text, write_json
from .sampler import SamplerConfig, select
from .stability import StabilityConfig, select_stable

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_EQUILIBRIUM = 3
EXIT_NUMERICAL = 4

NUMERICAL_ERRORS = (NonConvergenceError, SingularMatrixError, NumericalDomainError, NoValidStateError)


class InputError(Exception):
    pass


def _lam(text):
    if text in PENALTY_PRESETS:
        return text
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number or one of {sorted(PENALTY_PRESETS)}") from None


def build_parser():
    parser = argparse.ArgumentParser(prog="clselect", description="Composite likelihood component selection.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a dataset from a model spec")
    p.add_argument("--spec", help="flat key=value spec file; flags override its entries")
    p.add_argument("--model", choices=MODELS)
    p.add_argument("--d", type=int)
    p.add_argument("--d-star", type=int)
    p.add_argument("--rho", type=float)
    p.add_argument("--mu", type=float)
    p.add_argument("--theta", type=float)
    p.add_argument("--gamma", help="comma list: two thresholds shared by all variables, or 2d values")
    p.add_argument("--case-fraction", type=float)
    p.add_argument("--n", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("-o", "--out", required=True, help="output CSV path")

    p = sub.add_parser("select", help="run component selection on a CSV dataset")
    p.add_argument("data", help="CSV with a header row; a trailing 'group' column is the covariate")
    p.add_argument("--model", choices=MODELS, required=True)
    p.add_argument("--algorithm", choices=("cls1", "cls2"), default="cls1")
    p.add_argument("--tau", type=float, help="inverse temperature (default d)")
    p.add_argument("--T", type=int, help="number of sweeps (default 10 d)")
    p.add_argument("--xi", type=float, default=0.7, help="frequency threshold for cls1 (default 0.7)")
    p.add_argument("--burn-in", type=int, help="control-chart and frequency burn-in N (default T // 2)")
    p.add_argument("--b", type=float, default=math.sqrt(10.0), help="control-chart constant (default sqrt(10))")
    p.add_argument("--init", default="random", help="'random' or an explicit starting bitstring")
    p.add_argument("--init-active", type=int, default=5)
    p.add_argument("--alpha", type=float, default=0.1, help="nominal per-comparison error rate for cls2")
    p.add_argument("--lam", type=_lam, default=1.0, help="penalty level for cls2: number or aic/bic/hqc")
    p.add_argument("--penalty-scale", choices=("per-observation", "raw"), default="per-observation")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--se-group-size", type=int, default=10, help="delete-k jackknife SE group size")
    p.add_argument("--group-size", type=int, default=1, help="delete-group size inside the objective")
    p.add_argument("--inner", choices=("auto", "jacobian", "outer"), default="auto")
    p.add_argument("--pilot", choices=("mcle", "fixed"), default="mcle")
    p.add_argument("--scope", choices=("evaluated", "steps", "sweeps"), default="evaluated")
    p.add_argument("--gamma", help="ordinal thresholds (default: estimated from covariate-0 rows)")
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("bench", help="run a Monte Carlo experiment plan")
    p.add_argument("plan", help="plan file, or the name of a bundled plan")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    p.add_argument("--B", type=int, help="override the replicate count")
    p.add_argument("--full", action="store_true", help="use B = 250 replicates")

    p = sub.add_parser("oracle", help="exhaustive enumeration oracles")
    osub = p.add_subparsers(dest="oracle", required=True)
    q = osub.add_parser("g0", help="common-location log-variance over every mask")
    q.add_argument("--d", type=int, required=True)
    q.add_argument("--d-star", type=int, required=True)
    q.add_argument("--rho", type=float, required=True)
    q.add_argument("--out")
    q = osub.add_parser("ghat", help="jackknife objective over every mask of a dataset")
    q.add_argument("data")
    q.add_argument("--model", choices=MODELS, required=True)
    q.add_argument("--group-size", type=int, default=1)
    q.add_argument("--inner", choices=("auto", "jacobian", "outer"), default="auto")
    q.add_argument("--gamma")
    q.add_argument("--out")
    return parser


# ---------------------------------------------------------------------------
# simulate


def cmd_simulate(args):
    conf = read_flat_config(args.spec) if args.spec else {}
    flags = {
        "model": args.model, "d": args.d, "d_star": args.d_star, "rho": args.rho, "mu": args.mu,
        "theta": args.theta, "gamma": args.gamma, "case_fraction": args.case_fraction,
        "n": args.n, "seed": args.seed,
    }
    conf.update({k: v for k, v in flags.items() if v is not None})
    model, spec = spec_from_config(conf)
    if "n" not in conf:
        raise ParameterDomainError("n: required")
    n = int(float(conf["n"]))
    seed = int(float(conf.get("seed", 0)))
    if model == "common-location":
        data = simulate_common_location(spec, n, seed)
    elif model == "exchangeable":
        data = simulate_exchangeable(spec, n, seed)
    else:
        data = simulate_ordinal(spec, n, seed)
    _write_dataset(data, args.out)
    config = dict(spec_to_config(model, spec), n=n)
    doc = manifest("simulate", config, seed, file_fingerprint(args.out), [os.path.basename(args.out)])
    write_json(args.out + ".manifest.json", doc)
    print(f"wrote {args.out} ({data.n} x {data.d}), seed={seed}")
    return EXIT_OK


def _write_dataset(data, path):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    os.close(fd)
    try:
        data.to_csv(tmp)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


# ---------------------------------------------------------------------------
# select


def _load_family(model, data, gamma_text):
    if model == "exchangeable" and data.d < 2:
        raise ParameterDomainError("exchangeable model needs at least 2 columns")
    if model != "ordinal":
        return make_family(model, data.d), None
    if data.covariate is None:
        raise ParameterDomainError("ordinal model needs a 'group' covariate column")
    if gamma_text:
        gamma = [float(v) for v in gamma_text.split(",")]
        gamma = np.tile(gamma, (data.d, 1)) if len(gamma) == 2 else np.reshape(gamma, (data.d, 2))
        source = "user"
    else:
        gamma = estimate_thresholds(data)
        source = "estimated"
    spec = OrdinalProbitSpec(data.d, 0.0, gamma)
    return make_family(model, data.d, spec), {"gamma": spec.gamma, "gamma_source": source}


def _fit_dict(fit):
    if fit is None:
        return {"theta": None, "se": None, "g": None, "g_lambda": None}
    return {
        "theta": [float(t) for t in np.ravel(fit.theta)],
        "se": [float(s) for s in np.ravel(fit.standard_error)],
        "g": fit.objective.g,
        "g_lambda": fit.objective.total,
    }


def _mask_dict(mask):
    return {"mask": mask.bitstring(), "n_selected": mask.popcount, "components": [int(j) for j in mask.active]}


def _chain_dict(trace):
    return {
        "T": trace.T,
        "tau": trace.tau,
        "burn_in": trace.burn_in,
        "initial_mask": format_key(trace.initial_key, trace.M),
        "initial_objective": trace.initial_objective,
        "final_mask": trace.mask(trace.T - 1).bitstring(),
        "evaluated_masks": len(trace.evaluations),
        "cache": dict(trace.cache_stats),
        "unpenalized_min": float(np.min(trace.unpenalized_objectives)),
    }


def format_key(key, M):
    return "".join("1" if (key >> m) & 1 else "0" for m in range(M))


def cmd_select(args):
    try:
        data = Dataset.from_csv(args.data)
    except OSError as exc:
        raise InputError(f"{args.data}: {exc.strerror}") from None
    family, family_info = _load_family(args.model, data, args.gamma)
    if not 1 <= args.se_group_size:
        raise ParameterDomainError("se-group-size: must be >= 1")
    se_k = min(args.se_group_size, data.n - 1)
    init = args.init
    if init != "random" and len(init) != family.n_components:
        raise ParameterDomainError(f"init: bitstring must have {family.n_components} characters")
    sampler = SamplerConfig(
        tau=args.tau, T=args.T, init=init, init_active=min(args.init_active, family.n_components),
        xi=args.xi, burn_in=args.burn_in, b=args.b, seed=args.seed,
    ).resolve(data.d)
    est = EstimatorConfig(group_size=args.group_size, inner=args.inner, pilot=args.pilot)
    stab = StabilityConfig(alpha=args.alpha, lam=args.lam, penalty_scale=args.penalty_scale)

    config = {
        "algorithm": args.algorithm,
        "model": args.model,
        "sampler": {
            "tau": sampler.tau, "T": sampler.T, "xi": sampler.xi, "burn_in": sampler.burn_in,
            "b": sampler.b, "init": sampler.init, "init_active": sampler.init_active, "scope": args.scope,
        },
        "estimator": {"group_size": est.group_size,
                      "inner": family.preferred_inner if est.inner == "auto" else est.inner, "pilot": est.pilot,
                      "se_group_size": se_k, "root_tol": est.root_tol, "max_iter": est.max_iter},
        "stability": {"alpha": stab.alpha, "lam": stab.lam_value(data.n), "lam_input": args.lam,
                      "penalty_scale": stab.penalty_scale, "penalty_weight": stab.weight(data.n)},
    }
    if family_info:
        config["family"] = family_info

    if args.algorithm == "cls1":
        rep = select(family, data, sampler, est, se_k, args.scope)
        chart, trace = rep.chart, rep.trace
        selection = {
            "rule": "argmin-and-threshold",
            "min": dict(_mask_dict(rep.min_mask), **_fit_dict(rep.min_fit)),
            "threshold": dict(_mask_dict(rep.threshold_mask), xi=sampler.xi, **_fit_dict(rep.threshold_fit)),
            "minimizers": [m.bitstring() for m in rep.minimizers],
            "frequencies": rep.frequencies,
        }
        final_fit = rep.min_fit
    else:
        rep = select_stable(family, data, sampler, est, stab, se_k)
        chart, trace = rep.chart, rep.trace
        selection = {
            "rule": "stability",
            "stable": dict(_mask_dict(rep.report.mask), **_fit_dict(rep.fit)),
            "eta": rep.report.eta,
            "xi": rep.report.xi,
            "ev_bound": rep.report.ev_bound,
            "pcer": rep.report.pcer,
            "penalty_weight": rep.penalty,
            "penalty_ratio": rep.penalty_ratio,
            "frequencies": rep.report.frequencies,
        }
        final_fit = rep.fit

    equilibrium = bool(chart.equilibrium) if chart.available else None
    report = {
        "schema_version": manifest("select", {}, 0)["schema_version"],
        "algorithm": args.algorithm,
        "model": args.model,
        "data": {"n": data.n, "d": data.d, "M": family.n_components, "names": list(data.names)},
        "chain": _chain_dict(trace),
        "diagnostics": {"control_chart": chart.as_dict(), "equilibrium": equilibrium},
        "selection": selection,
    }
    out = args.out_dir
    os.makedirs(out, exist_ok=True)
    atomic_write_text(os.path.join(out, "trace.csv"), trace_csv_text(trace))
    write_json(os.path.join(out, "report.json"), report)
    write_json(
        os.path.join(out, "manifest.json"),
        manifest("select", config, args.seed, file_fingerprint(args.data), ["report.json", "trace.csv"]),
    )
    print(f"config: tau={sampler.tau:g} T={sampler.T} xi={sampler.xi:g} N={sampler.burn_in} b={sampler.b:.6g} "
          f"alpha={stab.alpha:g} lam={stab.lam_value(data.n):g} seed={args.seed}")
    if final_fit is None:
        print("warning: the selection is empty; no estimate was computed", file=sys.stderr)
        return EXIT_EQUILIBRIUM
    if not final_fit.objective.finite:
        print("error: the objective at the selected mask is not finite", file=sys.stderr)
        return EXIT_NUMERICAL
    if equilibrium is False:
        print(f"warning: control chart exceedance {chart.exceed_fraction:.3f} > 1/b^2; "
              "the chain may not be in equilibrium", file=sys.stderr)
        return EXIT_EQUILIBRIUM
    return EXIT_OK


# ---------------------------------------------------------------------------
# bench


def _resolve_plan_path(name):
    if os.path.exists(name):
        return name, None
    bundled = resources.files("clselect").joinpath("plans", name)
    if not name.endswith(".plan"):
        bundled = resources.files("clselect").joinpath("plans", name + ".plan")
    if bundled.is_file():
        return str(bundled), os.path.basename(str(bundled))
    raise InputError(f"plan not found: {name}")


def cmd_bench(args):
    path, bundled = _resolve_plan_path(args.plan)
    conf = read_flat_config(path)
    B = 250 if args.full else args.B
    plan = ExperimentPlan.from_config(conf, seed=args.seed, B=B)
    out = args.out_dir
    os.makedirs(out, exist_ok=True)
    started = time.perf_counter()
    cell_times = []

    def progress(c, cell):
        cell_times.append(time.perf_counter() - started)
        print(f"cell {c + 1}/{len(plan.cells)} done: {cell}", file=sys.stderr, flush=True)

    result = run_plan(plan, jobs=args.jobs, progress=progress)
    outputs = []
    if plan.table == "figure1":
        first = result[0]
        for name in first.SERIES_HEADERS:
            fname = f"trace_{name}.csv"
            atomic_write_text(os.path.join(out, fname), first.series_csv(name))
            outputs.append(fname)
        lines = ["replicate,final_distance,n_selected,g0_selected,g0_optimum,equilibrium"]
        for r, res in enumerate(result):
            eq = res.chart.equilibrium if res.chart.available else None
            lines.append(f"{r},{res.final_distance},{res.final_mask.popcount},{res.g0_selected!r},"
                         f"{res.g0_optimum!r},{'' if eq is None else str(eq).lower()}")
        atomic_write_text(os.path.join(out, "summary.csv"), "\r\n".join(lines) + "\r\n")
    else:
        atomic_write_text(os.path.join(out, "summary.csv"), result.to_csv_text())
    outputs.insert(0, "summary.csv")
    config = plan.as_dict()
    config["value_scale"] = "natural units of the estimate (no rescaling)"
    config["plan_file"] = bundled or os.path.basename(path)
    doc = manifest("bench", config, plan.seed, file_fingerprint(path), outputs)
    write_json(os.path.join(out, "meta.json"), doc)
    write_json(
        os.path.join(out, "timing.json"),
        {"total_seconds": time.perf_counter() - started, "cell_seconds": cell_times, "jobs": args.jobs},
    )
    print(f"wrote {', '.join(outputs)} and meta.json to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# oracle


def cmd_oracle(args):
    if args.oracle == "g0":
        M = args.d
        if args.d_star > args.d or args.d_star < 0:
            raise ParameterDomainError("d-star: must lie in [0, d]")

        def g0(mask):
            return g0_common_location(mask.bits, args.rho, args.d_star)

        values = enumerate_objective(g0, M)
        mask, value = brute_force_optimum(g0, M)
        doc = {"oracle": "g0", "d": args.d, "d_star": args.d_star, "rho": args.rho}
    else:
        try:
            data = Dataset.from_csv(args.data)
        except OSError as exc:
            raise InputError(f"{args.data}: {exc.strerror}") from None
        family, _ = _load_family(args.model, data, args.gamma)
        M = family.n_components
        objective = MaskObjective(family, data, EstimatorConfig(group_size=args.group_size, inner=args.inner))
        values = enumerate_objective(objective, M)
        mask, value = brute_force_optimum(lambda m: values[m.key], M)
        doc = {"oracle": "ghat", "model": args.model, "n": data.n, "d": data.d}
    doc.update(
        M=M,
        argmin=mask.bitstring(),
        minimum=value,
        values={format_key(k, M): float(values[k]) for k in range(1, 1 << M)},
    )
    text = dumps(doc)
    if args.out:
        atomic_write_text(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "select": cmd_select, "bench": cmd_bench, "oracle": cmd_oracle}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (InputError, ParameterDomainError, DegenerateMaskError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
