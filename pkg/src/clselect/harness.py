"""Monte Carlo experiment driver and brute-force oracles.

Three experiment families are supported:

``table1``
    Common-location model; bias and variance of the location estimate for
    no selection, the plain sampler (argmin and threshold rules), the
    penalised sampler with stability selection, and the maximum-likelihood
    baselines.
``table3``
    Exchangeable model with pairwise components; efficiency of the selected
    pairwise estimate relative to the all-pairs estimate.
``figure1``
    One penalised common-location run exported as plot-ready series.

Every replicate draws its data and chains from streams keyed on
``(seed, purpose, cell, replicate)``, so summaries do not depend on the order
in which replicates are executed.
"""

import itertools
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from functools import partial

import numpy as np

from .config import get_float, get_int, get_list
from .errors import (
    DegenerateMaskError,
    NoValidStateError,
    NonConvergenceError,
    NumericalDomainError,
    ParameterDomainError,
    SingularMatrixError,
)
from .estimator import ComponentMask, EstimatorConfig, MaskObjective, as_mask, g0_common_location, solve_mcle
from .model import (
    CommonLocationFamily,
    CommonLocationSpec,
    ExchangeablePairFamily,
    ExchangeableSpec,
    simulate_common_location,
    simulate_exchangeable,
)
from .sampler import SamplerConfig, control_chart, run_chain, select_min, select_threshold
from .seeding import CHAIN, CHAIN_PENALIZED, DATA, stream
from .stability import StabilityConfig, pcer_threshold, stability_select

MAX_ENUMERATION = 20
FAILURE_LIMIT = 0.05
TABLES = ("table1", "table3", "figure1")
TABLE1_METHODS = ("no-selection", "cls1-min", "cls1-threshold", "cls2", "mle-known", "mle-unknown")
TABLE3_METHODS = ("apw", "cls1-min", "cls1-threshold", "cls2")
SELECTION_METHODS = {"cls1-min", "cls1-threshold", "cls2"}

_ESTIMATION_ERRORS = (
    NonConvergenceError,
    SingularMatrixError,
    NumericalDomainError,
    DegenerateMaskError,
    NoValidStateError,
)


# ---------------------------------------------------------------------------
# oracles


def brute_force_optimum(objective, M):
    """Exhaustive minimum of ``objective`` over all ``2^M - 1`` non-zero masks.

    Masks are scanned in increasing integer-key order (component ``j`` is bit
    ``j``) and the first minimiser wins ties. Returns ``(mask, value)``.
    """
    if not 1 <= M <= MAX_ENUMERATION:
        raise ParameterDomainError(f"enumeration needs 1 <= M <= {MAX_ENUMERATION}, got M={M}")
    best_key, best = None, math.inf
    for key in range(1, 1 << M):
        value = float(objective(ComponentMask.from_key(key, M)))
        if value < best:
            best_key, best = key, value
    if best_key is None:
        raise NoValidStateError("every mask has an infinite objective")
    return ComponentMask.from_key(best_key, M), best


def enumerate_objective(objective, M):
    """Objective values for keys ``0 .. 2^M - 1`` (key 0 is ``+inf``)."""
    if not 1 <= M <= MAX_ENUMERATION:
        raise ParameterDomainError(f"enumeration needs 1 <= M <= {MAX_ENUMERATION}, got M={M}")
    values = np.full(1 << M, np.inf)
    for key in range(1, 1 << M):
        values[key] = float(objective(ComponentMask.from_key(key, M)))
    return values


def hamming_distance(a, b):
    """Number of positions where two masks differ."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ParameterDomainError(f"mask lengths differ: {a.shape} vs {b.shape}")
    return int(np.count_nonzero(a != b))


def common_location_optimum(spec):
    """Structure of the masks minimising the common-location log-variance.

    The optimum keeps every uncorrelated component and ``c`` components of the
    correlated block, with ``c`` found by scanning ``0..d_star`` (smallest
    ``c`` wins ties). Returns ``(c, g0_min, canonical_mask)`` where the canonical
    mask keeps the first ``c`` correlated components.
    """
    d, d_star = spec.d, spec.d_star
    best_c, best = None, math.inf
    for c in range(d_star + 1):
        if c + d - d_star == 0:
            continue
        bits = np.zeros(d, bool)
        bits[:c] = True
        bits[d_star:] = True
        value = g0_common_location(bits, spec.rho, d_star)
        if value < best - 1e-15:
            best_c, best = c, value
    canonical = np.zeros(d, bool)
    canonical[:best_c] = True
    canonical[d_star:] = True
    return best_c, best, ComponentMask(canonical)


def distance_to_optimal_set(mask, spec):
    """Hamming distance from ``mask`` to the nearest minimiser of the common-location log-variance.

    Every minimiser keeps all uncorrelated components plus any ``c`` of the
    correlated block, so the nearest one agrees with ``mask`` on as many
    correlated picks as possible.
    """
    bits = np.asarray(as_mask(mask).bits)
    c_opt, _, _ = common_location_optimum(spec)
    missing_uncorrelated = int(np.count_nonzero(~bits[spec.d_star:]))
    c_sel = int(np.count_nonzero(bits[: spec.d_star]))
    return missing_uncorrelated + abs(c_sel - c_opt)


def gls_location(data, sigma):
    """Generalised least-squares location estimate ``w' xbar`` with ``w`` proportional to ``Sigma^-1 1``."""
    ones = np.ones(data.d)
    w = np.linalg.solve(sigma, ones)
    w = w / w.sum()
    return float(w @ data.observations.mean(axis=0))


# ---------------------------------------------------------------------------
# plans and summaries


@dataclass(frozen=True)
class ExperimentPlan:
    """A grid of model cells, the methods to compare and the Monte Carlo settings.

    ``cells`` is a tuple of dicts with keys ``n, d, rho`` and, for the
    common-location model, ``d_star`` and ``mu``.
    """

    table: str
    cells: tuple
    methods: tuple
    B: int = 50
    seed: int = 0
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    stability: StabilityConfig = field(default_factory=StabilityConfig)
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    scope: str = "evaluated"
    jobs: int = 1

    def __post_init__(self):
        if self.table not in TABLES:
            raise ParameterDomainError(f"table must be one of {TABLES}, got {self.table!r}")
        if self.B < 1:
            raise ParameterDomainError(f"B must be >= 1, got {self.B}")
        if self.seed is None or self.seed < 0:
            raise ParameterDomainError("seed must be a non-negative integer")
        if not self.cells:
            raise ParameterDomainError("plan has no cells")
        allowed = TABLE3_METHODS if self.table == "table3" else TABLE1_METHODS
        bad = [m for m in self.methods if m not in allowed]
        if bad:
            raise ParameterDomainError(f"methods: unknown {bad}; choose from {allowed}")
        for cell in self.cells:
            self.spec(cell)

    def spec(self, cell):
        if self.table == "table3":
            return ExchangeableSpec(int(cell["d"]), float(cell["rho"]))
        return CommonLocationSpec(int(cell["d"]), int(cell["d_star"]), float(cell["rho"]), float(cell.get("mu", 0.0)))

    def as_dict(self):
        return {
            "table": self.table,
            "cells": [dict(c) for c in self.cells],
            "methods": list(self.methods),
            "B": self.B,
            "seed": self.seed,
            "sampler": asdict(self.sampler),
            "stability": asdict(self.stability),
            "estimator": asdict(self.estimator),
            "scope": self.scope,
        }

    @classmethod
    def from_config(cls, conf, **overrides):
        """Build a plan from a flat mapping (see :mod:`clselect.config`).

        ``n``, ``d``, ``rho`` and ``d_star`` may be comma lists; the grid is
        their Cartesian product in that order. Without ``d_star`` the
        correlated block is ``round(d_star_fraction * d)`` (default 0.8).
        """
        conf = dict(conf)
        conf.update({k: v for k, v in overrides.items() if v is not None})
        table = conf.get("table")
        if table not in TABLES:
            raise ParameterDomainError(f"table: expected one of {TABLES}, got {table!r}")
        ns = get_list(conf, "n", int)
        ds = get_list(conf, "d", int)
        rhos = get_list(conf, "rho", float)
        for key, value in (("n", ns), ("d", ds), ("rho", rhos)):
            if not value:
                raise ParameterDomainError(f"{key}: required")
        d_stars = get_list(conf, "d_star", int)
        frac = get_float(conf, "d_star_fraction", 0.8)
        mu = get_float(conf, "mu", 0.0)
        cells = []
        for n, d, rho in itertools.product(ns, ds, rhos):
            if table == "table3":
                cells.append({"n": n, "d": d, "rho": rho})
                continue
            for ds_ in d_stars or [int(round(frac * d))]:
                cells.append({"n": n, "d": d, "d_star": ds_, "rho": rho, "mu": mu})
        default_methods = TABLE3_METHODS[:3] if table == "table3" else TABLE1_METHODS
        methods = conf.get("methods")
        if isinstance(methods, str):
            methods = [m.strip() for m in methods.split(",") if m.strip()]
        if table == "figure1":
            default_methods = ("cls2",)
        sampler = SamplerConfig(
            tau=get_float(conf, "tau"),
            T=get_int(conf, "T"),
            xi=get_float(conf, "xi", 0.7),
            burn_in=get_int(conf, "burn_in"),
            b=get_float(conf, "b", math.sqrt(10.0)),
            init_active=get_int(conf, "init_active", 5),
        )
        lam = conf.get("lam", 1.0)
        if isinstance(lam, str) and lam not in ("aic", "bic", "hqc"):
            lam = get_float(conf, "lam")
        stability = StabilityConfig(alpha=get_float(conf, "alpha", 0.1), lam=lam)
        estimator = EstimatorConfig(
            group_size=get_int(conf, "group_size", 1),
            inner=conf.get("inner", "auto"),
            pilot=conf.get("pilot", "mcle"),
        )
        return cls(
            table=table,
            cells=tuple(cells),
            methods=tuple(methods or default_methods),
            B=get_int(conf, "B", 50),
            seed=get_int(conf, "seed", 0),
            sampler=sampler,
            stability=stability,
            estimator=estimator,
            scope=conf.get("scope", "evaluated"),
            jobs=get_int(conf, "jobs", 1),
        )


SUMMARY_FIELDS = (
    "cell", "n", "d", "d_star", "rho", "method", "B", "n_ok", "n_failed", "valid",
    "estimate_mean", "var", "var_se", "bias2", "bias2_se", "mean_count", "count_se", "re", "re_se",
)


@dataclass(eq=False)
class ExperimentSummary:
    """One row per cell and method plus the replicate-level values behind them.

    ``replicates[(cell, method)]`` lists ``(estimate, count)`` pairs (``None``
    for a failed replicate) in replicate order. Values are on the natural scale
    of the estimate; no rescaling is applied.
    """

    plan: ExperimentPlan
    rows: list
    replicates: dict

    def row(self, method, cell=0):
        for r in self.rows:
            if r["cell"] == cell and r["method"] == method:
                return r
        raise KeyError((cell, method))

    def to_csv_text(self):
        lines = [",".join(SUMMARY_FIELDS)]
        for r in self.rows:
            lines.append(",".join(_csv_value(r.get(k)) for k in SUMMARY_FIELDS))
        return "\r\n".join(lines) + "\r\n"


def _csv_value(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return "NA" if math.isnan(v) else repr(v)
    return str(v)


def _moments(values, truth=None):
    """Var, its Monte Carlo SE, bias^2 and its SE from replicate-level values.

    With a single value the variance is 0 and every standard error is NaN
    (unavailable).
    """
    x = np.asarray(values, dtype=float)
    B = x.size
    out = {"estimate_mean": math.nan, "var": math.nan, "var_se": math.nan, "bias2": math.nan, "bias2_se": math.nan}
    if B == 0:
        return out
    mean = float(x.mean())
    out["estimate_mean"] = mean
    if B == 1:
        out["var"] = 0.0
    else:
        var = float(x.var(ddof=1))
        m2 = float(np.mean((x - mean) ** 2))
        m4 = float(np.mean((x - mean) ** 4))
        out["var"] = var
        out["var_se"] = math.sqrt((m4 - m2 * m2) / B)
    if truth is not None:
        bias = mean - truth
        out["bias2"] = bias * bias
        if B > 1:
            out["bias2_se"] = 2.0 * abs(bias) * math.sqrt(out["var"] / B)
    return out


def _count_stats(counts):
    c = np.asarray([v for v in counts if v is not None and not math.isnan(v)], dtype=float)
    if c.size == 0:
        return math.nan, math.nan
    se = float(c.std(ddof=1) / math.sqrt(c.size)) if c.size > 1 else math.nan
    return float(c.mean()), se


def relative_efficiency(reference, candidate):
    """``Var(reference) / Var(candidate)`` over paired replicates with a delete-one jackknife SE."""
    a = np.asarray(reference, dtype=float)
    b = np.asarray(candidate, dtype=float)
    B = a.size
    if B < 2 or b.size != B:
        return math.nan, math.nan
    vb = b.var(ddof=1)
    if vb == 0:
        return math.inf, math.nan
    re = float(a.var(ddof=1) / vb)
    if B < 3:
        return re, math.nan
    idx = np.arange(B)
    loo = np.array([a[idx != i].var(ddof=1) / b[idx != i].var(ddof=1) for i in range(B)])
    se = float(math.sqrt((B - 1) / B * np.sum((loo - loo.mean()) ** 2)))
    return re, se


# ---------------------------------------------------------------------------
# replicate workers (module level so they pickle for process pools)


def _simulate(plan, cell_index, r):
    cell = plan.cells[cell_index]
    spec = plan.spec(cell)
    rng = stream(plan.seed, DATA, cell_index, r)
    if plan.table == "table3":
        return spec, simulate_exchangeable(spec, int(cell["n"]), rng)
    return spec, simulate_common_location(spec, int(cell["n"]), rng)


def _selection_estimates(plan, family, data, cell_index, r, methods):
    """Estimates and component counts for the sampler-based methods."""
    out = {}
    sampler = plan.sampler.resolve(data.d)
    est_cfg = plan.estimator

    def fit(objective, mask):
        if mask.is_degenerate:
            raise DegenerateMaskError("empty selection")
        theta = solve_mcle(family, data, mask, objective.start, est_cfg)
        return float(theta[0]), mask.popcount

    if {"cls1-min", "cls1-threshold"} & set(methods):
        trace, objective = run_chain(family, data, sampler, est_cfg, rng=stream(plan.seed, CHAIN, cell_index, r))
        if "cls1-min" in methods:
            out["cls1-min"] = _guard(lambda: fit(objective, select_min(trace, plan.scope)))
        if "cls1-threshold" in methods:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                mask = select_threshold(trace, sampler.xi, sampler.burn_in)
            out["cls1-threshold"] = _guard(lambda: fit(objective, mask))
    if "cls2" in methods:
        weight = plan.stability.weight(data.n)
        trace, objective = run_chain(
            family, data, sampler, est_cfg, penalty=weight, rng=stream(plan.seed, CHAIN_PENALIZED, cell_index, r)
        )
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            report = stability_select(trace, plan.stability)
        out["cls2"] = _guard(lambda: fit(objective, report.mask))
    return out


def _guard(thunk):
    try:
        return thunk()
    except _ESTIMATION_ERRORS:
        return None


def _table1_replicate(plan, job):
    cell_index, r = job
    spec, data = _simulate(plan, cell_index, r)
    family = CommonLocationFamily(spec.d)
    out = {}
    for method in plan.methods:
        if method == "no-selection":
            out[method] = (float(data.observations.mean()), spec.d)
        elif method == "mle-known":
            out[method] = (gls_location(data, spec.covariance()), spec.d)
        elif method == "mle-unknown":
            if spec.d < data.n:
                sigma = np.cov(data.observations, rowvar=False, ddof=1).reshape(spec.d, spec.d)
                out[method] = _guard(lambda: (gls_location(data, sigma), spec.d))
            else:
                out[method] = None
    out.update(_selection_estimates(plan, family, data, cell_index, r, plan.methods))
    return out


def _table3_replicate(plan, job):
    cell_index, r = job
    spec, data = _simulate(plan, cell_index, r)
    family = ExchangeablePairFamily(spec.d)
    out = {}
    if "apw" in plan.methods:
        def apw():
            theta = solve_mcle(family, data, np.ones(family.n_components, bool), family.pilot(data), plan.estimator)
            return float(theta[0]), family.n_components

        out["apw"] = _guard(apw)
    out.update(_selection_estimates(plan, family, data, cell_index, r, plan.methods))
    return out


def _run_jobs(worker, plan, jobs):
    work = [(c, r) for c in range(len(plan.cells)) for r in range(plan.B)]
    fn = partial(worker, plan)
    n_jobs = jobs if jobs is not None else plan.jobs
    if n_jobs is None or n_jobs <= 0:
        n_jobs = os.cpu_count() or 1
    if n_jobs == 1 or len(work) == 1:
        results = [fn(w) for w in work]
    else:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(fn, work, chunksize=max(1, len(work) // (4 * n_jobs))))
    return dict(zip(work, results))


def _summarise(plan, results, truth_of, reference=None, progress=None):
    rows, replicates = [], {}
    for c, cell in enumerate(plan.cells):
        for method in plan.methods:
            reps = [results[(c, r)].get(method) for r in range(plan.B)]
            replicates[(c, method)] = reps
            ok = [v for v in reps if v is not None]
            failed = plan.B - len(ok)
            not_applicable = method == "mle-unknown" and int(cell["d"]) >= int(cell["n"])
            row = {
                "cell": c,
                "n": int(cell["n"]),
                "d": int(cell["d"]),
                "d_star": cell.get("d_star"),
                "rho": float(cell["rho"]),
                "method": method,
                "B": plan.B,
                "n_ok": len(ok),
                "n_failed": failed,
                "valid": (not not_applicable) and failed <= FAILURE_LIMIT * plan.B,
            }
            row.update(_moments([v[0] for v in ok], truth_of(cell)))
            row["mean_count"], row["count_se"] = _count_stats([v[1] for v in ok])
            row["re"], row["re_se"] = math.nan, math.nan
            if reference is not None and method != reference and plan.B >= 2:
                ref = replicates.get((c, reference))
                if ref is None:
                    ref = [results[(c, r)].get(reference) for r in range(plan.B)]
                paired = [(a[0], b[0]) for a, b in zip(ref, reps) if a is not None and b is not None]
                if paired:
                    ra, rb = zip(*paired)
                    row["re"], row["re_se"] = relative_efficiency(ra, rb)
            if method == reference:
                row["re"] = 1.0
            rows.append(row)
        if progress is not None:
            progress(c, cell)
    return ExperimentSummary(plan, rows, replicates)


def run_table1(plan, jobs=None, progress=None):
    """Bias, variance and component counts of the location estimate per cell and method."""
    if plan.table != "table1":
        raise ParameterDomainError("run_table1 needs a table1 plan")
    results = _run_jobs(_table1_replicate, plan, jobs)
    return _summarise(plan, results, lambda cell: float(cell.get("mu", 0.0)), progress=progress)


def run_table3(plan, jobs=None, progress=None):
    """Relative efficiency of selected pairwise estimates against the all-pairs estimate."""
    if plan.table != "table3":
        raise ParameterDomainError("run_table3 needs a table3 plan")
    if "apw" not in plan.methods:
        plan = replace(plan, methods=("apw",) + tuple(plan.methods))
    results = _run_jobs(_table3_replicate, plan, jobs)
    return _summarise(plan, results, lambda cell: float(cell["rho"]), reference="apw", progress=progress)


# ---------------------------------------------------------------------------
# single-run trace artefacts


@dataclass(eq=False)
class Figure1Result:
    """Plot-ready series of one penalised common-location run.

    ``objective``: per sweep ``(sweep, g_lambda, g, limit)``.
    ``frequencies``: per component ``(component, correlated, frequency)``.
    ``stable_objective``: per sweep ``(sweep, g_lambda, n_selected)`` at the
    stable set computed from the sweeps seen so far.
    ``hamming``: per sweep ``(sweep, distance)`` from that stable set to the
    nearest optimal mask.
    """

    objective: list
    frequencies: list
    stable_objective: list
    hamming: list
    final_mask: ComponentMask
    final_distance: int
    g0_selected: float
    g0_optimum: float
    chart: object
    spec: CommonLocationSpec

    SERIES_HEADERS = {
        "objective": ("sweep", "g_lambda", "g", "limit"),
        "frequencies": ("component", "correlated", "frequency"),
        "stable_objective": ("sweep", "g_lambda", "n_selected"),
        "hamming": ("sweep", "distance"),
    }

    def series_csv(self, name):
        lines = [",".join(self.SERIES_HEADERS[name])]
        for row in getattr(self, name):
            lines.append(",".join(_csv_value(v) for v in row))
        return "\r\n".join(lines) + "\r\n"


def run_figure1(plan, replicate=0, cell=0):
    """One penalised run on a simulated common-location dataset, as four series."""
    if plan.table not in ("figure1", "table1"):
        raise ParameterDomainError("run_figure1 needs a common-location plan")
    spec, data = _simulate(replace(plan, table="figure1"), cell, replicate)
    family = CommonLocationFamily(spec.d)
    sampler = plan.sampler.resolve(spec.d)
    weight = plan.stability.weight(data.n)
    trace, objective = run_chain(
        family, data, sampler, plan.estimator, penalty=weight,
        rng=stream(plan.seed, CHAIN_PENALIZED, cell, replicate),
    )
    chart = control_chart(trace.objectives, sampler.b, sampler.burn_in)
    limit = chart.limit if chart.available else math.nan
    penalties = weight * trace.masks.sum(axis=1)
    objective_rows = [
        (t + 1, float(v), float(v - p), limit) for t, (v, p) in enumerate(zip(trace.objectives, penalties))
    ]
    M = spec.d
    masks = trace.masks.astype(float)
    cum = np.cumsum(masks, axis=0)
    stable_rows, hamming_rows, values = [], [], {}
    mask = None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for t in range(trace.T):
            freq = cum[t] / (t + 1)
            eta = float(freq.sum())
            xi = pcer_threshold(eta, M, plan.stability.alpha)
            mask = ComponentMask(freq >= xi)
            if mask.key not in values:
                values[mask.key] = objective(mask)
            stable_rows.append((t + 1, float(values[mask.key]), mask.popcount))
            hamming_rows.append((t + 1, distance_to_optimal_set(mask, spec)))
    report = stability_select(trace, plan.stability)
    freq_rows = [(j, int(j < spec.d_star), float(f)) for j, f in enumerate(report.frequencies)]
    _, g0_opt, _ = common_location_optimum(spec)
    g0_sel = g0_common_location(report.mask.bits, spec.rho, spec.d_star) if not report.mask.is_degenerate else math.inf
    return Figure1Result(
        objective=objective_rows,
        frequencies=freq_rows,
        stable_objective=stable_rows,
        hamming=hamming_rows,
        final_mask=report.mask,
        final_distance=distance_to_optimal_set(report.mask, spec),
        g0_selected=g0_sel,
        g0_optimum=g0_opt,
        chart=chart,
        spec=spec,
    )


def run_plan(plan, jobs=None, progress=None):
    """Dispatch on ``plan.table``; figure1 plans return a list of ``B`` runs."""
    if plan.table == "table1":
        return run_table1(plan, jobs, progress)
    if plan.table == "table3":
        return run_table3(plan, jobs, progress)
    return [run_figure1(plan, r) for r in range(plan.B)]
