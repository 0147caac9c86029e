"""Gibbs sampling over binary composition rules.

The chain targets ``pi(w) ~ exp(-tau * g(w))`` on ``{0,1}^M``. One sweep
updates the coordinates ``m = 0..M-1`` in order, each from its Bernoulli full
conditional given the freshest values of the others. Objective values are
memoised on the integer key of the mask, so revisiting a mask costs a lookup.
"""

import math
import threading
import warnings
from collections import OrderedDict
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    DegenerateStateError,
    NoValidStateError,
    ParameterDomainError,
)
from .estimator import ComponentMask, EstimatorConfig, MaskObjective, as_mask, fit_mask
from .seeding import CHAIN, stream

SELECT_SCOPES = ("evaluated", "steps", "sweeps")


def conditional_probability(g0, g1, tau):
    """Probability that a coordinate is 1 given objectives ``g0`` (bit off) and ``g1`` (bit on).

    Computed as ``q = 1 / (1 + exp(-tau |g1 - g0|))`` assigned to the lower
    objective and ``1 - q`` to the other, so swapping the arguments gives
    probabilities summing to exactly one. An infinite objective gets
    probability zero.
    """
    inf0 = g0 == math.inf
    inf1 = g1 == math.inf
    if inf0 and inf1:
        raise DegenerateStateError("both candidate states have infinite objective")
    if inf1:
        return 0.0
    if inf0:
        return 1.0
    delta = tau * (g1 - g0)
    q = 1.0 / (1.0 + math.exp(-abs(delta)))
    return q if delta < 0 else 1.0 - q


def key_to_bits(key, M):
    if M <= 62:
        return ((np.int64(key) >> np.arange(M, dtype=np.int64)) & 1).astype(bool)
    return np.array([(key >> m) & 1 for m in range(M)], dtype=bool)


def keys_to_bits(keys, M):
    if M <= 62:
        k = np.asarray(keys, dtype=np.int64)[:, None]
        return ((k >> np.arange(M, dtype=np.int64)) & 1).astype(bool)
    return np.array([[(key >> m) & 1 for m in range(M)] for key in keys], dtype=bool).reshape(-1, M)


class ObjectiveCache:
    """Memoising wrapper around a mask objective, keyed on mask bits.

    ``objective`` maps a boolean array to a float (``+inf`` for invalid masks;
    :class:`clselect.estimator.MaskObjective` gives ``+inf`` for the all-zero
    mask, so the chain never stays there). With ``maxsize``
    set, least recently used entries are evicted. Every fresh evaluation is
    appended to ``log`` as ``(key, value)`` regardless of eviction.
    """

    def __init__(self, objective, M, maxsize=None):
        self.objective = objective
        self.M = M
        self.maxsize = maxsize
        self._store = OrderedDict() if maxsize else {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0
        self.infinite = 0
        self.log = []

    def get(self, key):
        store = self._store
        value = store.get(key)
        if value is not None:
            self.hits += 1
            if self.maxsize:
                store.move_to_end(key)
            return value
        with self._lock:
            value = store.get(key)
            if value is not None:
                self.hits += 1
                return value
            value = float(self.objective(key_to_bits(key, self.M)))
            self.misses += 1
            if value == math.inf:
                self.infinite += 1
            store[key] = value
            self.log.append((key, value))
            if self.maxsize and len(store) > self.maxsize:
                store.popitem(last=False)
        return value

    def __call__(self, mask):
        return self.get(as_mask(mask).key)

    def stats(self):
        total = self.hits + self.misses
        return {
            "hits": self.hits,
            "misses": self.misses,
            "infinite": self.infinite,
            "hit_rate": self.hits / total if total else 0.0,
            "size": len(self._store),
        }


@dataclass(frozen=True)
class SamplerConfig:
    """Chain settings. ``None`` fields are resolved against the data dimension by :meth:`resolve`.

    ``tau`` defaults to ``d``, ``T`` to ``10 d`` and ``burn_in`` to ``T // 2``.
    ``init`` is either ``"random"`` (``init_active`` random components switched on)
    or an explicit bitstring.
    """

    tau: float = None
    T: int = None
    init: str = "random"
    init_active: int = 5
    xi: float = 0.7
    burn_in: int = None
    b: float = math.sqrt(10.0)
    seed: int = 0
    cache_size: int = None
    all_sweep_frequencies: bool = False

    def resolve(self, d):
        cfg = replace(
            self,
            tau=float(d) if self.tau is None else float(self.tau),
            T=10 * int(d) if self.T is None else int(self.T),
        )
        if cfg.burn_in is None:
            cfg = replace(cfg, burn_in=cfg.T // 2)
        cfg.validate()
        return cfg

    def validate(self):
        if not self.tau > 0:
            raise ParameterDomainError(f"tau must be > 0, got {self.tau}")
        if self.T < 1:
            raise ParameterDomainError(f"T must be >= 1, got {self.T}")
        if not 0.5 < self.xi < 1.0:
            raise ParameterDomainError(f"xi must lie in (0.5, 1), got {self.xi}")
        if not 0 <= self.burn_in < self.T:
            raise ParameterDomainError(f"burn-in must satisfy 0 <= N < T, got N={self.burn_in}, T={self.T}")
        if not self.b > 1:
            raise ParameterDomainError(f"control-chart constant b must be > 1, got {self.b}")
        if self.init_active < 1:
            raise ParameterDomainError("init_active must be >= 1")


@dataclass(eq=False)
class ChainTrace:
    """Record of one Gibbs run.

    ``sweep_keys``/``objectives`` hold the end-of-sweep states; ``step_keys``/
    ``step_objectives`` hold the state after every single-coordinate update.
    ``evaluations`` lists every distinct mask whose objective was computed,
    in evaluation order. ``penalty`` is the per-component penalty included in
    the recorded objectives (zero for an unpenalised chain).
    """

    M: int
    tau: float
    burn_in: int
    initial_key: int
    initial_objective: float
    sweep_keys: list
    objectives: np.ndarray
    step_keys: list
    step_objectives: np.ndarray
    evaluations: list
    cache_stats: dict
    penalty: float = 0.0
    _masks: np.ndarray = field(default=None, repr=False)

    @property
    def T(self):
        return len(self.sweep_keys)

    @property
    def masks(self):
        if self._masks is None:
            self._masks = keys_to_bits(self.sweep_keys, self.M)
        return self._masks

    @property
    def unpenalized_objectives(self):
        return self.objectives - self.penalty * self.masks.sum(axis=1)

    def frequencies(self, burn_in=None):
        """Per-component inclusion frequency over sweeps ``burn_in..T-1``."""
        start = self.burn_in if burn_in is None else burn_in
        return self.masks[start:].mean(axis=0)

    def visit_counts(self):
        return self.masks.sum(axis=0)

    def mask(self, t):
        return ComponentMask(self.masks[t])


def gibbs_sweep(mask, objective, tau, rng):
    """One systematic-scan sweep; returns the end-of-sweep mask.

    ``objective`` maps a mask to a float; pass an :class:`ObjectiveCache` to
    memoise. Exactly ``M`` uniforms are drawn from ``rng``.
    """
    mask = as_mask(mask)
    get = objective.get if isinstance(objective, ObjectiveCache) else (
        lambda k: float(objective(key_to_bits(k, mask.M))))
    key, _, _ = _sweep(mask.key, mask.M, get, tau, rng.random(mask.M))
    return ComponentMask(key_to_bits(key, mask.M))


def _sweep(key, M, get, tau, uniforms, steps=None, step_values=None):
    value = None
    for m in range(M):
        bit = 1 << m
        k0 = key & ~bit
        k1 = key | bit
        g0 = get(k0)
        g1 = get(k1)
        if uniforms[m] < conditional_probability(g0, g1, tau):
            key, value = k1, g1
        else:
            key, value = k0, g0
        if steps is not None:
            steps.append(key)
            step_values.append(value)
    return key, value, uniforms


def initial_key(M, cfg, rng):
    if cfg.init == "random":
        size = min(cfg.init_active, M)
        chosen = rng.choice(M, size=size, replace=False)
        return sum(1 << int(m) for m in chosen)
    mask = ComponentMask.from_bitstring(cfg.init)
    if mask.M != M:
        raise ParameterDomainError(f"initial mask has {mask.M} bits, expected {M}")
    return mask.key


def run_gibbs(objective, M, cfg, rng=None, cache=None, penalty=0.0):
    """Run ``cfg.T`` sweeps of the Gibbs sampler on ``objective``.

    ``cfg`` must be resolved (no ``None`` fields). ``rng`` defaults to the chain
    stream of ``cfg.seed``.
    """
    cfg.validate()
    rng = stream(cfg.seed, CHAIN) if rng is None else rng
    if cache is None:
        cache = ObjectiveCache(objective, M, cfg.cache_size)
    get = cache.get
    key = start = initial_key(M, cfg, rng)
    init_value = get(key)
    sweep_keys, sweep_values, steps, step_values = [], [], [], []
    for _ in range(cfg.T):
        key, value, _ = _sweep(key, M, get, cfg.tau, rng.random(M), steps, step_values)
        sweep_keys.append(key)
        sweep_values.append(value)
    return ChainTrace(
        M=M,
        tau=cfg.tau,
        burn_in=cfg.burn_in,
        initial_key=start,
        initial_objective=init_value,
        sweep_keys=sweep_keys,
        objectives=np.array(sweep_values, dtype=float),
        step_keys=steps,
        step_objectives=np.array(step_values, dtype=float),
        evaluations=list(cache.log),
        cache_stats=cache.stats(),
        penalty=penalty,
    )


def run_chain(family, data, cfg=None, est_cfg=None, penalty=0.0, rng=None):
    """Algorithm steps 0-1 on ``family``/``data``: build the objective and run the chain.

    ``penalty`` is the per-component penalty added to the jackknife objective
    (zero for the plain sampler). Returns ``(trace, objective)``; the
    objective keeps the delete groups and pilot used, so later fits agree
    with the recorded values. ``rng`` overrides the chain stream of ``cfg.seed``.
    """
    cfg = (cfg or SamplerConfig()).resolve(data.d)
    objective = MaskObjective(family, data, est_cfg, penalty)
    trace = run_gibbs(objective, family.n_components, cfg, rng=rng, penalty=penalty)
    trace.cache_stats["estimation_failures"] = objective.failures
    return trace, objective


def _candidates(trace, scope):
    if scope == "evaluated":
        return [k for k, _ in trace.evaluations], [v for _, v in trace.evaluations]
    if scope == "steps":
        return trace.step_keys, list(trace.step_objectives)
    if scope == "sweeps":
        return trace.sweep_keys, list(trace.objectives)
    raise ParameterDomainError(f"scope must be one of {SELECT_SCOPES}")


def select_min(trace, scope="evaluated"):
    """Earliest mask attaining the smallest recorded objective.

    ``scope`` chooses the record scanned: every evaluated mask (default),
    every single-coordinate state, or end-of-sweep states only.
    """
    keys, values = _candidates(trace, scope)
    best, best_key = math.inf, None
    for k, v in zip(keys, values):
        if v < best:
            best, best_key = v, k
    if best_key is None:
        raise NoValidStateError("no recorded state has a finite objective")
    return ComponentMask(key_to_bits(best_key, trace.M))


def minimizers(trace, tol=1e-12, scope="evaluated"):
    """All distinct recorded masks within ``tol`` of the minimum, in first-seen order."""
    keys, values = _candidates(trace, scope)
    finite = [v for v in values if v < math.inf]
    if not finite:
        raise NoValidStateError("no recorded state has a finite objective")
    best = min(finite)
    seen = []
    for k, v in zip(keys, values):
        if v <= best + tol and k not in seen:
            seen.append(k)
    return [ComponentMask(key_to_bits(k, trace.M)) for k in seen]


def select_threshold(trace, xi, burn_in=None):
    """Mask of components whose post-burn-in inclusion frequency is at least ``xi``."""
    if not 0.5 < xi < 1.0:
        raise ParameterDomainError(f"xi must lie in (0.5, 1), got {xi}")
    mask = ComponentMask(trace.frequencies(burn_in) >= xi)
    if mask.is_degenerate:
        warnings.warn(f"no component reaches inclusion frequency {xi}; empty selection", stacklevel=2)
    return mask


@dataclass(frozen=True)
class ControlChart:
    """Upper control limit from the first ``N`` objectives and its exceedance in the rest."""

    available: bool
    limit: float = math.nan
    exceed_fraction: float = math.nan
    equilibrium: bool = None
    b: float = math.sqrt(10.0)
    N: int = 0
    g_min: float = math.nan
    g_mean: float = math.nan
    g_var: float = math.nan

    def as_dict(self):
        return {
            "available": self.available,
            "limit": self.limit,
            "exceed_fraction": self.exceed_fraction,
            "equilibrium": self.equilibrium,
            "b": self.b,
            "N": self.N,
            "g_min": self.g_min,
            "g_mean": self.g_mean,
            "g_var": self.g_var,
        }


def control_limit(g_min, g_mean, g_var, b=math.sqrt(10.0)):
    """Upper control limit ``g* + sqrt(b^2 s^2 + b^2 (gbar - g*)^2)``."""
    return g_min + math.sqrt(b * b * g_var + b * b * (g_mean - g_min) ** 2)


def control_chart(objectives, b=math.sqrt(10.0), N=None):
    """Chebyshev-type equilibrium check on an objective sequence (or a :class:`ChainTrace`).

    The limit is ``g* + b * sqrt(s^2 + (gbar - g*)^2)`` with ``g*``, ``gbar`` and
    ``s^2`` the minimum, mean and sample variance of the finite values among the
    first ``N``. The chain is judged in equilibrium when at most ``1 / b^2`` of
    the remaining values exceed the limit (infinite values count as exceeding).
    """
    if isinstance(objectives, ChainTrace):
        N = objectives.burn_in if N is None else N
        objectives = objectives.objectives
    values = np.asarray(objectives, dtype=float)
    T = values.size
    if N is None:
        N = T // 2
    if not b > 1:
        raise ParameterDomainError("b must be > 1")
    if not 0 < N < T:
        return ControlChart(False, b=b, N=N)
    head = values[:N]
    head = head[np.isfinite(head)]
    if head.size < 2:
        return ControlChart(False, b=b, N=N)
    g_min = float(head.min())
    g_mean = float(head.mean())
    g_var = float(head.var(ddof=1))
    limit = control_limit(g_min, g_mean, g_var, b)
    tail = values[N:]
    exceed = float(np.mean(tail > limit))
    return ControlChart(True, limit, exceed, exceed <= 1.0 / (b * b), b, N, g_min, g_mean, g_var)


@dataclass(eq=False)
class SelectionReport:
    """Outcome of the plain sampler: argmin and threshold selections with their fits."""

    min_mask: ComponentMask
    threshold_mask: ComponentMask
    min_fit: object
    threshold_fit: object
    frequencies: np.ndarray
    chart: ControlChart
    minimizers: list
    trace: ChainTrace
    config: SamplerConfig

    @property
    def equilibrium(self):
        return bool(self.chart.equilibrium) if self.chart.available else None


def select(family, data, cfg=None, est_cfg=None, se_group_size=None, scope="evaluated", rng=None):
    """Run the plain sampler end to end and fit the selected composite likelihoods."""
    cfg = (cfg or SamplerConfig()).resolve(data.d)
    est_cfg = est_cfg or EstimatorConfig()
    trace, _ = run_chain(family, data, cfg, est_cfg, rng=rng)
    burn = 0 if cfg.all_sweep_frequencies else cfg.burn_in
    w_min = select_min(trace, scope)
    freq = trace.frequencies(burn)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        w_thr = select_threshold(trace, cfg.xi, burn)
    fit_min = fit_mask(family, data, w_min, est_cfg, se_group_size)
    fit_thr = None
    if w_thr.is_degenerate:
        warnings.warn("threshold selection is empty; no estimate computed", stacklevel=2)
    else:
        fit_thr = fit_mask(family, data, w_thr, est_cfg, se_group_size)
    return SelectionReport(
        min_mask=w_min,
        threshold_mask=w_thr,
        min_fit=fit_min,
        threshold_fit=fit_thr,
        frequencies=freq,
        chart=control_chart(trace.objectives, cfg.b, cfg.burn_in),
        minimizers=minimizers(trace, scope=scope),
        trace=trace,
        config=cfg,
    )
