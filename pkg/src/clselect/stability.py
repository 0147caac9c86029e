"""Penalised sampling with stability selection.

The chain runs on the jackknife objective plus a per-component penalty; the
selected set keeps components whose inclusion frequency reaches a threshold
calibrated so that the bound on expected false selections equals ``alpha * M``.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ParameterDomainError
from .estimator import (
    ComponentMask,
    EstimatorConfig,
    PENALTY_PRESETS,
    fit_mask,
    penalty_weight,
)
from .sampler import SamplerConfig, control_chart, run_chain


@dataclass(frozen=True)
class StabilityConfig:
    """``alpha``: nominal per-comparison error rate. ``lam``: penalty level
    (number or one of ``aic``/``bic``/``hqc``). ``penalty_scale`` is passed to
    :func:`clselect.estimator.penalty_weight`. ``eta_burn_in`` sweeps are skipped
    when averaging the active-component count and frequencies (0 uses all sweeps)."""

    alpha: float = 0.1
    lam: object = 1.0
    penalty_scale: str = "per-observation"
    eta_burn_in: int = 0

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ParameterDomainError(f"alpha must lie in (0, 1), got {self.alpha}")
        if isinstance(self.lam, str):
            if self.lam not in PENALTY_PRESETS:
                raise ParameterDomainError(f"unknown penalty preset {self.lam!r}")
        elif not self.lam >= 0:
            raise ParameterDomainError(f"lambda must be >= 0, got {self.lam}")
        if self.eta_burn_in < 0:
            raise ParameterDomainError("eta_burn_in must be >= 0")

    def lam_value(self, n):
        if isinstance(self.lam, str):
            return PENALTY_PRESETS[self.lam](n)
        return float(self.lam)

    def weight(self, n):
        return penalty_weight(self.lam_value(n), n, self.penalty_scale)


def pcer_threshold(eta, M, alpha):
    """Stability threshold ``(eta / (alpha M^2) + 1) / 2``.

    Values above one are returned unchanged with a warning; nothing can then
    be selected.
    """
    if eta < 0 or M < 1 or not 0 < alpha < 1:
        raise ParameterDomainError("need eta >= 0, M >= 1 and 0 < alpha < 1")
    xi = 0.5 * (eta / (alpha * M * M) + 1.0)
    if xi > 1.0:
        warnings.warn(f"stability threshold {xi:.4f} exceeds 1; the stable set is empty", stacklevel=2)
    return xi


def false_selection_bound(eta, xi, M):
    """Upper bound ``eta / ((2 xi - 1) M)`` on the expected number of false selections."""
    if xi <= 0.5:
        return math.inf
    return eta / ((2.0 * xi - 1.0) * M)


@dataclass(eq=False)
class StabilityReport:
    eta: float
    xi: float
    mask: ComponentMask
    ev_bound: float
    frequencies: np.ndarray
    alpha: float
    M: int

    @property
    def pcer(self):
        return self.ev_bound / self.M

    def as_dict(self):
        return {
            "eta": self.eta,
            "xi": self.xi,
            "mask": self.mask.bitstring(),
            "n_selected": self.mask.popcount,
            "ev_bound": self.ev_bound,
            "pcer": self.pcer,
            "alpha": self.alpha,
            "frequencies": [float(f) for f in self.frequencies],
        }


def stability_select(trace, cfg=None, xi=None, burn_in=None):
    """Stable set from a penalised chain.

    ``eta`` is the mean number of active components per sweep; the threshold
    comes from :func:`pcer_threshold` unless ``xi`` is given. Both averages skip
    the first ``burn_in`` sweeps (default ``cfg.eta_burn_in``).
    """
    cfg = cfg or StabilityConfig()
    if trace.T == 0:
        raise ParameterDomainError("empty trace")
    start = cfg.eta_burn_in if burn_in is None else burn_in
    masks = trace.masks[start:]
    if masks.shape[0] == 0:
        raise ParameterDomainError("burn-in leaves no sweeps")
    M = trace.M
    eta = float(masks.sum(axis=1).mean())
    freq = masks.mean(axis=0)
    if xi is None:
        xi = pcer_threshold(eta, M, cfg.alpha)
        # 2 xi - 1 cancels badly when xi is close to 1/2; use the exact excess instead
        excess = eta / (cfg.alpha * M * M)
        bound = eta / (excess * M) if eta > 0 else math.inf
        if eta > 0 and not math.isclose(bound, cfg.alpha * M, rel_tol=1e-12):
            raise AssertionError(f"false-selection bound {bound} != alpha*M {cfg.alpha * M}")
    else:
        bound = false_selection_bound(eta, xi, M)
    return StabilityReport(eta, xi, ComponentMask(freq >= xi), bound, freq, cfg.alpha, M)


@dataclass(eq=False)
class StableSelection:
    """Outcome of the penalised sampler with stability selection."""

    report: StabilityReport
    fit: object
    penalized_objective: float
    chart: object
    trace: object
    config: SamplerConfig
    stability: StabilityConfig
    penalty: float
    penalty_ratio: float


def select_stable(family, data, cfg=None, est_cfg=None, stab_cfg=None, se_group_size=None, rng=None):
    """Run the penalised chain and return the stable selection with its fit.

    The chain draws from ``rng`` when given, else from the same chain stream
    of ``cfg.seed`` as :func:`clselect.sampler.select`, so with a zero penalty
    both algorithms visit identical states.
    """
    cfg = (cfg or SamplerConfig()).resolve(data.d)
    est_cfg = est_cfg or EstimatorConfig()
    stab_cfg = stab_cfg or StabilityConfig()
    weight = stab_cfg.weight(data.n)
    trace, _ = run_chain(family, data, cfg, est_cfg, penalty=weight, rng=rng)
    report = stability_select(trace, stab_cfg)
    fit = None
    if report.mask.is_degenerate:
        warnings.warn("stable set is empty; no estimate computed", stacklevel=2)
    else:
        fit = fit_mask(family, data, report.mask, est_cfg, se_group_size, penalty=weight)
    g = trace.unpenalized_objectives
    g = g[np.isfinite(g)]
    spread = float(g.max() - g.min()) if g.size else 0.0
    ratio = weight * report.eta / spread if spread > 0 else math.inf
    return StableSelection(
        report=report,
        fit=fit,
        penalized_objective=fit.objective.total if fit is not None else math.inf,
        chart=control_chart(trace.objectives, cfg.b, cfg.burn_in),
        trace=trace,
        config=cfg,
        stability=stab_cfg,
        penalty=weight,
        penalty_ratio=ratio,
    )
