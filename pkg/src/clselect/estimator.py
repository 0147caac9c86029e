"""Composite likelihood estimation under a binary component mask.

The central quantity is the one-step jackknife objective: for a mask ``w`` the
delete-group pseudo-values are obtained by a single Newton step from a pilot
estimate using only the remaining observations, and the objective is the log
determinant of their centred scatter matrix.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateMaskError,
    NonConvergenceError,
    NumericalDomainError,
    ParameterDomainError,
    SingularMatrixError,
)
from .seeding import GROUPS, stream

INNER_MODES = ("auto", "jacobian", "outer")
PILOT_MODES = ("mcle", "fixed")


class ComponentMask:
    """Binary composition rule over ``M`` sub-likelihood components.

    Equality and hashing are bitwise. The integer :attr:`key` packs bit ``m``
    of the mask into bit ``m`` of a Python int and is what the objective cache uses.
    """

    __slots__ = ("bits", "_key")

    def __init__(self, bits):
        arr = np.array(bits, dtype=bool).ravel()
        arr.setflags(write=False)
        self.bits = arr
        self._key = None

    @classmethod
    def from_key(cls, key, M):
        return cls([(key >> m) & 1 for m in range(M)])

    @classmethod
    def from_indices(cls, indices, M):
        bits = np.zeros(M, dtype=bool)
        bits[list(indices)] = True
        return cls(bits)

    @classmethod
    def from_bitstring(cls, s):
        if not s or set(s) - {"0", "1"}:
            raise ValueError(f"not a bitstring: {s!r}")
        return cls([c == "1" for c in s])

    @property
    def M(self):
        return self.bits.size

    @property
    def popcount(self):
        return int(self.bits.sum())

    @property
    def is_degenerate(self):
        return not self.bits.any()

    @property
    def key(self):
        if self._key is None:
            self._key = sum(1 << int(m) for m in np.flatnonzero(self.bits))
        return self._key

    @property
    def active(self):
        return np.flatnonzero(self.bits)

    def bitstring(self):
        return "".join("1" if b else "0" for b in self.bits)

    def __array__(self, dtype=None, copy=None):
        return self.bits if dtype is None else self.bits.astype(dtype)

    def __len__(self):
        return self.M

    def __eq__(self, other):
        if isinstance(other, ComponentMask):
            return self.M == other.M and self.key == other.key
        return NotImplemented

    def __hash__(self):
        return hash((self.M, self.key))

    def __repr__(self):
        return f"ComponentMask('{self.bitstring()}')"


def as_mask(mask):
    return mask if isinstance(mask, ComponentMask) else ComponentMask(mask)


@dataclass(frozen=True)
class EstimatorConfig:
    """Numerical settings for McLE solving and the jackknife objective.

    ``inner`` picks the matrix inverted in the one-step update: ``"jacobian"``
    sums minus the score derivatives (a true Newton step, exact for linear
    scores), ``"outer"`` sums per-component score outer products and
    ``"auto"`` takes the family's ``preferred_inner``.
    ``pilot="mcle"`` re-solves the McLE for every mask from a fixed per-dataset
    start; ``"fixed"`` uses one pilot estimate for all masks, computed from
    ``pilot_components`` (all components when None).
    """

    root_tol: float = 1e-9
    max_iter: int = 100
    group_size: int = 1
    pilot: str = "mcle"
    pilot_components: tuple = None
    ridge: float = 0.0
    inner: str = "auto"
    group_seed: int = 0
    use_closed_form: bool = True

    def __post_init__(self):
        if not self.root_tol > 0:
            raise ParameterDomainError("root_tol must be > 0")
        if self.max_iter < 1:
            raise ParameterDomainError("max_iter must be >= 1")
        if self.group_size < 1:
            raise ParameterDomainError("group_size must be >= 1")
        if self.ridge < 0:
            raise ParameterDomainError("ridge must be >= 0")
        if self.inner not in INNER_MODES:
            raise ParameterDomainError(f"inner must be one of {INNER_MODES}")
        if self.pilot not in PILOT_MODES:
            raise ParameterDomainError(f"pilot must be one of {PILOT_MODES}")


@dataclass(frozen=True)
class ObjectiveValue:
    """Objective ``g`` plus a complexity penalty; ``+inf`` marks invalid masks."""

    g: float
    penalty: float = 0.0

    @property
    def total(self):
        if not math.isfinite(self.g):
            return math.inf
        return self.g + self.penalty

    @property
    def finite(self):
        return math.isfinite(self.g)


INFINITE = ObjectiveValue(math.inf)


@dataclass(frozen=True, eq=False)
class JackknifeSet:
    pseudo_values: np.ndarray
    group_size: int
    singular: bool = False
    mean: np.ndarray = field(init=False)
    scatter: np.ndarray = field(init=False)

    def __post_init__(self):
        pv = np.atleast_2d(np.asarray(self.pseudo_values, dtype=float))
        object.__setattr__(self, "pseudo_values", pv)
        mean = pv.mean(axis=0)
        centred = pv - mean
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "scatter", centred.T @ centred)

    @property
    def n_groups(self):
        return self.pseudo_values.shape[0]

    def variance(self):
        """Grouped jackknife covariance ``(g - 1) / g * scatter`` of the estimator."""
        g = self.n_groups
        return (g - 1) / g * self.scatter

    def standard_error(self):
        return np.sqrt(np.diag(self.variance()))


@dataclass(frozen=True, eq=False)
class SandwichEstimate:
    """Plug-in sensitivity ``H_hat``, variability ``K_hat`` and ``V_hat = H^-1 K H^-1``.

    ``V_hat`` is on the root-n scale; the variance of the estimate itself is ``V_hat / n``.
    """

    H_hat: np.ndarray
    K_hat: np.ndarray
    V_hat: np.ndarray
    n: int

    @property
    def estimate_variance(self):
        return self.V_hat / self.n


def _active(mask):
    mask = as_mask(mask)
    if mask.is_degenerate:
        raise DegenerateMaskError("the all-zero mask selects no components")
    return mask.active


def _masked_sums(family, data, theta, active):
    s = family.scores(theta, data)[:, active].sum(axis=(0, 1))
    h = family.sensitivities(theta, data)[:, active].sum(axis=(0, 1))
    return s, h


def newton_solve(family, data, active, theta_init, cfg):
    """Damped Newton iteration on the masked aggregate score."""
    theta = family.check_theta(theta_init).copy()
    for _ in range(cfg.max_iter):
        s, h = _masked_sums(family, data, theta, active)
        if not np.all(np.isfinite(s)):
            raise NumericalDomainError("non-finite aggregate score")
        if np.linalg.norm(s) <= cfg.root_tol:
            return theta
        try:
            step = np.linalg.solve(np.atleast_2d(h), s)
        except np.linalg.LinAlgError:
            raise SingularMatrixError("singular score Jacobian in Newton iteration") from None
        t = 1.0
        while not family.in_domain(theta + t * step):
            t *= 0.5
            if t < 1e-12:
                raise NonConvergenceError("Newton step cannot stay in the parameter domain", theta)
        theta = theta + t * step
    s, _ = _masked_sums(family, data, theta, active)
    if np.linalg.norm(s) <= cfg.root_tol:
        return theta
    raise NonConvergenceError(
        f"Newton iteration did not converge in {cfg.max_iter} steps (|score|={np.linalg.norm(s):.3g})",
        theta,
    )


def solve_mcle(family, data, mask, theta_init=None, cfg=None):
    """Root of the masked composite score equation.

    Families with a closed-form estimator (common location) use it unless
    ``cfg.use_closed_form`` is False.
    """
    cfg = cfg or EstimatorConfig()
    active = _active(mask)
    if family.has_closed_form and cfg.use_closed_form:
        return family.closed_form_mcle(data, as_mask(mask).bits)
    if theta_init is None:
        theta_init = family.pilot(data)
    return newton_solve(family, data, active, theta_init, cfg)


def jackknife_groups(n, k, seed=0):
    """Partition ``range(n)`` into delete groups of size ``k`` (the last may be smaller).

    For ``k > 1`` observations are permuted with a seeded stream first.
    """
    if not 1 <= k < n:
        raise ParameterDomainError(f"group size must satisfy 1 <= k < n={n}, got {k}")
    if k == 1:
        return [np.array([i]) for i in range(n)]
    order = stream(seed, GROUPS).permutation(n)
    return [np.sort(order[s:s + k]) for s in range(0, n, k)]


def _group_sums(values, groups):
    if all(len(g) == 1 for g in groups) and len(groups) == values.shape[0]:
        return values[np.concatenate(groups)]
    return np.stack([values[g].sum(axis=0) for g in groups])


def one_step_pseudo_values(family, data, mask, theta_tilde, cfg=None, groups=None):
    """Delete-group pseudo-values from one Newton step at ``theta_tilde``.

    For each group ``G`` the pseudo-value is
    ``theta_tilde + A_{-G}^{-1} S_{-G}`` where ``S_{-G}`` is the masked score summed
    over observations outside ``G`` and ``A_{-G}`` the matching sum of either
    sensitivities or score outer products (see :class:`EstimatorConfig`).
    Singular inner matrices yield a set flagged ``singular``.
    """
    cfg = cfg or EstimatorConfig()
    active = _active(mask)
    theta_tilde = family.check_theta(theta_tilde)
    if groups is None:
        groups = jackknife_groups(data.n, cfg.group_size, cfg.group_seed)
    p = family.dim
    if any(data.n - len(g) < p for g in groups):
        raise ParameterDomainError("a delete group leaves fewer than p observations")

    u = family.scores(theta_tilde, data)[:, active]
    s = u.sum(axis=1)
    inner = family.preferred_inner if cfg.inner == "auto" else cfg.inner
    if inner == "jacobian":
        h = family.sensitivities(theta_tilde, data)[:, active].sum(axis=1)
    else:
        h = np.einsum("nap,naq->npq", u, u)
    s_minus = s.sum(axis=0) - _group_sums(s, groups)
    h_minus = h.sum(axis=0) - _group_sums(h, groups)

    if p == 1:
        denom = h_minus[:, 0, 0]
        singular = bool(np.any(denom == 0) or not np.all(np.isfinite(denom)))
        with np.errstate(divide="ignore", invalid="ignore"):
            steps = (s_minus[:, 0] / denom)[:, None]
    else:
        try:
            steps = np.linalg.solve(h_minus, s_minus[..., None])[..., 0]
            singular = bool(np.any(np.linalg.cond(h_minus) > 1.0 / np.finfo(float).eps))
        except np.linalg.LinAlgError:
            steps = np.full_like(s_minus, np.nan)
            singular = True
    pv = theta_tilde + steps
    if not np.all(np.isfinite(pv)):
        singular = True
        pv = np.where(np.isfinite(pv), pv, 0.0)
    return JackknifeSet(pv, max(len(g) for g in groups), singular)


def _numerically_singular(scatter, pv):
    scale = max(1.0, float(np.max(np.abs(pv))))
    tol = pv.shape[0] * (np.finfo(float).eps * scale) ** 2
    return float(np.linalg.eigvalsh(scatter).min()) <= tol


def g_hat(jk, ridge=0.0):
    """Log-determinant of the centred pseudo-value scatter (plus ``ridge * I``)."""
    if jk.singular:
        return INFINITE
    p = jk.scatter.shape[0]
    if jk.n_groups < p + 1:
        raise ParameterDomainError("need at least p + 1 pseudo-values")
    scatter = jk.scatter
    if ridge > 0:
        scatter = scatter + ridge * np.eye(p)
    elif _numerically_singular(scatter, jk.pseudo_values):
        return INFINITE
    if p == 1:
        v = float(scatter[0, 0])
        return ObjectiveValue(math.log(v)) if v > 0 else INFINITE
    sign, logdet = np.linalg.slogdet(scatter)
    if sign <= 0 or not np.isfinite(logdet):
        return INFINITE
    return ObjectiveValue(float(logdet))


def g_hat_penalized(g, mask, lam):
    """Add the complexity penalty ``lam * popcount(mask)`` to an objective value."""
    if not isinstance(g, ObjectiveValue):
        g = ObjectiveValue(float(g))
    return ObjectiveValue(g.g, g.penalty + lam * as_mask(mask).popcount)


def penalty_weight(lam, n, scale="per-observation"):
    """Per-component penalty applied to the log-variance objective.

    With ``scale="per-observation"`` the penalty is ``2 lam / n`` so that the
    penalised objective is the information criterion ``n log(var) + 2 lam |w|``
    divided by ``n``; ``lam = 1`` then reproduces AIC, ``lam = log(n) / 2`` BIC and
    ``lam = log(log(n))`` HQC. ``scale="raw"`` applies ``lam`` unchanged.
    """
    if lam < 0:
        raise ParameterDomainError("lambda must be >= 0")
    if scale == "raw":
        return float(lam)
    if scale == "per-observation":
        return 2.0 * lam / n
    raise ParameterDomainError(f"unknown penalty scale {scale!r}")


PENALTY_PRESETS = {
    "aic": lambda n: 1.0,
    "bic": lambda n: 0.5 * math.log(n),
    "hqc": lambda n: math.log(math.log(n)),
}


def sandwich_variance(family, data, mask, theta_hat):
    """Plug-in sandwich ``H^-1 K H^-1`` from per-observation scores at ``theta_hat``."""
    active = _active(mask)
    u = family.scores(family.check_theta(theta_hat), data)[:, active]
    n = data.n
    H = np.einsum("nap,naq->pq", u, u) / (n - 1)
    agg = u.sum(axis=1)
    K = agg.T @ agg / n
    try:
        Hinv = np.linalg.inv(H)
    except np.linalg.LinAlgError:
        raise SingularMatrixError("singular sensitivity estimate") from None
    if not np.all(np.isfinite(Hinv)) or np.linalg.cond(H) > 1.0 / np.finfo(float).eps:
        raise SingularMatrixError("singular sensitivity estimate")
    V = Hinv @ K @ Hinv
    return SandwichEstimate(H, K, 0.5 * (V + V.T), n)


def g0_common_location(mask, rho, d_star):
    """Log-variance of the common-location McLE up to an additive constant.

    ``log(|w| + 2 rho * C(c, 2)) - 2 log |w|`` where ``c`` counts the active
    components inside the correlated block of size ``d_star``.
    """
    bits = np.asarray(mask, dtype=bool)
    total = int(bits.sum())
    if total == 0:
        raise DegenerateMaskError("the all-zero mask selects no components")
    c = int(bits[:d_star].sum())
    return math.log(total + rho * c * (c - 1)) - 2.0 * math.log(total)


class MaskObjective:
    """Callable mapping a mask to its (optionally penalised) jackknife objective.

    The object fixes everything that must not change between masks: the
    delete groups and the Newton starting point. Evaluation is a pure function
    of the mask. Estimation failures are returned as ``+inf`` and counted in
    ``failures``.
    """

    def __init__(self, family, data, cfg=None, penalty=0.0):
        family.check_data(data)
        self.family = family
        self.data = data
        self.cfg = cfg or EstimatorConfig()
        self.penalty = float(penalty)
        self.groups = jackknife_groups(data.n, self.cfg.group_size, self.cfg.group_seed)
        self.failures = 0
        self.start = self._start()
        self.fixed_pilot = None
        if self.cfg.pilot == "fixed":
            comps = self.cfg.pilot_components
            bits = np.ones(family.n_components, bool)
            if comps is not None:
                bits = np.zeros(family.n_components, bool)
                bits[list(comps)] = True
            self.fixed_pilot = solve_mcle(family, data, bits, self.start, self.cfg)

    def _start(self):
        fam, data = self.family, self.data
        if fam.has_closed_form and self.cfg.use_closed_form:
            return fam.closed_form_mcle(data, np.ones(fam.n_components, bool))
        try:
            return solve_mcle(fam, data, np.ones(fam.n_components, bool), fam.pilot(data), self.cfg)
        except (NonConvergenceError, SingularMatrixError, NumericalDomainError):
            return fam.pilot(data)

    @property
    def n_components(self):
        return self.family.n_components

    def theta_tilde(self, mask):
        if self.fixed_pilot is not None:
            return self.fixed_pilot
        return solve_mcle(self.family, self.data, mask, self.start, self.cfg)

    def jackknife(self, mask):
        theta = self.theta_tilde(mask)
        return one_step_pseudo_values(self.family, self.data, mask, theta, self.cfg, self.groups)

    def evaluate(self, mask):
        """Full :class:`ObjectiveValue` for ``mask``."""
        mask = as_mask(mask)
        if mask.is_degenerate:
            return INFINITE
        try:
            value = g_hat(self.jackknife(mask), self.cfg.ridge)
        except (NonConvergenceError, SingularMatrixError, NumericalDomainError):
            self.failures += 1
            return INFINITE
        if not value.finite:
            self.failures += 1
            return INFINITE
        return g_hat_penalized(value, mask, self.penalty) if self.penalty else value

    def __call__(self, mask):
        return self.evaluate(mask).total


@dataclass(frozen=True, eq=False)
class MaskFit:
    """Estimate, objective and jackknife standard error at one mask."""

    mask: ComponentMask
    theta: np.ndarray
    objective: ObjectiveValue
    jackknife: JackknifeSet

    @property
    def standard_error(self):
        return self.jackknife.standard_error()


def fit_mask(family, data, mask, cfg=None, se_group_size=None, penalty=0.0):
    """McLE at ``mask`` with its objective and a delete-k jackknife standard error.

    ``se_group_size`` overrides the delete-group size used for the standard
    error only (the objective keeps ``cfg.group_size``). The standard error uses
    the same one-step pseudo-values as the objective.
    """
    cfg = cfg or EstimatorConfig()
    mask = as_mask(mask)
    objective = MaskObjective(family, data, cfg, penalty)
    theta = solve_mcle(family, data, mask, objective.start, cfg)
    value = objective.evaluate(mask)
    groups = objective.groups
    if se_group_size is not None and se_group_size != cfg.group_size:
        groups = jackknife_groups(data.n, se_group_size, cfg.group_seed)
    jk = one_step_pseudo_values(family, data, mask, theta, cfg, groups)
    return MaskFit(mask, theta, value, jk)
