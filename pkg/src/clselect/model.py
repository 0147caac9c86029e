"""Data containers, sub-likelihood families and simulators.

Three families are provided:

* :class:`CommonLocationFamily` -- one-wise Gaussian scores for a common mean,
  one component per variable.
* :class:`ExchangeablePairFamily` -- pairwise scores for the correlation of an
  exchangeable Gaussian vector, one component per variable pair.
* :class:`OrdinalProbitFamily` -- one-wise latent-probit scores for a group
  effect on ordinal (0/1/2) genotypes.

Every family returns per-observation, per-component quantities as arrays of
shape ``(n, M, p)`` (scores) and ``(n, M, p, p)`` (sensitivities, i.e. minus the
derivative of the score). Aggregating over observations and active components
is left to :mod:`clselect.estimator`.
"""

import csv
import itertools
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri

from .errors import NumericalDomainError, ParameterDomainError

_LOG_2PI = float(np.log(2.0 * np.pi))
_MIN_PROB = 1e-300


def _as_rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    from .seeding import stream
    return stream(seed)


@dataclass(frozen=True, eq=False)
class Dataset:
    """An ``n x d`` observation matrix with an optional binary group covariate.

    Arrays are copied and marked read-only on construction.
    """

    observations: np.ndarray
    covariate: np.ndarray = None
    names: tuple = None

    def __post_init__(self):
        obs = np.array(self.observations, dtype=float)
        if obs.ndim == 1:
            obs = obs[:, None]
        if obs.ndim != 2:
            raise ParameterDomainError("observations must be a 2-d array")
        if obs.shape[0] < 2:
            raise ParameterDomainError(f"need at least 2 observations, got {obs.shape[0]}")
        if not np.all(np.isfinite(obs)):
            raise ParameterDomainError("observations contain missing or non-finite entries")
        obs.setflags(write=False)
        object.__setattr__(self, "observations", obs)
        if self.covariate is not None:
            cov = np.array(self.covariate, dtype=float).ravel()
            if cov.shape[0] != obs.shape[0]:
                raise ParameterDomainError("covariate length differs from observation count")
            if not np.all((cov == 0) | (cov == 1)):
                raise ParameterDomainError("covariate entries must be 0 or 1")
            cov.setflags(write=False)
            object.__setattr__(self, "covariate", cov)
        names = self.names
        if names is None:
            names = tuple(f"x{k + 1}" for k in range(obs.shape[1]))
        names = tuple(str(s) for s in names)
        if len(names) != obs.shape[1]:
            raise ParameterDomainError("number of names differs from column count")
        object.__setattr__(self, "names", names)

    @property
    def n(self):
        return self.observations.shape[0]

    @property
    def d(self):
        return self.observations.shape[1]

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        if self.names != other.names:
            return False
        if not np.array_equal(self.observations, other.observations):
            return False
        if (self.covariate is None) != (other.covariate is None):
            return False
        return self.covariate is None or np.array_equal(self.covariate, other.covariate)

    __hash__ = None

    def subset(self, rows):
        cov = None if self.covariate is None else self.covariate[rows]
        return Dataset(self.observations[rows], cov, self.names)

    def to_csv(self, path):
        """Write one observation per row with a header; ``group`` is the last column if present."""
        header = list(self.names)
        if self.covariate is not None:
            header.append("group")
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\r\n")
            writer.writerow(header)
            for i in range(self.n):
                row = [repr(float(v)) for v in self.observations[i]]
                if self.covariate is not None:
                    row.append(str(int(self.covariate[i])))
                writer.writerow(row)

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise ParameterDomainError(f"{path}: empty file")
        header, body = rows[0], [r for r in rows[1:] if r]
        try:
            values = np.array([[float(v) for v in r] for r in body], dtype=float)
        except ValueError as exc:
            raise ParameterDomainError(f"{path}: non-numeric entry ({exc})") from None
        if values.ndim != 2 or values.shape[1] != len(header):
            raise ParameterDomainError(f"{path}: ragged rows or header mismatch")
        covariate = None
        if header and header[-1] == "group":
            covariate = values[:, -1]
            values = values[:, :-1]
            header = header[:-1]
        return cls(values, covariate, tuple(header))


@dataclass(frozen=True, eq=False)
class ScoreTensor:
    """Per-observation, per-component scores ``values[i, m, :]`` evaluated at ``theta_at``."""

    values: np.ndarray
    theta_at: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 3:
            raise ValueError("score tensor must have shape (n, M, p)")
        if not np.all(np.isfinite(v)):
            raise NumericalDomainError("non-finite score entries")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "theta_at", np.atleast_1d(np.asarray(self.theta_at, float)))

    @property
    def n(self):
        return self.values.shape[0]

    @property
    def n_components(self):
        return self.values.shape[1]

    @property
    def dim(self):
        return self.values.shape[2]

    def aggregate(self, mask=None):
        """Sum over observations and active components; returns a p-vector."""
        v = self.values if mask is None else self.values[:, np.asarray(mask, bool)]
        return v.sum(axis=(0, 1))


# ---------------------------------------------------------------------------
# model specifications


@dataclass(frozen=True)
class CommonLocationSpec:
    """``N_d(mu 1, Sigma)`` with correlation ``rho`` inside the leading ``d_star`` block."""

    d: int
    d_star: int
    rho: float
    mu: float = 0.0

    def __post_init__(self):
        if self.d < 1:
            raise ParameterDomainError(f"d must be >= 1, got {self.d}")
        if not 0 <= self.d_star <= self.d:
            raise ParameterDomainError(f"d_star must lie in [0, d={self.d}], got {self.d_star}")
        lower = -1.0 / (self.d_star - 1) if self.d_star > 1 else -1.0
        if not lower < self.rho < 1.0:
            raise ParameterDomainError(
                f"rho must lie in ({lower:g}, 1) for d_star={self.d_star}, got {self.rho}"
            )

    def covariance(self):
        sigma = np.eye(self.d)
        block = slice(0, self.d_star)
        sigma[block, block] = self.rho
        np.fill_diagonal(sigma, 1.0)
        return sigma

    @property
    def uncorrelated(self):
        """Indices of the components outside the correlated block."""
        return np.arange(self.d_star, self.d)


@dataclass(frozen=True)
class ExchangeableSpec:
    """``N_d(0, (1 - rho) I + rho 11^T)`` with ``0 <= rho < 1``."""

    d: int
    rho: float

    def __post_init__(self):
        if self.d < 2:
            raise ParameterDomainError(f"pairwise model needs d >= 2, got {self.d}")
        if not 0.0 <= self.rho < 1.0:
            raise ParameterDomainError(f"rho must lie in [0, 1), got {self.rho}")

    def covariance(self):
        return (1.0 - self.rho) * np.eye(self.d) + self.rho * np.ones((self.d, self.d))


@dataclass(frozen=True, eq=False)
class OrdinalProbitSpec:
    """Latent-probit model for ordinal genotypes.

    ``gamma`` has shape ``(d, 2)``; row ``k`` holds the two thresholds cutting the
    latent ``N(theta x, 1)`` variable of SNP ``k`` into categories 0, 1 and 2.
    Infinite thresholds are allowed.
    """

    d: int
    theta: float
    gamma: np.ndarray
    case_fraction: float = 0.2

    def __post_init__(self):
        g = np.array(self.gamma, dtype=float)
        if g.shape == (2,):
            g = np.tile(g, (self.d, 1))
        if g.shape != (self.d, 2):
            raise ParameterDomainError(f"gamma must have shape ({self.d}, 2), got {g.shape}")
        if np.any(np.isnan(g)) or not np.all(g[:, 0] < g[:, 1]):
            raise ParameterDomainError("thresholds must satisfy gamma_k1 < gamma_k2 for every k")
        if not 0.0 <= self.case_fraction <= 1.0:
            raise ParameterDomainError("case_fraction must lie in [0, 1]")
        g.setflags(write=False)
        object.__setattr__(self, "gamma", g)

    def category_probabilities(self, theta, x):
        """Return a ``(d, 3)`` array of category probabilities at mean ``theta * x``."""
        shift = theta * x
        lo = np.column_stack([np.full(self.d, -np.inf), self.gamma])
        hi = np.column_stack([self.gamma, np.full(self.d, np.inf)])
        return _interval_prob(lo - shift, hi - shift)


# ---------------------------------------------------------------------------
# simulators


def _mvn(rng, mean, sigma, n):
    try:
        chol = np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        raise ParameterDomainError("covariance matrix is not positive definite") from None
    z = rng.standard_normal((n, sigma.shape[0]))
    return mean + z @ chol.T


def _check_n(n):
    if int(n) != n or n < 2:
        raise ParameterDomainError(f"n must be an integer >= 2, got {n}")
    return int(n)


def simulate_common_location(spec, n, seed):
    rng = _as_rng(seed)
    n = _check_n(n)
    return Dataset(_mvn(rng, spec.mu, spec.covariance(), n))


def simulate_exchangeable(spec, n, seed):
    rng = _as_rng(seed)
    n = _check_n(n)
    return Dataset(_mvn(rng, 0.0, spec.covariance(), n))


def simulate_ordinal(spec, n, seed, R=None):
    """Draw latent ``Z ~ N_d(theta x 1, R)`` and cut each coordinate at its thresholds.

    Exactly ``round(case_fraction * n)`` subjects are cases, placed at random rows.
    ``R`` defaults to the identity.
    """
    rng = _as_rng(seed)
    n = _check_n(n)
    R = np.eye(spec.d) if R is None else np.asarray(R, dtype=float)
    if R.shape != (spec.d, spec.d) or not np.allclose(np.diag(R), 1.0):
        raise ParameterDomainError("R must be a d x d correlation matrix")
    n_cases = int(round(spec.case_fraction * n))
    x = np.zeros(n)
    x[rng.permutation(n)[:n_cases]] = 1.0
    z = _mvn(rng, 0.0, R, n) + spec.theta * x[:, None]
    y = (z > spec.gamma[:, 0]).astype(float) + (z > spec.gamma[:, 1]).astype(float)
    return Dataset(y, x)


# ---------------------------------------------------------------------------
# sub-likelihood families


class SubLikelihoodFamily:
    """Contract shared by the concrete families.

    Subclasses set ``n_components`` (M), ``dim`` (p) and ``components`` (one
    descriptor per component, e.g. a variable index or a variable pair) and
    implement :meth:`scores` and :meth:`sensitivities`.
    """

    name = "abstract"
    n_components = 0
    dim = 1
    components = ()
    has_closed_form = False
    preferred_inner = "outer"

    def check_data(self, data):
        pass

    def check_theta(self, theta):
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        if theta.shape != (self.dim,) or not np.all(np.isfinite(theta)):
            raise ParameterDomainError(f"theta must be a finite {self.dim}-vector, got {theta}")
        return theta

    def in_domain(self, theta):
        try:
            self.check_theta(theta)
        except ParameterDomainError:
            return False
        return True

    def scores(self, theta, data):
        raise NotImplementedError

    def sensitivities(self, theta, data):
        raise NotImplementedError

    def loglik(self, theta, data):
        """Per-observation, per-component log-likelihood contributions, shape ``(n, M)``."""
        raise NotImplementedError

    def closed_form_mcle(self, data, mask):
        return None

    def pilot(self, data):
        """A cheap starting value for Newton iterations."""
        return np.zeros(self.dim)

    def score_tensor(self, theta, data):
        theta = self.check_theta(theta)
        return ScoreTensor(self.scores(theta, data), theta)


class CommonLocationFamily(SubLikelihoodFamily):
    """One-wise scores ``X_m - mu`` for a common location (M = d, p = 1)."""

    name = "common-location"
    has_closed_form = True
    # linear score: the Newton step reproduces exact leave-one-out estimates
    preferred_inner = "jacobian"

    def __init__(self, d):
        self.d = int(d)
        self.n_components = self.d
        self.components = tuple(range(self.d))

    def check_data(self, data):
        if data.d != self.d:
            raise ParameterDomainError(f"expected {self.d} columns, got {data.d}")

    def scores(self, theta, data):
        return (data.observations - float(theta[0]))[:, :, None]

    def sensitivities(self, theta, data):
        return np.ones((data.n, self.d, 1, 1))

    def loglik(self, theta, data):
        r = data.observations - float(np.ravel(theta)[0])
        return -0.5 * r * r - 0.5 * _LOG_2PI

    def closed_form_mcle(self, data, mask):
        w = np.asarray(mask, dtype=float)
        return np.array([w @ data.observations.mean(axis=0) / w.sum()])

    def pilot(self, data):
        return np.array([data.observations.mean()])


def common_location_scores(theta, data):
    """Score tensor with entry ``(i, m)`` equal to ``X_m^(i) - theta``."""
    return CommonLocationFamily(data.d).score_tensor(theta, data)


def _pair_products(x, pairs):
    l, m = pairs[:, 0], pairs[:, 1]
    return x[:, l] * x[:, m], x[:, l] ** 2 + x[:, m] ** 2


class ExchangeablePairFamily(SubLikelihoodFamily):
    """Pairwise scores for the exchangeable correlation ``rho`` (M = d(d-1)/2, p = 1).

    Pairs ``(l, m)`` with ``l < m`` are enumerated lexicographically. The score of
    one observation for pair ``(l, m)`` is the cubic

        (1 + rho^2) x_l x_m - rho (x_l^2 + x_m^2) + rho (1 - rho^2),

    which is the derivative of the bivariate normal log-density times ``(1 - rho^2)^2``.
    """

    name = "exchangeable"

    def __init__(self, d):
        self.d = int(d)
        if self.d < 2:
            raise ParameterDomainError("pairwise family needs d >= 2")
        self.components = tuple(itertools.combinations(range(self.d), 2))
        self.n_components = len(self.components)
        self._pairs = np.array(self.components, dtype=int)

    def check_data(self, data):
        if data.d != self.d:
            raise ParameterDomainError(f"expected {self.d} columns, got {data.d}")

    def check_theta(self, theta):
        theta = super().check_theta(theta)
        if not -1.0 < theta[0] < 1.0:
            raise ParameterDomainError(f"rho must lie in (-1, 1), got {theta[0]}")
        return theta

    def _products(self, data):
        cached = getattr(data, "_pair_cache", None)
        if cached is None or cached[0] is not self:
            cached = (self, *_pair_products(data.observations, self._pairs))
            object.__setattr__(data, "_pair_cache", cached)
        return cached[1], cached[2]

    def scores(self, theta, data):
        r = float(theta[0])
        cross, squares = self._products(data)
        return ((1 + r * r) * cross - r * squares + r * (1 - r * r))[:, :, None]

    def sensitivities(self, theta, data):
        r = float(theta[0])
        cross, squares = self._products(data)
        return -(2 * r * cross - squares + 1 - 3 * r * r)[:, :, None, None]

    def loglik(self, theta, data):
        r = float(np.ravel(theta)[0])
        cross, squares = self._products(data)
        q = 1 - r * r
        return -0.5 * np.log(q) - squares / (2 * q) + r * cross / q - _LOG_2PI

    def pilot(self, data):
        cross, squares = self._products(data)
        r = 2 * cross.sum() / squares.sum()
        return np.array([float(np.clip(r, -0.95, 0.95))])


def exchangeable_pair_score(rho, data, pair):
    """Aggregate cubic score ``U_jk(rho)`` for one pair and its per-observation terms.

    Returns ``(total, per_observation)``.
    """
    if not -1.0 < rho < 1.0:
        raise ParameterDomainError(f"rho must lie in (-1, 1), got {rho}")
    l, m = pair
    if not 0 <= l < m < data.d:
        raise ParameterDomainError(f"pair {pair} is not (l, m) with l < m < d")
    cross, squares = _pair_products(data.observations, np.array([[l, m]]))
    per_obs = ((1 + rho * rho) * cross - rho * squares + rho * (1 - rho * rho))[:, 0]
    return float(per_obs.sum()), per_obs


def _phi(z):
    out = np.exp(-0.5 * np.where(np.isfinite(z), z, 0.0) ** 2) / np.sqrt(2 * np.pi)
    return np.where(np.isfinite(z), out, 0.0)


def _zphi(z):
    return np.where(np.isfinite(z), np.where(np.isfinite(z), z, 0.0) * _phi(z), 0.0)


def _interval_prob(a, b):
    # upper-tail intervals are differenced on the survival side to keep precision
    upper = a > 0
    p = np.where(upper, ndtr(-a) - ndtr(-b), ndtr(b) - ndtr(a))
    return p


class OrdinalProbitFamily(SubLikelihoodFamily):
    """One-wise latent-probit scores for the group effect ``theta`` (M = d, p = 1).

    Thresholds are held fixed at ``spec.gamma``. Each category ``y`` of SNP ``k``
    corresponds to the latent interval ``(a, b]``; with ``c = theta x`` the
    per-observation score is ``x (phi(a - c) - phi(b - c)) / P`` where ``P`` is the
    interval probability.
    """

    name = "ordinal"

    def __init__(self, spec):
        self.spec = spec
        self.d = spec.d
        self.n_components = spec.d
        self.components = tuple(range(spec.d))
        g = spec.gamma
        inf = np.full(self.d, np.inf)
        # bounds[c, k] = (lower, upper) of category c for SNP k
        self._lower = np.stack([-inf, g[:, 0], g[:, 1]])
        self._upper = np.stack([g[:, 0], g[:, 1], inf])

    def check_data(self, data):
        if data.d != self.d:
            raise ParameterDomainError(f"expected {self.d} columns, got {data.d}")
        if data.covariate is None:
            raise ParameterDomainError("ordinal model needs a group covariate")
        y = data.observations
        if not np.all((y == 0) | (y == 1) | (y == 2)):
            raise ParameterDomainError("ordinal entries must be 0, 1 or 2")

    def _bounds(self, theta, data):
        self.check_data(data)
        y = data.observations.astype(int)
        k = np.arange(self.d)[None, :]
        shift = float(theta[0]) * data.covariate[:, None]
        a = self._lower[y, k] - shift
        b = self._upper[y, k] - shift
        p = _interval_prob(a, b)
        if np.any(p < _MIN_PROB):
            raise NumericalDomainError("category probability underflow (< 1e-300)")
        return a, b, p, data.covariate[:, None]

    def scores(self, theta, data):
        a, b, p, x = self._bounds(theta, data)
        return (x * (_phi(a) - _phi(b)) / p)[:, :, None]

    def sensitivities(self, theta, data):
        a, b, p, x = self._bounds(theta, data)
        s = (_phi(a) - _phi(b)) / p
        second = x * x * ((_zphi(a) - _zphi(b)) / p - s * s)
        return -second[:, :, None, None]

    def loglik(self, theta, data):
        _, _, p, _ = self._bounds(np.atleast_1d(theta), data)
        return np.log(p)


def estimate_thresholds(data):
    """Plug-in thresholds from the category frequencies of the ``covariate == 0`` rows.

    With ``theta x = 0`` for those rows the latent variable is standard normal, so
    ``gamma_k1 = Phi^-1(P(Y=0))`` and ``gamma_k2 = Phi^-1(P(Y<=1))``. Frequencies are
    clipped to ``[1/(2 n0), 1 - 1/(2 n0)]`` so that empty categories stay finite.
    """
    if data.covariate is None:
        raise ParameterDomainError("threshold estimation needs the group covariate")
    y = data.observations[data.covariate == 0]
    n0 = y.shape[0]
    if n0 < 2:
        raise ParameterDomainError("threshold estimation needs at least 2 rows with covariate 0")
    lo, hi = 0.5 / n0, 1.0 - 0.5 / n0
    p0 = np.clip((y == 0).mean(axis=0), lo, hi)
    p1 = np.clip((y <= 1).mean(axis=0), lo, hi)
    p1 = np.maximum(p1, p0 + 0.5 / n0)
    return np.column_stack([ndtri(p0), ndtri(np.minimum(p1, hi + 0.25 / n0))])


def ordinal_probit_scores(theta, spec, data):
    """Score tensor of the one-wise ordinal-probit composite likelihood at ``theta``."""
    return OrdinalProbitFamily(spec).score_tensor(theta, data)


def make_family(model, d, spec=None):
    """Build the family for a model name (``common-location``, ``exchangeable``, ``ordinal``)."""
    if model == "common-location":
        return CommonLocationFamily(d)
    if model == "exchangeable":
        return ExchangeablePairFamily(d)
    if model == "ordinal":
        if spec is None:
            raise ParameterDomainError("ordinal model needs an OrdinalProbitSpec (thresholds)")
        return OrdinalProbitFamily(spec)
    raise ParameterDomainError(f"unknown model {model!r}")
