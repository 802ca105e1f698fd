"""First-stage joint regression of GP consultations and virological positivity.

Consultations in age group ``a`` on day ``t`` are the sum of an influenza
component ``N_G = exp(X beta_G)`` and a background component
``N_B = exp(X beta_B)``; the positivity of swabs is ``N_G / (N_G + N_B)``.
Both linear predictors share one design: age main effects plus a
per-age polynomial in time. Background coefficients enter both likelihoods.

The posterior is approximated by a Laplace (Gaussian) fit at the mode, with
weak Gaussian priors on all coefficients. Dividing the influenza
consultations by the probability of consulting given symptoms yields
log-scale estimates of the number symptomatic per age group, the point
estimates consumed downstream by the severity model.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Any

import numpy as np
from numpy.polynomial import legendre
from scipy import optimize
from scipy.special import expit, gammaln

from episynth.core.streams import DataStream, StreamKind
from episynth.errors import ConfigurationError
from episynth.logs import get_logger, kv

log = get_logger(__name__)


@dataclass(frozen=True)
class JointRegressionSpec:
    """Design and observation settings.

    ``degree`` is the per-age polynomial degree in time (Legendre basis on
    the rescaled study period), ``eta`` the negative-binomial size for the
    consultations (``None`` for Poisson), ``prior_sd`` the sd of the
    Gaussian prior on every coefficient.
    """

    degree: int = 3
    eta: float | None = None
    prior_sd: float = 10.0

    def __post_init__(self):
        if self.degree < 0:
            raise ConfigurationError("polynomial degree must be nonnegative")
        if self.eta is not None and not self.eta > 0:
            raise ConfigurationError("negative-binomial size must be positive")
        if not self.prior_sd > 0:
            raise ConfigurationError("prior_sd must be positive")

    def design(self, days: int, A: int) -> np.ndarray:
        """Rows ordered day-major (``t * A + a``); columns: age intercepts then age-by-time terms."""
        if days < self.degree + 1:
            raise ConfigurationError(f"{days} days cannot support a degree-{self.degree} time basis")
        u = np.linspace(-1.0, 1.0, days) if days > 1 else np.zeros(1)
        basis = legendre.legvander(u, self.degree)[:, 1:]  # (days, degree)
        X = np.zeros((days, A, A * (1 + self.degree)))
        for a in range(A):
            X[:, a, a] = 1.0
            X[:, a, A + a * self.degree:A + (a + 1) * self.degree] = basis
        X = X.reshape(days * A, -1)
        if np.linalg.matrix_rank(X) < X.shape[1]:
            raise ConfigurationError("design matrix is rank deficient")
        return X


def _grid(stream: DataStream, days: int, A: int, t0: int, field: str = "value") -> tuple[np.ndarray, np.ndarray]:
    vals = np.zeros((days, A))
    seen = np.zeros((days, A), dtype=bool)
    src = stream.value if field == "value" else stream.denominator
    t = np.asarray(stream.time_index, dtype=int) - t0
    a = np.asarray(stream.age_index, dtype=int)
    ok = (t >= 0) & (t < days)
    vals[t[ok], a[ok]] = src[ok]
    seen[t[ok], a[ok]] = True
    return vals, seen


@dataclass
class _Problem:
    X: np.ndarray
    y: np.ndarray       # consultations, flattened
    has_y: np.ndarray
    k: np.ndarray       # positive swabs
    n: np.ndarray       # swabs tested
    eta: float | None
    prior_sd: float

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def split(self, beta):
        beta = np.asarray(beta, dtype=float)
        return self.X @ beta[:self.p], self.X @ beta[self.p:]

    def logpost(self, beta) -> float:
        eb, eg = self.split(beta)
        return float(consultation_loglik(eb, eg, self.y, self.eta, self.has_y)
                     + positivity_loglik(eb, eg, self.k, self.n)
                     - 0.5 * np.sum(np.asarray(beta) ** 2) / self.prior_sd**2)

    def grad_hess(self, beta):
        eb, eg = self.split(beta)
        b, g = np.exp(eb), np.exp(eg)
        mu = b + g
        y = self.y
        if self.eta is None:
            u = y / mu - 1.0
            v = -y / mu**2
        else:
            k = self.eta
            u = y / mu - (y + k) / (mu + k)
            v = -y / mu**2 + (y + k) / (mu + k) ** 2
        u = np.where(self.has_y, u, 0.0)
        v = np.where(self.has_y, v, 0.0)
        gB, gG = u * b, u * g
        hBB, hGG, hBG = u * b + v * b * b, u * g + v * g * g, v * b * g
        r = expit(eg - eb)
        d = self.k - self.n * r
        w = self.n * r * (1 - r)
        gB, gG = gB - d, gG + d
        hBB, hGG, hBG = hBB - w, hGG - w, hBG + w
        X = self.X
        grad = np.r_[X.T @ gB, X.T @ gG] - np.asarray(beta) / self.prior_sd**2
        H = np.block([[X.T @ (hBB[:, None] * X), X.T @ (hBG[:, None] * X)],
                      [X.T @ (hBG[:, None] * X), X.T @ (hGG[:, None] * X)]])
        H -= np.eye(2 * self.p) / self.prior_sd**2
        return grad, H


def consultation_loglik(eta_B, eta_G, y, size: float | None = None, mask=None) -> float:
    """Poisson (or negative-binomial) log-likelihood of total consultations ``exp(eta_B) + exp(eta_G)``."""
    mu = np.exp(eta_B) + np.exp(eta_G)
    y = np.asarray(y, dtype=float)
    if size is None:
        terms = y * np.log(mu) - mu - gammaln(y + 1)
    else:
        terms = (gammaln(y + size) - gammaln(size) - gammaln(y + 1)
                 + size * np.log(size / (size + mu)) + y * np.log(mu / (size + mu)))
    if mask is not None:
        terms = np.where(mask, terms, 0.0)
    return float(np.sum(terms))


def positivity_loglik(eta_B, eta_G, k, n) -> float:
    """Binomial log-likelihood (kernel) of positive swabs; depends on ``eta_G - eta_B`` only."""
    delta = np.asarray(eta_G, dtype=float) - np.asarray(eta_B, dtype=float)
    k = np.asarray(k, dtype=float)
    n = np.asarray(n, dtype=float)
    return float(np.sum(k * delta - n * np.logaddexp(0.0, delta)))


@dataclass
class RegressionResult:
    spec: JointRegressionSpec
    days: int
    A: int
    t0: int
    beta_B: np.ndarray
    beta_G: np.ndarray
    cov: np.ndarray
    N_B: np.ndarray            # (days, A) posterior-mode background consultations
    N_G: np.ndarray            # (days, A) posterior-mode influenza consultations
    y_hat: np.ndarray          # (A,) posterior mean of log symptomatic total
    sigma_hat: np.ndarray      # (A,) posterior sd of log symptomatic total
    N_S_draws: np.ndarray      # (draws, A)
    converged: bool = True

    @property
    def beta(self) -> np.ndarray:
        return np.r_[self.beta_B, self.beta_G]

    def sd(self) -> np.ndarray:
        return np.sqrt(np.diag(self.cov))

    def interval(self, level: float = 0.95) -> tuple[np.ndarray, np.ndarray]:
        from scipy.stats import norm
        z = norm.ppf(0.5 + level / 2)
        return self.beta - z * self.sd(), self.beta + z * self.sd()

    def to_stream(self, name: str = "y_S") -> DataStream:
        """Per-age log-scale estimates as a point-estimate stream (value = mean, denominator = sd)."""
        return DataStream(name, StreamKind.PointEstimateLogScale, np.zeros(self.A, dtype=int),
                          np.arange(self.A), self.y_hat, self.sigma_hat)

    def summary_rows(self, labels=None) -> list[dict[str, Any]]:
        labels = labels or [str(a) for a in range(self.A)]
        return [{"age": labels[a], "y_hat": float(self.y_hat[a]), "sigma_hat": float(self.sigma_hat[a]),
                 "N_S_median": float(np.median(self.N_S_draws[:, a]))} for a in range(self.A)]


def _consult_probability(p_G, days: int, rng: np.random.Generator, n_draws: int) -> np.ndarray:
    """Draws (n_draws, days) of the consultation probability.

    ``p_G`` is a number or per-day array (fixed), or a ``(a, b)`` tuple of Beta
    hyperparameters (one draw per posterior draw, common to all days).
    """
    if isinstance(p_G, tuple) and len(p_G) == 2:
        a, b = map(float, p_G)
        if min(a, b) <= 0:
            raise ConfigurationError("Beta hyperparameters must be positive")
        return np.repeat(rng.beta(a, b, n_draws)[:, None], days, axis=1)
    p = np.broadcast_to(np.asarray(p_G, dtype=float), (days,))
    if np.any(p <= 0) or np.any(p > 1):
        raise ConfigurationError("consultation probability must lie in (0, 1]")
    return np.broadcast_to(p, (n_draws, days))


def fit_joint_regression(spec: JointRegressionSpec, consultations: DataStream, positivity: DataStream,
                         p_G=1.0, n_draws: int = 4000, seed: int = 0) -> RegressionResult:
    """Joint Laplace fit; returns per-age ``(y_hat, sigma_hat)`` for the log number symptomatic."""
    if positivity.denominator is None or np.any(positivity.denominator <= 0):
        raise ConfigurationError("positivity denominators must be positive")
    t_c = np.asarray(consultations.time_index, dtype=int)
    t_p = np.asarray(positivity.time_index, dtype=int)
    if t_c.max() < t_p.min() or t_p.max() < t_c.min():
        raise ConfigurationError("consultation and positivity streams do not overlap in time")
    t0 = int(min(t_c.min(), t_p.min()))
    days = int(max(t_c.max(), t_p.max())) - t0 + 1
    A = int(max(np.max(consultations.age_index), np.max(positivity.age_index))) + 1
    X = spec.design(days, A)
    y, has_y = _grid(consultations, days, A, t0)
    k, _ = _grid(positivity, days, A, t0)
    n, _ = _grid(positivity, days, A, t0, field="denominator")
    if k.sum() == 0 and y.sum() > 0:
        warnings.warn("no positive swabs while consultations are positive: the fit is background-only "
                      "and the influenza component is determined by the prior", RuntimeWarning, stacklevel=2)
    prob = _Problem(X, y.ravel(), has_y.ravel(), k.ravel(), n.ravel(), spec.eta, spec.prior_sd)

    # start from the observed split of consultations by positivity
    with np.errstate(divide="ignore", invalid="ignore"):
        frac = np.clip(k.sum(axis=0) / np.maximum(n.sum(axis=0), 1), 0.01, 0.99)
        level = np.log(np.maximum(y.sum(axis=0) / max(days, 1), 1.0))
    p = X.shape[1]
    beta0 = np.zeros(2 * p)
    beta0[:A] = level + np.log1p(-frac)
    beta0[p:p + A] = level + np.log(frac)

    res = optimize.minimize(lambda b: -prob.logpost(b), beta0, method="trust-exact",
                            jac=lambda b: -prob.grad_hess(b)[0], hess=lambda b: -prob.grad_hess(b)[1],
                            options={"gtol": 1e-8, "maxiter": 500})
    beta = res.x
    _, H = prob.grad_hess(beta)
    cov = np.linalg.inv(-H)
    cov = 0.5 * (cov + cov.T)
    eb, eg = prob.split(beta)
    N_B, N_G = np.exp(eb).reshape(days, A), np.exp(eg).reshape(days, A)

    rng = np.random.default_rng(seed)
    draws = rng.multivariate_normal(beta, cov, size=n_draws, method="cholesky")
    g_draws = np.exp(draws[:, p:] @ X.T).reshape(n_draws, days, A)
    pg = _consult_probability(p_G, days, rng, n_draws)
    N_S = np.sum(g_draws / pg[:, :, None], axis=1)
    logN = np.log(N_S)
    out = RegressionResult(spec, days, A, t0, beta[:p], beta[p:], cov, N_B, N_G,
                           logN.mean(axis=0), logN.std(axis=0, ddof=1), N_S, bool(res.success))
    log.info(kv("regression", days=days, ages=A, converged=bool(res.success), iterations=int(res.nit),
                y_hat=np.round(out.y_hat, 4).tolist()))
    return out


def simulate_joint(spec: JointRegressionSpec, beta_B, beta_G, days: int, A: int, swabs: float = 100,
                   seed: int = 0) -> tuple[DataStream, DataStream]:
    """Consultation and positivity streams drawn from the regression model itself."""
    rng = np.random.default_rng(seed)
    X = spec.design(days, A)
    b = np.exp(X @ np.asarray(beta_B, dtype=float))
    g = np.exp(X @ np.asarray(beta_G, dtype=float))
    mu = b + g
    if spec.eta is None:
        y = rng.poisson(mu)
    else:
        y = rng.negative_binomial(spec.eta, spec.eta / (spec.eta + mu))
    n = np.full(days * A, float(swabs))
    k = rng.binomial(n.astype(int), g / mu)
    t = np.repeat(np.arange(days), A)
    a = np.tile(np.arange(A), days)
    return (DataStream("gp", StreamKind.GPConsultations, t, a, y.astype(float)),
            DataStream("positivity", StreamKind.ViroPositivity, t, a, k.astype(float), n))
