"""Markov melding: join submodels that share a scalar link quantity.

Each submodel keeps its own prior for the link ``phi``. The melded joint
replaces those prior marginals by one pooled marginal and takes the Markov
combination::

    log p_meld = log p_pool(phi) + sum_m [log p_m(phi, psi_m, y_m) - log p_m(phi)]

The link may be a deterministic (possibly non-invertible) function of the
parameters of at most one submodel, its *owner*; in every other submodel it
must be a basic node, whose value is then taken from the owner. Prior
marginals of functional links are estimated by kernel density estimation
over prior simulations.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import numpy as np
from scipy import integrate, stats
from scipy.special import logsumexp

from episynth.core.graph import BasicNode, ModelGraph
from episynth.core.priors import Transform
from episynth.core.streams import DataStream, as_stream_map
from episynth.errors import ConfigurationError, PoolingError
from episynth.logs import get_logger, kv

log = get_logger(__name__)

RULES = ("linear", "log", "dictatorial")


@dataclass
class Marginal:
    """A normalised density for the link quantity, evaluated on its natural scale.

    ``center`` and ``scale`` locate the bulk of the mass; they set the
    integration range used to normalise pooled densities.
    """

    logpdf: Callable[[Any], Any]
    support: tuple[float, float] = (-np.inf, np.inf)
    center: float = 0.0
    scale: float = 1.0
    label: str = ""

    def pdf(self, x):
        return np.exp(self.logpdf(x))


def gaussian_marginal(mean: float, sd: float, label: str = "") -> Marginal:
    dist = stats.norm(mean, sd)
    return Marginal(dist.logpdf, (-np.inf, np.inf), float(mean), float(sd), label)


def scipy_marginal(dist, label: str = "") -> Marginal:
    """Wrap a frozen continuous scipy distribution."""
    lo, hi = dist.support()
    return Marginal(dist.logpdf, (float(lo), float(hi)), float(dist.median()), float(dist.std()), label)


def kde_marginal(samples, log_embedding: bool = False, label: str = "",
                 grid_size: int = 2048) -> Marginal:
    """Gaussian-kernel density estimate with Silverman's bandwidth.

    With ``log_embedding`` the estimate is built for ``log(phi)`` (useful
    for large counts) and mapped back to ``phi`` with the Jacobian ``1/phi``.
    """
    x = np.asarray(samples, dtype=float).ravel()
    x = x[np.isfinite(x)]
    if log_embedding:
        if np.any(x <= 0):
            raise ConfigurationError("log embedding needs positive samples")
        u = np.log(x)
    else:
        u = x
    if len(u) < 2 or np.std(u) == 0:
        raise ConfigurationError("need at least two distinct samples for a density estimate")
    kde = stats.gaussian_kde(u, bw_method="silverman")
    # Exact evaluation costs O(samples) per point, too slow inside a sampler:
    # tabulate the log-density on a fine grid and interpolate, falling back
    # to the exact estimate outside the table.
    bw = float(np.sqrt(kde.covariance[0, 0]))
    lo, hi = u.min() - 4 * bw, u.max() + 4 * bw
    grid = np.linspace(lo, hi, grid_size)
    table = kde.logpdf(grid)

    def log_kde(v):
        v = np.asarray(v, dtype=float)
        out = np.interp(v, grid, table)
        outside = (v < lo) | (v > hi)
        if np.any(outside):
            out[outside] = kde.logpdf(v[outside])
        return out

    def logpdf(phi):
        phi = np.asarray(phi, dtype=float)
        flat = phi.ravel()
        if log_embedding:
            with np.errstate(divide="ignore", invalid="ignore"):
                out = np.full(flat.shape, -np.inf)
                pos = flat > 0
                out[pos] = log_kde(np.log(flat[pos])) - np.log(flat[pos])
        else:
            out = log_kde(flat)
        return out.reshape(phi.shape) if phi.ndim else float(out[0])

    if log_embedding:
        return Marginal(logpdf, (0.0, np.inf), float(np.median(x)), float(np.std(x)), label)
    return Marginal(logpdf, (-np.inf, np.inf), float(np.median(x)), float(np.std(x)), label)


# --- pooling --------------------------------------------------------------------------------------

@dataclass
class PooledPrior:
    marginals: list[Marginal]
    rule: str
    weights: np.ndarray
    log_Z: float = 0.0

    def logpdf(self, phi):
        phi = np.asarray(phi, dtype=float)
        with np.errstate(divide="ignore"):
            logs = np.stack([np.asarray(m.logpdf(phi), dtype=float) for m in self.marginals])
            logw = np.log(self.weights).reshape((-1,) + (1,) * phi.ndim)
        if self.rule == "linear":
            out = logsumexp(logs + logw, axis=0)
        elif self.rule == "log":
            w = self.weights.reshape((-1,) + (1,) * phi.ndim)
            terms = np.where(w > 0, w * logs, 0.0)
            out = np.sum(terms, axis=0) - self.log_Z
        else:
            out = logs[int(np.argmax(self.weights))]
        return float(out) if np.ndim(out) == 0 else out

    def pdf(self, phi):
        return np.exp(self.logpdf(phi))

    @property
    def support(self) -> tuple[float, float]:
        return _support(self.marginals, self.rule, self.weights)

    def integration_range(self) -> tuple[float, float]:
        return _range(self.marginals, self.rule, self.weights)


def _support(marginals, rule, weights):
    active = [m for m, w in zip(marginals, weights) if w > 0]
    lo = [m.support[0] for m in active]
    hi = [m.support[1] for m in active]
    if rule == "log":
        return max(lo), min(hi)
    return min(lo), max(hi)


def _range(marginals, rule, weights, width: float = 15.0):
    active = [m for m, w in zip(marginals, weights) if w > 0]
    lo = min(m.center - width * m.scale for m in active)
    hi = max(m.center + width * m.scale for m in active)
    s_lo, s_hi = _support(marginals, rule, weights)
    return max(lo, s_lo), min(hi, s_hi)


def pool_marginals(marginals: Sequence[Marginal], rule: str = "log", weights=None,
                   choose: int | None = None) -> PooledPrior:
    """Combine prior marginals of the link into one normalised density.

    ``linear``: ``sum w_m p_m``; ``log``: ``prod p_m^{w_m} / Z`` (``Z`` by
    adaptive quadrature); ``dictatorial``: the marginal picked by ``choose``
    (or the largest weight). Weights default to equal.
    """
    marginals = list(marginals)
    M = len(marginals)
    if M == 0:
        raise ConfigurationError("nothing to pool")
    if rule not in RULES:
        raise ConfigurationError(f"unknown pooling rule {rule!r}; use one of {RULES}")
    if rule == "dictatorial" and choose is not None:
        w = np.zeros(M)
        w[choose] = 1.0
    else:
        w = np.full(M, 1.0 / M) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != (M,) or np.any(w < 0) or abs(w.sum() - 1) > 1e-12:
        raise ConfigurationError("pooling weights must be nonnegative, one per marginal, summing to 1")
    pooled = PooledPrior(marginals, rule, w)
    if rule == "log":
        lo, hi = pooled.support
        if not lo < hi:
            raise PoolingError("marginal supports do not overlap; logarithmic pool is empty")
        a, b = pooled.integration_range()
        if not a < b:
            raise PoolingError("marginal supports do not overlap; logarithmic pool is empty")
        # centre the integrand on its largest value to avoid underflow
        grid = np.linspace(a, b, 2001)
        unnorm = np.sum([wi * np.asarray(m.logpdf(grid), dtype=float)
                         for m, wi in zip(marginals, w) if wi > 0], axis=0)
        shift = float(np.max(unnorm[np.isfinite(unnorm)])) if np.any(np.isfinite(unnorm)) else -np.inf
        if not np.isfinite(shift):
            raise PoolingError("logarithmic pool has no mass: marginal densities never overlap")

        def f(x):
            v = sum(wi * float(m.logpdf(x)) for m, wi in zip(marginals, w) if wi > 0)
            return np.exp(v - shift)

        peaks = sorted({float(np.clip(m.center, a, b)) for m in marginals} | {float(grid[np.argmax(unnorm)])})
        with warnings.catch_warnings():
            # the tight tolerance is best effort; piecewise-linear (tabulated) densities cap it
            warnings.simplefilter("ignore", integrate.IntegrationWarning)
            Z, _ = integrate.quad(f, a, b, points=peaks, limit=500, epsabs=0.0, epsrel=1e-13)
        if not Z > 0:
            raise PoolingError("logarithmic pool has no mass: marginal densities never overlap")
        pooled.log_Z = float(np.log(Z) + shift)
    log.info(kv("pool", rule=rule, weights=w.tolist(), log_Z=pooled.log_Z))
    return pooled


# --- submodels and the melded target ---------------------------------------------------------------

@dataclass
class Submodel:
    """One model graph, its data, and the node that carries the shared link.

    ``marginal`` overrides the prior marginal of the link; otherwise it is
    the node's own prior (basic link) or a KDE from ``n_prior`` prior draws
    (functional link).
    """

    graph: ModelGraph
    data: Mapping[str, DataStream] | None = None
    link: str = "phi"
    marginal: Marginal | None = None
    label: str = ""
    n_prior: int = 100_000
    log_embedding: bool = False

    def __post_init__(self):
        if self.link not in self.graph:
            raise ConfigurationError(f"link node {self.link!r} not in submodel {self.label!r}")
        self.data = as_stream_map(self.data)

    @property
    def link_is_basic(self) -> bool:
        return isinstance(self.graph[self.link], BasicNode)

    def prior_link_draws(self, rng: np.random.Generator, n: int | None = None) -> np.ndarray:
        theta = self.graph.sample_prior(rng, n or self.n_prior)
        vals = theta[self.link] if self.link_is_basic else self.graph.evaluate(theta, [self.link])[self.link]
        return np.asarray(vals, dtype=float).reshape(-1)

    def prior_marginal(self, rng: np.random.Generator) -> Marginal:
        if self.marginal is not None:
            return self.marginal
        node = self.graph[self.link]
        if isinstance(node, BasicNode) and node.size is None and not node.prior.center:
            draws = self.prior_link_draws(rng, 20_000)
            prior = node.prior
            m = Marginal(lambda x: prior.logpdf(np.asarray(x, dtype=float)),
                         _prior_support(self.graph, self.link), float(np.median(draws)),
                         float(np.std(draws)), self.label)
        else:
            m = kde_marginal(self.prior_link_draws(rng), self.log_embedding, self.label)
        self.marginal = m
        return m


def _prior_support(graph: ModelGraph, name: str):
    i = graph.flat_names.index(name)
    t = graph.transforms[i]
    if t.kind == "log":
        return (0.0, np.inf)
    if t.kind == "interval":
        return (t.lower, t.upper)
    return (-np.inf, np.inf)


class MeldedModel:
    """Markov-melded joint over the link and every submodel's own parameters.

    ``pooled`` defaults to equal-weight logarithmic pooling of the prior
    marginals. Parameter names are ``<link>`` (when no submodel owns it)
    followed by ``m<i>.<name>`` for each submodel's remaining parameters.
    """

    def __init__(self, submodels: Sequence[Submodel], pooled: PooledPrior | None = None,
                 rule: str = "log", weights=None, seed: int = 0):
        self.submodels = list(submodels)
        if not self.submodels:
            raise ConfigurationError("melding needs at least one submodel")
        link = self.submodels[0].link
        for s in self.submodels:
            if s.link_is_basic and s.graph[s.link].size is not None:
                raise ConfigurationError("only scalar link quantities are supported")
            if s.link != link:
                raise ConfigurationError("submodels name the link differently")
        owners = [i for i, s in enumerate(self.submodels) if not s.link_is_basic]
        if len(owners) > 1:
            raise ConfigurationError("the link may be functional in at most one submodel")
        self.owner = owners[0] if owners else None
        self.link_name = link
        rng = np.random.default_rng(seed)
        self.marginals = [s.prior_marginal(rng) for s in self.submodels]
        self.pooled = pooled or pool_marginals(self.marginals, rule, weights)
        self._build_layout()

    def _build_layout(self):
        names: list[str] = []
        transforms: list[Transform] = []
        self._maps = []  # per submodel: (positions in own flat vector, positions in melded vector)
        self._link_slot = None
        if self.owner is None:
            s0 = self.submodels[0]
            i = s0.graph.flat_names.index(s0.link)
            names.append(self.link_name)
            transforms.append(s0.graph.transforms[i])
            self._link_slot = 0
            for s in self.submodels[1:]:
                t = s.graph.transforms[s.graph.flat_names.index(s.link)]
                if t != transforms[0]:
                    raise ConfigurationError("link node has different supports across submodels")
        for m, s in enumerate(self.submodels):
            own, mel = [], []
            for j, fname in enumerate(s.graph.flat_names):
                if s.link_is_basic and fname == s.link:
                    continue
                own.append(j)
                mel.append(len(names))
                names.append(f"m{m}.{fname}")
                transforms.append(s.graph.transforms[j])
            link_pos = s.graph.flat_names.index(s.link) if s.link_is_basic else None
            self._maps.append((np.array(own, dtype=int), np.array(mel, dtype=int), link_pos))
        self.names = names
        self.transforms = transforms
        groups: dict[Transform, list[int]] = {}
        for i, t in enumerate(transforms):
            groups.setdefault(t, []).append(i)
        self._groups = {t: np.array(ix) for t, ix in groups.items()}

    @property
    def dim(self) -> int:
        return len(self.names)

    def posterior(self, data=None) -> "MeldedModel":
        if data:
            raise ConfigurationError("melded models carry their data in the submodels")
        return self

    # target interface used by the samplers -----------------------------------------------------

    def constrain(self, z):
        z = np.asarray(z, dtype=float)
        x = np.empty_like(z)
        ljac = np.zeros(z.shape[:-1])
        for t, ix in self._groups.items():
            xi, lj = t.inverse(z[..., ix])
            x[..., ix] = xi
            ljac = ljac + np.sum(lj, axis=-1)
        return x, ljac

    def unconstrain(self, x):
        x = np.asarray(x, dtype=float)
        z = np.empty_like(x)
        for t, ix in self._groups.items():
            z[..., ix] = t.forward(x[..., ix])
        return z

    def _thetas(self, x):
        """Per-submodel parameter dicts and the link value for natural-scale ``x``."""
        batch = x.shape[:-1]
        thetas: list[dict[str, Any] | None] = [None] * len(self.submodels)
        phi = x[..., self._link_slot] if self._link_slot is not None else None
        order = list(range(len(self.submodels)))
        if self.owner is not None:
            order.remove(self.owner)
            order.insert(0, self.owner)
        for m in order:
            s = self.submodels[m]
            own, mel, link_pos = self._maps[m]
            xm = np.empty(batch + (len(s.graph.flat_names),))
            xm[..., own] = x[..., mel]
            if link_pos is not None:
                xm[..., link_pos] = phi
            theta = s.graph.unflatten(xm)
            if m == self.owner:
                phi = np.asarray(s.graph.evaluate(theta, [s.link])[s.link], dtype=float)
            thetas[m] = theta
        return thetas, phi

    def log_density(self, x, return_terms: bool = False):
        """Melded log density on the natural scale (no change-of-variables term)."""
        x = np.asarray(x, dtype=float)
        thetas, phi = self._thetas(x)
        total = np.asarray(self.pooled.logpdf(phi), dtype=float)
        lls: dict[str, Any] = {}
        for m, (s, theta) in enumerate(zip(self.submodels, thetas)):
            with np.errstate(divide="ignore", invalid="ignore"):
                lp = s.graph.log_prior(theta)
                node_ll = s.graph.node_logliks(theta, s.data) if s.data else {}
                lm = np.asarray(self.marginals[m].logpdf(phi), dtype=float)
            for k, v in node_ll.items():
                lls[f"m{m}.{k}"] = v
            ll = sum(node_ll.values()) if node_ll else 0.0
            # p_m(phi) = 0 makes the ratio undefined; the point is excluded
            total = total + np.where(np.isfinite(lm), lp + ll - lm, -np.inf)
        total = np.where(np.isnan(total), -np.inf, total)
        out = float(total) if total.ndim == 0 else total
        return (out, lls) if return_terms else out

    def logp(self, z):
        x, ljac = self.constrain(z)
        lp, lls = self.log_density(x, return_terms=True)
        return lp + ljac, lls

    def initial_points(self, rng: np.random.Generator, n: int | None = None):
        size = 1 if n is None else n
        x = np.empty((size, self.dim))
        phi = None
        if self.owner is None:
            phi = self.submodels[0].graph.sample_prior(rng, size)[self.submodels[0].link].reshape(size)
            x[:, self._link_slot] = phi
        for m, s in enumerate(self.submodels):
            own, mel, _ = self._maps[m]
            flat = s.graph.flatten(s.graph.sample_prior(rng, size))
            x[:, mel] = flat[:, own]
        z = self.unconstrain(x)
        return z[0] if n is None else z

    def link_values(self, x) -> np.ndarray:
        """The link quantity for natural-scale parameter rows ``x``."""
        return np.asarray(self._thetas(np.asarray(x, dtype=float))[1], dtype=float)


def meld_density(submodels: Sequence[Submodel], pooled: PooledPrior, point: Mapping[str, Any]) -> float:
    """Melded log density at a point given as ``{link: value, "m<i>.<name>": value, ...}``."""
    model = MeldedModel(submodels, pooled)
    x = np.array([float(point[n]) for n in model.names])
    return model.log_density(x)


def meld_posterior(model: MeldedModel, config=None):
    """Adaptive MCMC over the melded density; returns a ``PosteriorSample``."""
    from episynth.mcmc import run_chain

    sample = run_chain(model, None, config)
    sample.meta["link"] = model.link_values(sample.draws)
    return sample


def summarize(sample, link_values=None) -> list[dict[str, Any]]:
    """Median and 95% interval per parameter (plus the link if it is derived)."""
    rows = []
    cols = [(n, sample.draws[:, i]) for i, n in enumerate(sample.names)]
    if link_values is not None:
        cols.append(("link", np.asarray(link_values)))
    for name, x in cols:
        q = np.quantile(x, [0.5, 0.025, 0.975])
        rows.append({"parameter": name, "median": float(q[0]), "q2.5": float(q[1]), "q97.5": float(q[2])})
    return rows


def write_summary_csv(rows: Sequence[Mapping[str, Any]], path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["parameter", "median", "q2.5", "q97.5"])
        for r in rows:
            w.writerow([r["parameter"]] + [f"{r[c]:.6g}" for c in ("median", "q2.5", "q97.5")])
    return path


def write_pooled_density_csv(marginals: Sequence[Marginal], path: str | Path, weights=None,
                             n_grid: int = 200, grid=None) -> Path:
    """Each marginal and its linear, log and dictatorial pools on a common grid."""
    path = Path(path)
    pools = {r: pool_marginals(marginals, r, weights) for r in RULES}
    if grid is None:
        a, b = pools["linear"].integration_range()
        lo = min(m.center - 4 * m.scale for m in marginals)
        hi = max(m.center + 4 * m.scale for m in marginals)
        grid = np.linspace(max(a, lo), min(b, hi), n_grid)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        labels = [m.label or f"model{i}" for i, m in enumerate(marginals)]
        w.writerow(["phi", *labels, *[f"pool_{r}" for r in RULES]])
        for g in grid:
            vals = [m.pdf(g) for m in marginals] + [pools[r].pdf(g) for r in RULES]
            w.writerow([f"{g:.6g}", *[f"{float(v):.6g}" for v in vals]])
    return path
