"""Sequential Monte Carlo updating of a model-graph posterior as data batches arrive.

Each batch reweights the particle ensemble by its likelihood. When the
effective sample size falls below a threshold the ensemble is resampled
(systematic) and rejuvenated with Metropolis moves that leave the current
target invariant. A batch can be brought in gradually through a ladder of
likelihood exponents (tempering), which keeps the ensemble from collapsing
when the new data are much more informative than the old.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
from scipy.special import logsumexp

from episynth.core.graph import GraphPosterior, ModelGraph
from episynth.core.streams import DataStream
from episynth.errors import ConfigurationError, DegenerateEnsembleError, EvaluationError
from episynth.logs import get_logger, kv

log = get_logger(__name__)


@dataclass(frozen=True)
class SMCConfig:
    n_particles: int = 1000
    seed: int = 0
    ess_threshold: float = 0.5
    jitter_moves: int = 5
    jitter_scale: float | None = None
    temper_steps: int = 1
    adaptive: bool = False
    adaptive_target: float = 0.5
    max_substeps: int = 200
    final_moves: int = 0

    def __post_init__(self):
        if self.n_particles < 2:
            raise ConfigurationError("need at least two particles")
        if not 0 < self.ess_threshold <= 1:
            raise ConfigurationError("ess_threshold must lie in (0, 1]")
        if self.temper_steps < 1 or self.jitter_moves < 0:
            raise ConfigurationError("temper_steps >= 1 and jitter_moves >= 0 required")
        if not 0 < self.adaptive_target < 1:
            raise ConfigurationError("adaptive_target must lie in (0, 1)")


@dataclass
class ParticleEnsemble:
    """Weighted particles on the sampling scale with cached log-likelihoods.

    ``loglik`` is the log-likelihood of all data assimilated so far and
    ``k`` the number of batches assimilated.
    """

    z: np.ndarray
    log_w: np.ndarray
    loglik: np.ndarray
    k: int = 0
    history: list[dict[str, Any]] = field(default_factory=list)

    def __post_init__(self):
        if len(self.z) < 2:
            raise ConfigurationError("an ensemble needs at least two particles")
        self.log_w = _normalize(self.log_w)

    @property
    def n(self) -> int:
        return len(self.z)

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_w)

    @property
    def ess(self) -> float:
        return ess(self.weights)

    def mean(self, x: np.ndarray | None = None) -> np.ndarray:
        x = self.z if x is None else x
        return np.tensordot(self.weights, x, axes=(0, 0))


def ess(weights) -> float:
    """``1 / sum(w^2)`` for normalised weights."""
    w = np.asarray(weights, dtype=float)
    w = w / w.sum()
    return float(1.0 / np.sum(w * w))


def _normalize(log_w):
    log_w = np.asarray(log_w, dtype=float)
    total = logsumexp(log_w)
    if not np.isfinite(total):
        raise DegenerateEnsembleError(
            "all particle weights underflowed to zero; introduce the batch through tempering")
    return log_w - total


def systematic_resample(weights, rng: np.random.Generator) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    n = len(w)
    positions = (rng.uniform() + np.arange(n)) / n
    cum = np.cumsum(w / w.sum())
    cum[-1] = 1.0
    return np.searchsorted(cum, positions, side="right").clip(max=n - 1)


# --- data handling -------------------------------------------------------------------------------

def merge_streams(*parts: Mapping[str, DataStream]) -> dict[str, DataStream]:
    """Concatenate same-named streams (rows in order of appearance)."""
    out: dict[str, DataStream] = {}
    for part in parts:
        for name, s in part.items():
            if name in out:
                o = out[name]
                if o.kind != s.kind:
                    raise ConfigurationError(f"stream {name!r} changes kind between batches")
                out[name] = DataStream(name, s.kind, np.r_[o.time_index, s.time_index],
                                       np.r_[o.age_index, s.age_index], np.r_[o.value, s.value],
                                       np.r_[o.denominator, s.denominator])
            else:
                out[name] = s
    return out


def split_batches(data: Mapping[str, DataStream], edges: Sequence[int]) -> list[dict[str, DataStream]]:
    """Cut streams into consecutive time windows ``[edges[i], edges[i+1])``."""
    batches = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        part = {}
        for name, s in data.items():
            w = s.window(lo, hi)
            if len(w):
                part[name] = w
        batches.append(part)
    return batches


class _Target:
    """Tempered posterior pieces evaluated in batch over particles."""

    def __init__(self, graph: ModelGraph):
        self.graph = graph
        self.post = GraphPosterior(graph, {}, require_all=False)

    def split_loglik(self, z, old: Mapping[str, DataStream], new: Mapping[str, DataStream]):
        x, _ = self.post.constrain(z)
        theta = self.graph.unflatten(x)
        cache: dict[str, Any] = {}
        n = len(z)

        def total(data):
            if not data:
                return np.zeros(n)
            try:
                lls = self.graph.node_logliks(theta, data, cache=cache)
            except EvaluationError:
                # a single bad particle must not sink the whole batch
                return np.array([self.split_loglik(z[i:i + 1], {}, data)[1][0]
                                 if self._finite(z[i:i + 1], data) else -np.inf for i in range(n)])
            out = np.zeros(n)
            for v in lls.values():
                out = out + v
            return np.where(np.isnan(out), -np.inf, out)

        return total(old), total(new)

    def _finite(self, z1, data):
        try:
            x, _ = self.post.constrain(z1)
            self.graph.node_logliks(self.graph.unflatten(x), data)
            return True
        except EvaluationError:
            return False

    def log_prior(self, z):
        return np.asarray(self.post.log_prior(z), dtype=float) * np.ones(len(z))


def init_ensemble(graph: ModelGraph, n: int, rng: np.random.Generator) -> ParticleEnsemble:
    post = GraphPosterior(graph, {}, require_all=False)
    z = np.asarray(post.initial_points(rng, n), dtype=float)
    return ParticleEnsemble(z, np.zeros(n), np.zeros(n))


# --- core operations ----------------------------------------------------------------------------------

def reweight(ensemble: ParticleEnsemble, increment) -> ParticleEnsemble:
    """Multiply weights by ``exp(increment)`` (a per-particle log-likelihood) and renormalise."""
    inc = np.asarray(increment, dtype=float)
    inc = np.where(np.isnan(inc), -np.inf, inc)
    out = replace(ensemble, log_w=_normalize(ensemble.log_w + inc), loglik=ensemble.loglik + inc,
                  history=list(ensemble.history))
    return out


def reweight_batch(ensemble: ParticleEnsemble, graph: ModelGraph, batch: Mapping[str, DataStream],
                   gamma: float = 1.0) -> ParticleEnsemble:
    _, new = _Target(graph).split_loglik(ensemble.z, {}, batch)
    out = reweight(ensemble, gamma * new)
    log.info(kv("reweight", k=ensemble.k, gamma=gamma, ess=out.ess, n=out.n))
    return out


def _weighted_cov(z, w):
    mu = w @ z
    c = z - mu
    cov = (w[:, None] * c).T @ c
    return cov / max(1.0 - np.sum(w * w), 1e-12)


def resample_and_jitter(ensemble: ParticleEnsemble, graph: ModelGraph, old: Mapping[str, DataStream],
                        new: Mapping[str, DataStream], gamma: float, rng: np.random.Generator,
                        config: SMCConfig, force: bool = False, moves: int | None = None) -> ParticleEnsemble:
    """Resample when ``ESS < threshold * n`` (or ``force``) and apply MH jitter moves.

    The moves target ``prior * L(old) * L(new)**gamma``. Returns the input
    unchanged when no resampling is triggered.
    """
    n = ensemble.n
    if not force and ensemble.ess >= config.ess_threshold * n:
        return ensemble
    target = _Target(graph)
    w = ensemble.weights
    d = ensemble.z.shape[1]
    cov = _weighted_cov(ensemble.z, w)
    idx = systematic_resample(w, rng)
    z = ensemble.z[idx].copy()
    scale = config.jitter_scale if config.jitter_scale is not None else 2.38 / np.sqrt(d)
    try:
        chol = np.linalg.cholesky(cov + 1e-10 * np.eye(d))
    except np.linalg.LinAlgError:
        chol = np.diag(np.sqrt(np.clip(np.diag(cov), 1e-12, None)))
    lp_prior = target.log_prior(z)
    l_old, l_new = target.split_loglik(z, old, new)
    accept_rates = []
    for _ in range(config.jitter_moves if moves is None else moves):
        prop = z + scale * rng.standard_normal(z.shape) @ chol.T
        pp = target.log_prior(prop)
        ok = np.isfinite(pp)
        po, pn = np.full(n, -np.inf), np.full(n, -np.inf)
        if ok.any():
            po[ok], pn[ok] = target.split_loglik(prop[ok], old, new)
        cur = lp_prior + l_old + gamma * l_new
        cand = pp + po + gamma * pn
        with np.errstate(invalid="ignore"):
            acc = np.log(rng.uniform(size=n)) < (cand - cur)
        acc &= np.isfinite(cand)
        z[acc], lp_prior[acc], l_old[acc], l_new[acc] = prop[acc], pp[acc], po[acc], pn[acc]
        rate = float(acc.mean())
        accept_rates.append(rate)
        # adjust the scale between moves; each move is itself a fixed MH kernel
        if rate < 0.15:
            scale *= 0.6
        elif rate > 0.5:
            scale *= 1.4
    if accept_rates and max(accept_rates) < 0.01:
        warnings.warn(f"jitter acceptance near zero (rates {accept_rates}, final scale {scale:.3g})",
                      RuntimeWarning)
    out = ParticleEnsemble(z, np.zeros(n), l_old + gamma * l_new, ensemble.k, list(ensemble.history))
    out.history.append({"event": "resample", "k": ensemble.k, "gamma": gamma,
                        "accept": accept_rates, "distinct": int(len(np.unique(idx)))})
    log.info(kv("jitter", k=ensemble.k, gamma=gamma, accept=float(np.mean(accept_rates or [np.nan])),
                distinct=int(len(np.unique(idx)))))
    return out


def conditional_ess(log_w, increment) -> float:
    """``n (sum W G)^2 / sum W G^2`` for normalised weights ``W`` and incremental weights ``G``."""
    inc = np.where(np.isnan(increment), -np.inf, increment)
    a = logsumexp(log_w + inc)
    if not np.isfinite(a):
        return 0.0
    return float(len(log_w) * np.exp(2 * a - logsumexp(log_w + 2 * inc)))


def _next_gamma(log_w, l_new, gamma, target_ess):
    """Largest next exponent whose conditional ESS stays at or above ``target_ess * n``."""
    n = len(log_w)

    def ok(g):
        return conditional_ess(log_w, (g - gamma) * l_new) >= target_ess * n

    if ok(1.0):
        return 1.0
    lo, hi = gamma, 1.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return max(lo, gamma + 1e-6)


def temper_batch(ensemble: ParticleEnsemble, graph: ModelGraph, old: Mapping[str, DataStream],
                 batch: Mapping[str, DataStream], rng: np.random.Generator, config: SMCConfig,
                 steps: int | None = None) -> ParticleEnsemble:
    """Assimilate ``batch`` through exponents ``0 < gamma_1 < ... < 1``.

    Equally spaced by default (``steps`` of them); with ``config.adaptive``
    each exponent is the largest one keeping the conditional ESS at
    ``adaptive_target * n``. The ESS after every reweighting is recorded in
    ``history``.
    """
    steps = config.temper_steps if steps is None else steps
    target = _Target(graph)
    _, l_new = target.split_loglik(ensemble.z, old, batch)
    # cached loglik holds the old data only
    ens = replace(ensemble, history=list(ensemble.history))
    gamma = 0.0
    i = 0
    while gamma < 1.0:
        i += 1
        if i > config.max_substeps:
            raise ConfigurationError("tempering did not reach gamma = 1 within max_substeps")
        if config.adaptive:
            nxt = _next_gamma(ens.log_w, l_new, gamma, config.adaptive_target)
        else:
            nxt = min(1.0, i / steps)
        inc = (nxt - gamma) * l_new
        cess = conditional_ess(ens.log_w, inc)
        ens = reweight(ens, inc)
        ens.history.append({"event": "reweight", "k": ens.k, "gamma": nxt, "ess": ens.ess, "cess": cess,
                            "n": ens.n})
        log.info(kv("temper", k=ens.k, gamma=nxt, ess=ens.ess, n=ens.n))
        gamma = nxt
        # the adaptive ladder resamples after every intermediate step so that each
        # step starts from equal weights and its ESS equals the conditional ESS
        moved = resample_and_jitter(ens, graph, old, batch, gamma, rng, config,
                                    force=config.adaptive and gamma < 1.0)
        if moved is not ens:
            ens = moved
            l_new = target.split_loglik(ens.z, {}, batch)[1]
    ens.k = ensemble.k + 1
    return ens


@dataclass
class SMCResult:
    ensemble: ParticleEnsemble
    graph: ModelGraph
    names: list[str]
    summaries: list[dict[str, Any]]

    def draws(self) -> np.ndarray:
        """Particles on the natural scale."""
        x, _ = GraphPosterior(self.graph, {}, require_all=False).constrain(self.ensemble.z)
        return x

    def mean(self) -> np.ndarray:
        return self.ensemble.mean(self.draws())

    def mcse(self) -> np.ndarray:
        """``sd / sqrt(ESS)`` per parameter (ignores correlation induced by resampling)."""
        x = self.draws()
        w = self.ensemble.weights
        var = w @ (x - w @ x) ** 2
        return np.sqrt(var / self.ensemble.ess)

    def min_ess(self) -> float:
        vals = [h["ess"] for h in self.ensemble.history if h["event"] == "reweight"]
        return min(vals) if vals else float(self.ensemble.n)


def run_smc(graph: ModelGraph, batches: Sequence[Mapping[str, DataStream]],
            config: SMCConfig | None = None, callback=None) -> SMCResult:
    """Assimilate ``batches`` in order starting from a prior ensemble."""
    cfg = config or SMCConfig()
    rng = np.random.default_rng(cfg.seed)
    ens = init_ensemble(graph, cfg.n_particles, rng)
    names = graph.flat_names
    old: dict[str, DataStream] = {}
    summaries = []
    for b, batch in enumerate(batches):
        ens = temper_batch(ens, graph, old, batch, rng, cfg)
        old = merge_streams(old, batch)
        if cfg.final_moves and b == len(batches) - 1:
            ens = resample_and_jitter(ens, graph, old, {}, 1.0, rng, cfg, force=True, moves=cfg.final_moves)
        row = summarize_ensemble(ens, graph)
        summaries.append(row)
        if callback is not None:
            callback(b, ens, row)
    return SMCResult(ens, graph, names, summaries)


def summarize_ensemble(ens: ParticleEnsemble, graph: ModelGraph) -> dict[str, Any]:
    x, _ = GraphPosterior(graph, {}, require_all=False).constrain(ens.z)
    w = ens.weights
    order = np.argsort(x, axis=0)
    out: dict[str, Any] = {"k": ens.k, "ess": ens.ess}
    for j, name in enumerate(graph.flat_names):
        xs = x[order[:, j], j]
        cw = np.cumsum(w[order[:, j]])
        q = [xs[min(np.searchsorted(cw, p), len(xs) - 1)] for p in (0.5, 0.025, 0.975)]
        out[name] = {"mean": float(w @ x[:, j]), "median": float(q[0]), "q2.5": float(q[1]),
                     "q97.5": float(q[2])}
    return out


def write_summary_csv(rows: Sequence[Mapping[str, Any]], path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["batch", "parameter", "mean", "median", "q2.5", "q97.5", "ess"])
        for r in rows:
            for name, s in r.items():
                if isinstance(s, dict):
                    w.writerow([r["k"], name] + [f"{s[c]:.6g}" for c in ("mean", "median", "q2.5", "q97.5")]
                               + [f"{r['ess']:.1f}"])
    return path


def predictive_summary(ens: ParticleEnsemble, graph: ModelGraph, node: str, rng: np.random.Generator,
                       n_draws: int = 500) -> np.ndarray:
    """Median and 95% band of a functional node's trajectory, shape ``(3, days, A)``."""
    idx = systematic_resample(ens.weights, rng)[: n_draws]
    x, _ = GraphPosterior(graph, {}, require_all=False).constrain(ens.z[idx])
    vals = np.asarray(graph.evaluate(graph.unflatten(x), [node])[node])
    return np.quantile(vals, [0.5, 0.025, 0.975], axis=0)


def write_predictive_csv(bands: np.ndarray, labels: Sequence[str], path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["day", "age", "median", "q2.5", "q97.5"])
        for t in range(bands.shape[1]):
            for a, label in enumerate(labels):
                w.writerow([t, label] + [f"{bands[i, t, a]:.6g}" for i in range(3)])
    return path


def run_smc_replicates(graph: ModelGraph, batches: Sequence[Mapping[str, DataStream]],
                       config: SMCConfig | None = None, replicates: int = 3) -> list[SMCResult]:
    """Independent runs with seeds ``config.seed, config.seed + 1, ...``."""
    cfg = config or SMCConfig()
    if replicates < 2:
        raise ConfigurationError("need at least two replicate runs")
    return [run_smc(graph, batches, replace(cfg, seed=cfg.seed + r)) for r in range(replicates)]


def replicate_mean_mcse(results: Sequence[SMCResult]) -> tuple[np.ndarray, np.ndarray]:
    """Pooled posterior mean and its Monte Carlo standard error from replicate runs.

    Resampling correlates particles, so ``sd / sqrt(ESS)`` understates the
    error of one run; the spread of independent replicate means does not.
    """
    means = np.array([r.mean() for r in results])
    return means.mean(axis=0), means.std(axis=0, ddof=1) / np.sqrt(len(means))
