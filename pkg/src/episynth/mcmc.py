"""Adaptive random-walk Metropolis-Hastings with deviance accounting.

Sampling happens on the unconstrained scale of the target (logit for
probabilities, log for positive quantities). During burn-in the proposal
covariance is learned from the chain's own history (scaled by
``2.38**2 / dim``) and a global scale factor is tuned towards the target
acceptance rate; both are frozen afterwards so that stored draws come from
a fixed, reversible kernel.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
from scipy import optimize

from episynth.errors import ConfigurationError, InitializationError
from episynth.logs import get_logger, kv

log = get_logger(__name__)


@dataclass(frozen=True)
class ChainConfig:
    iterations: int = 20000
    burn_in: int = 5000
    thin: int = 1
    seed: int = 0
    adapt_start: int = 500
    adapt_interval: int = 50
    target_accept: float = 0.234
    initial_scale: float = 0.1
    init_tries: int = 200
    regularization: float = 1e-8
    start: str = "prior"
    mode_candidates: int = 200
    mode_starts: int = 4

    def __post_init__(self):
        if not self.iterations > self.burn_in >= 0:
            raise ConfigurationError("need iterations > burn_in >= 0")
        if self.thin < 1:
            raise ConfigurationError("thin must be >= 1")
        if not 0 < self.target_accept < 1:
            raise ConfigurationError("target acceptance must lie in (0, 1)")
        if self.initial_scale <= 0 or self.adapt_interval < 1 or self.adapt_start < 2:
            raise ConfigurationError("invalid adaptation settings")
        if self.start not in ("prior", "mode"):
            raise ConfigurationError("start must be 'prior' or 'mode'")

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ChainConfig":
        extra = set(d) - set(cls.__dataclass_fields__)
        if extra:
            raise ConfigurationError(f"unknown sampler fields {sorted(extra)}")
        return cls(**d)


@dataclass
class PosteriorSample:
    """Stored draws with their log-posterior and per-data-node log-likelihoods.

    ``draws`` are on the natural (constrained) scale, ``z`` on the sampling
    scale; columns follow ``names``.
    """

    names: list[str]
    draws: np.ndarray
    z: np.ndarray
    log_post: np.ndarray
    node_loglik: dict[str, np.ndarray] = field(default_factory=dict)
    acceptance: float = float("nan")
    chain: int = 0
    meta: dict[str, Any] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.draws)

    def column(self, name: str) -> np.ndarray:
        return self.draws[:, self.names.index(name)]

    def mean(self) -> np.ndarray:
        return self.draws.mean(axis=0)

    def mcse(self, name: str | None = None, values=None) -> float:
        x = self.column(name) if values is None else np.asarray(values)
        return batch_means_mcse(x)

    def quantiles(self, q=(0.5, 0.025, 0.975)) -> np.ndarray:
        return np.quantile(self.draws, q, axis=0)

    def to_theta(self, graph) -> dict[str, np.ndarray]:
        """Draws as a batched ``theta`` dict for ``graph``."""
        return graph.unflatten(self.draws)

    def write_csv(self, path: str | Path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["draw", *self.names, "log_post"])
            for i, (row, lp) in enumerate(zip(self.draws, self.log_post)):
                w.writerow([i, *(repr(float(x)) for x in row), repr(float(lp))])
        return path


def _target(model, data):
    if hasattr(model, "posterior"):
        return model.posterior(data) if data is not None else model.posterior()
    return model


def _as_z(target, initial) -> np.ndarray:
    if isinstance(initial, Mapping):
        return target.unconstrain(target.graph.flatten(initial))
    return target.unconstrain(np.asarray(initial, dtype=float))


def _evaluate(target, z):
    lp, lls = target.logp(z)
    lp = float(lp)
    return (lp if np.isfinite(lp) else -np.inf), {k: float(v) for k, v in lls.items()}


def _batched_logp(target, z):
    try:
        lp, _ = target.logp(z)
        lp = np.asarray(lp, dtype=float)
        if lp.shape == (len(z),):
            return np.where(np.isnan(lp), -np.inf, lp)
    except Exception:  # targets without batch support fall back to a loop
        pass
    return np.array([_evaluate(target, zi)[0] for zi in z])


def find_mode(target, rng: np.random.Generator, candidates: int = 200, starts: int = 4):
    """Posterior mode on the sampling scale and the BFGS inverse-Hessian there.

    BFGS is run from the ``starts`` best of ``candidates`` prior draws and the
    highest optimum is kept, which guards against local modes near the edge
    of the parameter space. A BFGS run that stalls (floored counts make the
    surface piecewise flat) is polished with Powell's derivative-free method
    and restarted. Returns ``(z_mode, cov)``; ``cov`` is ``None``
    when the curvature estimate is not positive definite.
    """
    z0 = np.atleast_2d(np.asarray(target.initial_points(rng, candidates), dtype=float))
    lp0 = _batched_logp(target, z0)
    if not np.any(np.isfinite(lp0)):
        raise InitializationError(f"no finite-posterior start among {candidates} prior draws")
    order = [i for i in np.argsort(-lp0) if np.isfinite(lp0[i])][:max(1, starts)]

    def neg(z):
        v = _evaluate(target, z)[0]
        return -v if np.isfinite(v) else 1e300

    best, best_start = None, None
    for i in order:
        res = optimize.minimize(neg, z0[i], method="BFGS")
        if not res.success:
            polish = optimize.minimize(neg, res.x, method="Powell")
            if polish.fun < res.fun:
                again = optimize.minimize(neg, polish.x, method="BFGS")
                res = again if again.fun <= polish.fun else polish
        if best is None or res.fun < best.fun:
            best, best_start = res, z0[i]
    z = best.x if best.fun < neg(best_start) else best_start
    cov = np.asarray(getattr(best, "hess_inv", None), dtype=float) if best.fun < 1e299 else None
    if cov is not None:
        cov = 0.5 * (cov + cov.T)
        if cov.shape != (len(z), len(z)) or np.any(~np.isfinite(cov)) or np.linalg.eigvalsh(cov).min() <= 0:
            cov = None
    log.info(kv("mode", lp=-float(best.fun), starts=len(order), converged=bool(best.success)))
    return z, cov


def run_chain(model, data=None, config: ChainConfig | None = None, chain: int = 0,
              initial=None) -> PosteriorSample:
    """Run one adaptive Metropolis chain and return post-burn-in thinned draws.

    ``model`` is anything with ``posterior(data)`` (a model graph, a melded
    model) or a ready target exposing ``logp``, ``dim``, ``constrain``,
    ``unconstrain`` and ``initial_points``.
    """
    cfg = config or ChainConfig()
    target = _target(model, data)
    d = target.dim
    rng = np.random.default_rng([cfg.seed, chain])

    chol = np.eye(d) * cfg.initial_scale
    if initial is None and cfg.start == "mode":
        z, cov = find_mode(target, rng, cfg.mode_candidates, cfg.mode_starts)
        lp, lls = _evaluate(target, z)
        if cov is not None:
            chol = np.linalg.cholesky(2.38 ** 2 / d * cov + cfg.regularization * np.eye(d))
    elif initial is not None:
        z = _as_z(target, initial)
        lp, lls = _evaluate(target, z)
        if not np.isfinite(lp):
            raise InitializationError("supplied initial point has zero posterior density")
    else:
        for _ in range(cfg.init_tries):
            z = np.asarray(target.initial_points(rng), dtype=float)
            lp, lls = _evaluate(target, z)
            if np.isfinite(lp):
                break
        else:
            raise InitializationError(f"no finite-posterior start found after {cfg.init_tries} tries")

    node_names = sorted(lls)
    n_keep = len(range(cfg.burn_in, cfg.iterations, cfg.thin))
    out_z = np.empty((n_keep, d))
    out_lp = np.empty(n_keep)
    out_ll = np.empty((n_keep, len(node_names)))

    base = 2.38 ** 2 / d
    log_scale = 0.0
    mean = z.copy()
    m2 = np.zeros((d, d))
    n_seen = 1
    accepted = 0
    adapted = False
    keep = 0
    for it in range(cfg.iterations):
        step = chol @ rng.standard_normal(d) * np.exp(log_scale)
        prop = z + step
        lp_new, lls_new = _evaluate(target, prop)
        log_alpha = lp_new - lp if np.isfinite(lp_new) else -np.inf
        if np.log(rng.uniform()) < log_alpha:
            z, lp, lls = prop, lp_new, lls_new
            if it >= cfg.burn_in:
                accepted += 1
        if it < cfg.burn_in:
            # running moments of the chain (Welford) for the proposal covariance
            n_seen += 1
            delta = z - mean
            mean = mean + delta / n_seen
            m2 = m2 + np.outer(delta, z - mean)
            if adapted:
                gamma = 1.0 / (it - cfg.adapt_start + 1) ** 0.6
                log_scale += gamma * (min(1.0, np.exp(min(log_alpha, 0.0))) - cfg.target_accept)
            if it + 1 >= cfg.adapt_start and (it + 1) % cfg.adapt_interval == 0:
                cov = m2 / (n_seen - 1)
                cov = base * (cov + cfg.regularization * np.eye(d))
                try:
                    chol = np.linalg.cholesky(cov)
                    if not adapted:
                        log_scale = 0.0
                    adapted = True
                except np.linalg.LinAlgError:
                    pass
        elif (it - cfg.burn_in) % cfg.thin == 0:
            out_z[keep] = z
            out_lp[keep] = lp
            out_ll[keep] = [lls[k] for k in node_names]
            keep += 1

    n_post = cfg.iterations - cfg.burn_in
    rate = accepted / n_post if n_post else float("nan")
    log.info(kv("chain_done", chain=chain, seed=cfg.seed, acceptance=rate, draws=keep,
                scale=float(np.exp(log_scale))))
    x, _ = target.constrain(out_z)
    return PosteriorSample(
        names=list(target.names), draws=x, z=out_z, log_post=out_lp,
        node_loglik={k: out_ll[:, i] for i, k in enumerate(node_names)},
        acceptance=rate, chain=chain,
        meta={"seed": cfg.seed, "iterations": cfg.iterations, "burn_in": cfg.burn_in, "thin": cfg.thin,
              "proposal_scale": float(np.exp(log_scale))},
    )


def run_chains(model, data=None, config: ChainConfig | None = None, n_chains: int = 2,
               initial=None) -> list[PosteriorSample]:
    """Independent chains with RNG streams derived from the master seed."""
    return [run_chain(model, data, config, chain=c, initial=initial) for c in range(n_chains)]


def combine(samples: Sequence[PosteriorSample]) -> PosteriorSample:
    first = samples[0]
    return PosteriorSample(
        names=first.names,
        draws=np.concatenate([s.draws for s in samples]),
        z=np.concatenate([s.z for s in samples]),
        log_post=np.concatenate([s.log_post for s in samples]),
        node_loglik={k: np.concatenate([s.node_loglik[k] for s in samples]) for k in first.node_loglik},
        acceptance=float(np.mean([s.acceptance for s in samples])),
        meta=dict(first.meta, chains=len(samples)),
    )


# --- diagnostics -------------------------------------------------------------------------------------

def batch_means_mcse(x, n_batches: int | None = None) -> float:
    """Monte Carlo standard error of the mean by non-overlapping batch means."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    b = n_batches or max(2, int(np.sqrt(n)))
    size = n // b
    if size < 1:
        raise ConfigurationError("too few draws for batch means")
    means = x[: b * size].reshape(b, size).mean(axis=1)
    return float(means.std(ddof=1) / np.sqrt(b))


def split_rhat(chains: Sequence[np.ndarray]) -> float:
    """Split-chain potential scale reduction factor for one scalar quantity."""
    halves = []
    for c in chains:
        c = np.asarray(c, dtype=float)
        h = len(c) // 2
        halves += [c[:h], c[h: 2 * h]]
    n = min(len(h) for h in halves)
    arr = np.array([h[:n] for h in halves])
    W = arr.var(axis=1, ddof=1).mean()
    B = n * arr.mean(axis=1).var(ddof=1)
    var_plus = (n - 1) / n * W + B / n
    return float(np.sqrt(var_plus / W)) if W > 0 else float("nan")


def convergence_report(samples: Sequence[PosteriorSample]) -> list[dict[str, Any]]:
    rows = []
    for i, name in enumerate(samples[0].names):
        cols = [s.draws[:, i] for s in samples]
        allx = np.concatenate(cols)
        rows.append({"parameter": name, "mean": float(allx.mean()),
                     "mcse": float(np.sqrt(np.mean([batch_means_mcse(c) ** 2 for c in cols]) / len(cols))),
                     "rhat": split_rhat(cols)})
    return rows


# --- deviance -------------------------------------------------------------------------------------------

@dataclass(frozen=True)
class DevianceRow:
    node: str
    D_bar: float
    D_hat: float

    @property
    def p_D(self) -> float:
        return self.D_bar - self.D_hat

    @property
    def DIC(self) -> float:
        return self.D_bar + self.p_D


def dic_from_deviances(D_bar: float, D_hat: float) -> tuple[float, float]:
    """``(p_D, DIC)`` from the posterior mean deviance and the plug-in deviance."""
    p_D = D_bar - D_hat
    return p_D, D_bar + p_D


def deviance_summary(sample: PosteriorSample, model, data=None) -> list[DevianceRow]:
    """Per-node and total ``D_bar``, ``D(theta_bar)``, ``p_D`` and ``DIC``.

    ``theta_bar`` is the posterior mean on the sampling scale, mapped back,
    so constrained parameters always have a valid plug-in value.
    """
    if len(sample) == 0:
        raise ConfigurationError("empty sample")
    target = _target(model, data)
    z_bar = sample.z.mean(axis=0)
    ll_hat = target.node_logliks(z_bar)
    rows = []
    for name in sorted(sample.node_loglik):
        rows.append(DevianceRow(name, float(np.mean(-2 * sample.node_loglik[name])), float(-2 * ll_hat[name])))
    if rows:
        rows.append(DevianceRow("total", sum(r.D_bar for r in rows), sum(r.D_hat for r in rows)))
    return rows


def write_deviance_csv(rows: Sequence[DevianceRow], path: str | Path, extra: Mapping[str, Mapping] | None = None,
                       extra_columns: Sequence[str] = ()) -> Path:
    """Deviance table; ``extra`` adds per-node columns such as the age-group data summary."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node", *extra_columns, "D_bar", "D_hat", "p_D", "DIC"])
        for r in rows:
            ex = (extra or {}).get(r.node, {})
            w.writerow([r.node, *(ex.get(c, "") for c in extra_columns),
                        f"{r.D_bar:.2f}", f"{r.D_hat:.2f}", f"{r.p_D:.2f}", f"{r.DIC:.2f}"])
    return path
