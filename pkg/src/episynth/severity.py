"""Cross-sectional severity pyramid: counts, case-severity risks and likelihood terms.

Infections move up the pyramid Pop -> I -> S -> H -> {ICU, D}. Under the
mean parameterisation each level is ``floor(p_{l|m} * N_m)``; the nested
binomial alternative is available for small populations, where the latent
counts can be summed out exactly.

All functions broadcast over leading batch axes so that posterior draws or
particles can be pushed through in one call.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
from scipy.special import logsumexp

from episynth.core import kernels
from episynth.core.graph import BasicNode, ConstantNode, DataNode, FunctionalNode, ModelGraph
from episynth.core.likelihoods import Binomial, Custom, LogNormalPoint
from episynth.core.priors import PriorSpec
from episynth.core.streams import AgeStructure, DataStream, StreamKind
from episynth.errors import ConfigurationError, DomainError

CONDITIONALS = ("p_SI", "p_HS", "p_ICUH", "p_DH")
LEVELS = ("N_I", "N_S", "N_H", "N_ICU", "N_D")


@dataclass
class SeverityParams:
    """Per-age (and optionally batched) pyramid probabilities for one wave.

    ``p_I`` is the attack-rate increment, so post-wave sero-prevalence is
    ``pi_baseline + p_I``.
    """

    p_I: Any
    p_SI: Any
    p_HS: Any
    p_ICUH: Any
    p_DH: Any
    d_S: Any = 1.0
    d_H: Any = 1.0
    d_D: Any = 1.0
    pi_baseline: Any = 0.0

    @property
    def pi(self):
        return np.asarray(self.pi_baseline, dtype=float) + np.asarray(self.p_I, dtype=float)

    def check(self) -> None:
        for name in ("p_I", "p_SI", "p_HS", "p_ICUH", "p_DH", "d_S", "d_H", "d_D", "pi_baseline"):
            v = np.asarray(getattr(self, name), dtype=float)
            if np.any((v < 0) | (v > 1)) or np.any(np.isnan(v)):
                raise DomainError(f"{name} must lie in [0, 1]")


@dataclass
class SeverityState:
    N_Pop: Any
    N_I: Any
    N_S: Any
    N_H: Any
    N_ICU: Any
    N_D: Any


@dataclass
class CaseSeverityRisks:
    CHR: Any
    CIR: Any
    CFR: Any
    sCFR: Any


@dataclass
class IcuProcessParams:
    """Immigration-death description of prevalent ICU occupancy.

    ``lam`` is the admission rate per day, piecewise constant over days;
    ``mu`` the exit rate, so the mean length of stay is ``1 / mu``.
    """

    lam: Any
    mu: float
    nu0: float = 0.0
    d_ICU: float = 1.0
    dt: float = 1.0

    def __post_init__(self):
        self.lam = np.asarray(self.lam, dtype=float)
        if not np.all(np.asarray(self.mu) > 0):
            raise DomainError("ICU exit rate mu must be positive")
        if np.any(self.lam < 0):
            raise DomainError("ICU admission rates must be nonnegative")
        if not 0 <= self.d_ICU <= 1:
            raise DomainError("d_ICU must lie in [0, 1]")

    @property
    def mean_stay(self):
        return 1.0 / np.asarray(self.mu)

    @property
    def cumulative_admissions(self):
        return np.sum(self.lam, axis=-1) * self.dt


# --- pyramid arithmetic ----------------------------------------------------------

def _floor(x):
    return np.floor(np.asarray(x, dtype=float))


def pyramid_counts(params: SeverityParams, N_Pop) -> SeverityState:
    N_Pop = np.asarray(N_Pop, dtype=float)
    n_i = _floor(np.asarray(params.p_I, dtype=float) * N_Pop)
    n_s = _floor(np.asarray(params.p_SI, dtype=float) * n_i)
    n_h = _floor(np.asarray(params.p_HS, dtype=float) * n_s)
    n_icu = _floor(np.asarray(params.p_ICUH, dtype=float) * n_h)
    n_d = _floor(np.asarray(params.p_DH, dtype=float) * n_h)
    return SeverityState(N_Pop, n_i, n_s, n_h, n_icu, n_d)


def case_severity_risks(params: SeverityParams) -> CaseSeverityRisks:
    """CHR, CIR, CFR (per infection) and symptomatic CFR (per symptomatic case)."""
    p_si = np.asarray(params.p_SI, dtype=float)
    p_hs = np.asarray(params.p_HS, dtype=float)
    chr_ = p_hs * p_si
    return CaseSeverityRisks(
        CHR=chr_,
        CIR=np.asarray(params.p_ICUH, dtype=float) * chr_,
        CFR=np.asarray(params.p_DH, dtype=float) * chr_,
        sCFR=np.asarray(params.p_DH, dtype=float) * p_hs,
    )


# --- likelihood terms -------------------------------------------------------------

def lognormal_point_estimate_term(N, y_hat, sigma_hat):
    """Normal log density of a log-scale estimate ``y_hat`` around ``log N``."""
    N = np.asarray(N, dtype=float)
    if np.any(np.asarray(sigma_hat) <= 0):
        raise DomainError("sigma_hat must be positive")
    with np.errstate(divide="ignore"):
        out = kernels.normal_logpdf(y_hat, np.log(N), sigma_hat)
    out = np.where(N >= 1, out, -np.inf)
    return float(out) if out.ndim == 0 else out


def icu_lower_bound_term(N_ICU, N_star, d_ICU):
    """``N_star ~ Binomial(N_ICU, d_ICU)``; ``N_star > N_ICU`` is impossible, not an error."""
    return kernels.binomial_logpmf(N_star, N_ICU, d_ICU, strict=False)


def wave3_hierarchical_prior(p_wave3, p_wave2, sd: float = 1.0):
    """Normal log density of ``logit(p_wave3)`` centred at ``logit(p_wave2)``.

    This is a density on the logit scale; boundary probabilities give ``-inf``.
    """
    p3 = np.asarray(p_wave3, dtype=float)
    p2 = np.asarray(p_wave2, dtype=float)
    inside = (p3 > 0) & (p3 < 1) & (p2 > 0) & (p2 < 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = kernels.normal_logpdf(kernels.logit(p3), kernels.logit(p2), sd)
    out = np.where(inside, out, -np.inf)
    return float(out) if out.ndim == 0 else out


def _stream_terms(stream: DataStream, values, index="age"):
    v = np.asarray(values, dtype=float)
    if v.ndim == 0:
        return np.full(len(stream), float(v))
    return v[..., stream.age_index] if index == "age" else v


def severity_loglik_wave1(params: SeverityParams, state: SeverityState,
                          data: Mapping[str, DataStream]) -> Any:
    """Term-by-term first-wave log-likelihood over whichever streams are supplied.

    Recognised stream names: ``sero_baseline``, ``sero_post``, ``y_S``,
    ``y_H``, ``y_D``, ``y_ICU_H``, ``y_D_H``. A ``y_S`` stream of kind
    ``PointEstimateLogScale`` is a log-scale estimate of ``d_S * N_S``;
    otherwise it is a binomial detection count.
    """
    total = 0.0

    def add(x):
        nonlocal total
        total = total + np.sum(x, axis=-1)

    def binom(stream, n, p):
        return kernels.binomial_logpmf(stream.value, n, p, strict=False)

    if "sero_baseline" in data:
        s = data["sero_baseline"]
        add(binom(s, s.denominator, _stream_terms(s, params.pi_baseline)))
    if "sero_post" in data:
        s = data["sero_post"]
        add(binom(s, s.denominator, _stream_terms(s, params.pi)))
    if "y_S" in data:
        s = data["y_S"]
        if s.kind is StreamKind.PointEstimateLogScale:
            n_obs = np.asarray(params.d_S, dtype=float) * np.asarray(state.N_S, dtype=float)
            add(lognormal_point_estimate_term(_stream_terms(s, n_obs), s.value, s.denominator))
        else:
            add(binom(s, _stream_terms(s, state.N_S), _stream_terms(s, params.d_S * np.ones_like(state.N_S))))
    for key, level, det in (("y_H", "N_H", "d_H"), ("y_D", "N_D", "d_D")):
        if key in data:
            s = data[key]
            n = np.asarray(getattr(state, level), dtype=float)
            d = np.asarray(getattr(params, det), dtype=float) * np.ones_like(n)
            add(binom(s, _stream_terms(s, n), _stream_terms(s, d)))
    for key, prob in (("y_ICU_H", "p_ICUH"), ("y_D_H", "p_DH")):
        if key in data:
            s = data[key]
            add(binom(s, s.denominator, _stream_terms(s, getattr(params, prob))))
    return total


def nested_pyramid_loglik(params: SeverityParams, N_Pop: int, y_S: float | None = None,
                          y_H: float | None = None, y_D: float | None = None,
                          y_S_sd: float | None = None) -> float:
    """Exact log-likelihood of (y_S, y_H, y_D) under nested binomial latent counts.

    The latent N_I, N_S, N_H (and N_D, N_ICU) are summed out by message
    passing, which costs O(N_Pop^2) memory, so this is for small populations.
    ``y_S_sd`` switches the symptomatic observation to a log-scale point
    estimate of ``d_S * N_S``.
    """
    N_Pop = int(N_Pop)
    if N_Pop > 3000:
        raise ConfigurationError("nested binomial mode is limited to N_Pop <= 3000")
    k = np.arange(N_Pop + 1, dtype=float)

    def transition(p):
        # log Binomial(j; i, p) for i rows, j columns
        return kernels.binomial_logpmf(k[None, :], k[:, None], float(p), strict=False)

    msg = kernels.binomial_logpmf(k, N_Pop, float(params.p_I), strict=False)
    msg = logsumexp(msg[:, None] + transition(params.p_SI), axis=0)
    if y_S is not None:
        if y_S_sd is not None:
            msg = msg + lognormal_point_estimate_term(float(params.d_S) * k, y_S, y_S_sd)
        else:
            msg = msg + kernels.binomial_logpmf(y_S, k, float(params.d_S), strict=False)
    msg = logsumexp(msg[:, None] + transition(params.p_HS), axis=0)
    if y_H is not None:
        msg = msg + kernels.binomial_logpmf(y_H, k, float(params.d_H), strict=False)
    if y_D is not None:
        # N_D ~ Bin(N_H, p_DH) thinned by d_D is Bin(N_H, p_DH * d_D)
        msg = msg + kernels.binomial_logpmf(y_D, k, float(params.p_DH) * float(params.d_D), strict=False)
    return float(logsumexp(msg))


# --- immigration-death ICU sub-model ----------------------------------------------

def icu_mean_prevalence(lam, mu, nu0: float = 0.0, dt: float = 1.0):
    """Mean occupancy ``nu`` at the start of each step and after the last one.

    Solves ``d nu / dt = lam_t - mu * nu`` exactly with ``lam`` constant on each
    step; returns an array one longer than ``lam`` along the last axis.
    """
    lam = np.asarray(lam, dtype=float)
    mu = np.asarray(mu, dtype=float)
    if np.any(mu <= 0):
        raise DomainError("ICU exit rate mu must be positive")
    decay = np.exp(-mu * dt)
    gain = (1.0 - decay) / mu
    out = np.empty(lam.shape[:-1] + (lam.shape[-1] + 1,))
    nu = np.broadcast_to(np.asarray(nu0, dtype=float), lam.shape[:-1]).astype(float)
    out[..., 0] = nu
    for t in range(lam.shape[-1]):
        nu = nu * decay + lam[..., t] * gain
        out[..., t + 1] = nu
    return out


def icu_immigration_death_loglik(params: IcuProcessParams, prevalence: DataStream,
                                 method: str = "marginal") -> float:
    """Log-likelihood of prevalent ICU counts observed at integer steps.

    ``method="marginal"`` multiplies Poisson marginals ``N_t ~ Poisson(nu_t)``
    (exact per time point when the initial count is Poisson). ``"markov"``
    uses the exact transition law between consecutive observations: binomial
    survivors plus Poisson newcomers.
    """
    lam = params.lam
    t = prevalence.time_index
    if np.any(t > lam.shape[-1]):
        raise ConfigurationError("prevalence observed beyond the admission-rate series")
    nu = icu_mean_prevalence(lam, params.mu, params.nu0, params.dt)
    y = prevalence.value
    if method == "marginal":
        return float(np.sum(kernels.poisson_logpmf(y, nu[..., t])))
    if method != "markov":
        raise ConfigurationError(f"unknown immigration-death likelihood {method!r}")
    order = np.argsort(t, kind="stable")
    t, y = t[order], y[order]
    total = float(kernels.poisson_logpmf(y[0], nu[t[0]]))
    for i in range(1, len(t)):
        gap = int(t[i] - t[i - 1])
        if gap == 0:
            total += 0.0 if y[i] == y[i - 1] else -np.inf
            continue
        surv = np.exp(-params.mu * params.dt * gap)
        fresh = icu_mean_prevalence(lam[t[i - 1]:t[i]], params.mu, 0.0, params.dt)[-1]
        n_prev, n_now = int(y[i - 1]), int(y[i])
        ks = np.arange(0, min(n_prev, n_now) + 1)
        terms = (kernels.binomial_logpmf(ks, n_prev, surv, strict=False)
                 + kernels.poisson_logpmf(n_now - ks, fresh))
        total += float(logsumexp(terms))
    return total


# --- model graph ------------------------------------------------------------------------

@dataclass
class WaveSpec:
    """Which evidence one wave carries and how it enters the model.

    ``streams`` lists stream names without the wave prefix. ``symptomatic``
    is ``"binomial"`` (detection count) or ``"lognormal"`` (log-scale
    estimate). ``centre_on`` names an earlier wave whose conditional
    probabilities centre this wave's priors on the logit scale.
    """

    wave: int
    streams: tuple[str, ...] = ("sero_baseline", "sero_post", "y_S", "y_H", "y_D", "y_ICU_H", "y_D_H")
    symptomatic: str = "binomial"
    detect_symptomatic: bool = True
    centre_on: int | None = None
    icu: bool = False

    def __post_init__(self):
        self.streams = tuple(self.streams)
        known = {"sero_baseline", "sero_post", "y_S", "y_H", "y_D", "y_ICU_H", "y_D_H", "y_ICU"}
        bad = set(self.streams) - known
        if bad:
            raise ConfigurationError(f"wave {self.wave}: unknown streams {sorted(bad)}")
        if self.symptomatic not in ("binomial", "lognormal"):
            raise ConfigurationError("symptomatic must be 'binomial' or 'lognormal'")
        if self.icu and "y_ICU" not in self.streams:
            self.streams = self.streams + ("y_ICU",)


@dataclass
class SeverityConfig:
    ages: AgeStructure
    N_Pop: Sequence[float]
    waves: list[WaveSpec] = field(default_factory=lambda: [WaveSpec(1)])
    priors: dict[str, PriorSpec] = field(default_factory=dict)
    centre_sd: float = 1.0
    nested: bool = False
    naive_ds: bool = False

    def __post_init__(self):
        self.N_Pop = self.ages.check(self.N_Pop, "N_Pop")
        if np.any(self.N_Pop < 1):
            raise ConfigurationError("N_Pop must be positive in every age group")

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "SeverityConfig":
        if "N_Pop" not in d:
            raise ConfigurationError("manifest field missing: N_Pop")
        ages = AgeStructure(tuple(d.get("ages", {}).get("labels", AgeStructure().labels)))
        waves = [WaveSpec(**w) for w in d.get("waves", [{"wave": 1}])]
        priors = {k: PriorSpec.from_dict(v) for k, v in d.get("priors", {}).items()}
        return cls(ages, d["N_Pop"], waves, priors, float(d.get("centre_sd", 1.0)),
                   bool(d.get("nested", False)), bool(d.get("naive_ds", False)))


def _prior(config: SeverityConfig, name: str) -> PriorSpec:
    return config.priors.get(name, PriorSpec("uniform"))


def _obs(size, prob):
    return {"size": size, "prob": np.broadcast_to(prob, np.shape(size))}


def build_severity_graph(config: SeverityConfig) -> ModelGraph:
    """Assemble the severity DAG for the configured waves.

    Node names carry a ``w<k>.`` prefix; data streams must use the same
    names (``w1.y_H`` and so on). Vector nodes run over the age plate.
    """
    A = config.ages.count
    nodes: list = [ConstantNode("N_Pop", np.asarray(config.N_Pop, dtype=float), "age")]
    waves = {w.wave: w for w in config.waves}
    for spec in config.waves:
        w = f"w{spec.wave}."
        has_sero = bool({"sero_baseline", "sero_post"} & set(spec.streams))

        def basic(name, prior=None):
            nodes.append(BasicNode(w + name, prior or _prior(config, name), A, "age"))

        if has_sero:
            basic("pi_baseline")
        basic("p_I")
        for name in CONDITIONALS:
            if spec.centre_on is not None:
                if spec.centre_on not in waves:
                    raise ConfigurationError(f"wave {spec.wave} centred on missing wave {spec.centre_on}")
                basic(name, PriorSpec("logit_normal", {"sd": config.centre_sd},
                                      center=f"w{spec.centre_on}.{name}"))
            else:
                basic(name)
        naive = config.naive_ds or not spec.detect_symptomatic
        if "y_S" in spec.streams:
            if naive:
                nodes.append(ConstantNode(w + "d_S", np.ones(A), "age"))
            else:
                basic("d_S")
        if "y_H" in spec.streams:
            basic("d_H")
        if "y_D" in spec.streams:
            basic("d_D")
        if spec.icu:
            nodes.append(BasicNode(w + "d_ICU", config.priors.get("d_ICU", PriorSpec("uniform"))))

        if has_sero:
            nodes.append(FunctionalNode(w + "pi", (w + "pi_baseline", w + "p_I"), np.add, "age"))
        nodes += [
            FunctionalNode(w + "N_I", (w + "p_I", "N_Pop"), lambda p, n: _floor(p * n), "age"),
            FunctionalNode(w + "N_S", (w + "p_SI", w + "N_I"), lambda p, n: _floor(p * n), "age"),
            FunctionalNode(w + "N_H", (w + "p_HS", w + "N_S"), lambda p, n: _floor(p * n), "age"),
            FunctionalNode(w + "N_ICU", (w + "p_ICUH", w + "N_H"), lambda p, n: _floor(p * n), "age"),
            FunctionalNode(w + "N_D", (w + "p_DH", w + "N_H"), lambda p, n: _floor(p * n), "age"),
            FunctionalNode(w + "CHR", (w + "p_HS", w + "p_SI"), np.multiply, "age"),
            FunctionalNode(w + "CIR", (w + "p_ICUH", w + "CHR"), np.multiply, "age"),
            FunctionalNode(w + "CFR", (w + "p_DH", w + "CHR"), np.multiply, "age"),
            FunctionalNode(w + "sCFR", (w + "p_DH", w + "p_HS"), np.multiply, "age"),
        ]
        if "sero_baseline" in spec.streams:
            nodes.append(DataNode(w + "sero_baseline", w + "pi_baseline", Binomial("age"), plate="age"))
        if "sero_post" in spec.streams:
            nodes.append(DataNode(w + "sero_post", w + "pi", Binomial("age"), plate="age"))

        if config.nested:
            _add_nested(nodes, spec, w, config)
        else:
            if "y_S" in spec.streams:
                if spec.symptomatic == "lognormal":
                    nodes.append(FunctionalNode(w + "obs_S", (w + "d_S", w + "N_S"), np.multiply, "age"))
                    nodes.append(DataNode(w + "y_S", w + "obs_S", LogNormalPoint("age"), plate="age"))
                else:
                    nodes.append(FunctionalNode(w + "obs_S", (w + "N_S", w + "d_S"), _obs, "age"))
                    nodes.append(DataNode(w + "y_S", w + "obs_S", Binomial("age"), plate="age"))
            for key, level, det in (("y_H", "N_H", "d_H"), ("y_D", "N_D", "d_D")):
                if key in spec.streams:
                    nodes.append(FunctionalNode(w + "obs_" + key[2:], (w + level, w + det), _obs, "age"))
                    nodes.append(DataNode(w + key, w + "obs_" + key[2:], Binomial("age"), plate="age"))
        if "y_ICU_H" in spec.streams:
            nodes.append(DataNode(w + "y_ICU_H", w + "p_ICUH", Binomial("age"), plate="age"))
        if "y_D_H" in spec.streams:
            nodes.append(DataNode(w + "y_D_H", w + "p_DH", Binomial("age"), plate="age"))
        if spec.icu:
            nodes.append(FunctionalNode(w + "N_ICU_star", (w + "d_ICU", w + "N_ICU"),
                                        lambda d, n: _floor(d * np.sum(n, axis=-1))))
            nodes.append(DataNode(w + "y_ICU", w + "N_ICU_star", LogNormalPoint("scalar")))
    return ModelGraph(nodes)


def _add_nested(nodes: list, spec: WaveSpec, w: str, config: SeverityConfig) -> None:
    keys = [k for k in ("y_S", "y_H", "y_D") if k in spec.streams]
    if not keys:
        return
    parents = ("N_Pop", w + "p_I", w + "p_SI", w + "p_HS", w + "p_DH")
    parents += tuple(w + d for d, k in (("d_S", "y_S"), ("d_H", "y_H"), ("d_D", "y_D")) if k in keys)

    def bundle(*vals):
        return dict(zip(("N_Pop", "p_I", "p_SI", "p_HS", "p_DH")
                        + tuple(d for d, k in (("d_S", "y_S"), ("d_H", "y_H"), ("d_D", "y_D")) if k in keys), vals))

    def loglik(b, *streams):
        by_key = dict(zip(keys, streams))
        p = b["p_I"]
        batch = np.shape(p)[:-1]
        out = np.zeros(batch)
        for idx in np.ndindex(*batch) if batch else [()]:
            tot = 0.0
            for a in range(config.ages.count):
                def pick(name, default=1.0):
                    return float(np.asarray(b[name])[idx + (a,)]) if name in b else default
                params = SeverityParams(pick("p_I"), pick("p_SI"), pick("p_HS"), 0.0, pick("p_DH"),
                                        pick("d_S"), pick("d_H"), pick("d_D"))

                def obs(key):
                    s = by_key.get(key)
                    if s is None:
                        return None, None
                    m = s.age_index == a
                    if not m.any():
                        return None, None
                    return float(s.value[m][0]), (float(s.denominator[m][0])
                                                  if s.kind is StreamKind.PointEstimateLogScale else None)

                ys, ys_sd = obs("y_S")
                if ys_sd is None and spec.symptomatic == "lognormal" and ys is not None:
                    raise ConfigurationError("lognormal symptomatic model needs a PointEstimateLogScale stream")
                tot += nested_pyramid_loglik(params, int(np.asarray(b["N_Pop"])[a]), ys,
                                             obs("y_H")[0], obs("y_D")[0], ys_sd)
            out[idx] = tot
        return float(out) if not batch else out

    nodes.append(FunctionalNode(w + "nested", parents, bundle, "age"))
    nodes.append(DataNode(w + "pyramid", w + "nested", Custom(fn=loglik), tuple(w + k for k in keys), "age"))


# --- reporting ---------------------------------------------------------------------------

SUMMARY_NODES = ("p_I", "p_SI", "p_HS", "p_ICUH", "p_DH", "d_S", "d_H", "d_D",
                 "N_I", "N_S", "N_H", "N_ICU", "N_D", "CHR", "CIR", "CFR", "sCFR")


def summarize_severity(graph: ModelGraph, draws: Mapping[str, np.ndarray], ages: AgeStructure,
                       nodes: Sequence[str] = SUMMARY_NODES) -> list[dict[str, Any]]:
    """Posterior median and 95% interval rows (node, age, wave, median, q2.5, q97.5)."""
    values = graph.evaluate(draws)
    rows = []
    for name in graph.order:
        if "." not in name:
            continue
        wave, base = name.split(".", 1)
        if base not in nodes or name not in values:
            continue
        v = np.asarray(values[name], dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        for a in range(v.shape[-1]):
            q = np.quantile(v[:, a], [0.5, 0.025, 0.975])
            rows.append({"node": base, "age": ages.labels[a] if v.shape[-1] == ages.count else "all",
                         "wave": wave[1:], "median": q[0], "q2.5": q[1], "q97.5": q[2]})
    return rows


def write_summary_csv(rows: Sequence[Mapping[str, Any]], path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, ["node", "age", "wave", "median", "q2.5", "q97.5"], lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{v:.6g}" if isinstance(v, float) else v) for k, v in r.items()})
    return path
