"""Age-structured discrete-time SEIR transmission with Reed-Frost infection.

The deterministic dynamics are stepped on a ``delta_t`` grid (half a day by
default). New infections are convolved with an infection-to-event delay to
give symptomatic, GP-consultation and confirmed-case series, which enter a
four-stream observation model together with a regression description of
non-influenza (background) consultations.

Trajectories for many parameter vectors are computed in one compiled loop,
so chains and particle ensembles share the same code path.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
from numba import njit
from scipy import stats

from episynth.core.graph import BasicNode, ConstantNode, DataNode, FunctionalNode, ModelGraph
from episynth.core.likelihoods import Binomial, NegBinomial
from episynth.core.priors import PriorSpec
from episynth.core.streams import AgeStructure
from episynth.errors import ConfigurationError, DomainError, RegimeError, StepSizeError

OK, BAD_REGIME, BAD_STEP = 0, 1, 2


# --- scalar building blocks ------------------------------------------------------------

def R0_from_growth_rate(phi, d_L, d_I):
    """SEIR growth relation ``R0 = (1 + phi d_L)(1 + phi d_I)``."""
    phi = np.asarray(phi, dtype=float)
    d_L = np.asarray(d_L, dtype=float)
    d_I = np.asarray(d_I, dtype=float)
    lower = -1.0 / np.maximum(d_L, d_I)
    if np.any(phi <= lower) or np.any(d_I <= 0) or np.any(d_L < 0):
        raise DomainError("growth rate outside the domain where R0 > 0")
    out = (1.0 + phi * d_L) * (1.0 + phi * d_I)
    return float(out) if out.ndim == 0 else out


def growth_rate_from_R0(R0: float, d_L: float, d_I: float) -> float:
    """Invert the growth relation (the root with ``R0 > 0``)."""
    if R0 <= 0:
        raise DomainError("R0 must be positive")
    if d_L == 0:
        return (R0 - 1.0) / d_I
    # d_L d_I phi^2 + (d_L + d_I) phi + 1 - R0 = 0
    a, b, c = d_L * d_I, d_L + d_I, 1.0 - R0
    return (-b + np.sqrt(b * b - 4 * a * c)) / (2 * a)


def force_of_infection(I, M, R0: float, d_I: float, dt: float, dt_inside: bool = True):
    """Reed-Frost per-interval infection probability for each age group.

    ``lambda_a = 1 - prod_b (1 - dt M_ab R0 / d_I) ** I_b`` with the step
    inside the per-contact probability; ``dt_inside=False`` applies it to the
    whole escape term instead.
    """
    I = np.asarray(I, dtype=float)
    M = np.asarray(M, dtype=float)
    rate = M * (R0 / d_I)
    per_contact = rate * dt if dt_inside else rate
    if np.any(per_contact >= 1) or np.any(per_contact < 0):
        raise RegimeError("per-contact infection probability outside [0, 1); reduce delta_t or R0")
    log_escape = np.log1p(-per_contact) @ I
    lam = -np.expm1(log_escape)
    return lam if dt_inside else dt * lam


def step_dynamics(S, E, I, R, M, R0: float, d_I: float, d_L: float, dt: float, dt_inside: bool = True):
    """One Euler step; returns ``(S, E, I, R, new_infections)``."""
    if dt > d_L or dt > d_I:
        raise StepSizeError(f"delta_t={dt} exceeds a mean sojourn time; use a smaller delta_t")
    lam = force_of_infection(I, M, R0, d_I, dt, dt_inside)
    new = lam * S
    leave_E = (dt / d_L) * E
    leave_I = (dt / d_I) * I
    out = (S - new, E + new - leave_E, I + leave_E - leave_I, R + leave_I)
    if any(np.any(x < -1e-9) for x in out):
        raise StepSizeError("negative compartment; use a smaller delta_t")
    return (*out, new)


@njit(cache=True)
def _seir_kernel(phi, I0, d_I, mult, period, C, N, w_init, d_L, dt, dt_inside,
                 S_out, E_out, I_out, R_out, D_out, status):
    B = phi.shape[0]
    K = D_out.shape[1]
    A = N.shape[0]
    log_escape = np.empty((A, A))
    for j in range(B):
        status[j] = 0
        dI = d_I[j]
        ph = phi[j]
        if not (dI > 0.0) or not (I0[j] > 0.0) or dt > dI or dt > d_L:
            status[j] = 2
            continue
        if not (ph * max(d_L, dI) > -1.0):
            status[j] = 1
            continue
        R0 = (1.0 + ph * d_L) * (1.0 + ph * dI)
        gE = (d_L / dI) * (1.0 + ph * dI)
        for a in range(A):
            Ia = I0[j] * w_init[a]
            Ea = Ia * gE
            I_out[j, 0, a] = Ia
            E_out[j, 0, a] = Ea
            S_out[j, 0, a] = N[a] - Ea - Ia
            R_out[j, 0, a] = 0.0
            if S_out[j, 0, a] < 0.0:
                status[j] = 1
        if status[j] != 0:
            continue
        current = -1
        for k in range(K):
            p = period[k]
            if p != current:
                current = p
                scale = mult[j, p] * R0 / dI
                for a in range(A):
                    for b in range(A):
                        q = C[a, b] * scale
                        if dt_inside:
                            q = q * dt
                        if q >= 1.0 or q < 0.0:
                            status[j] = 1
                        else:
                            log_escape[a, b] = np.log1p(-q)
                if status[j] != 0:
                    break
            bad = False
            for a in range(A):
                acc = 0.0
                for b in range(A):
                    acc += log_escape[a, b] * I_out[j, k, b]
                lam = -np.expm1(acc)
                if not dt_inside:
                    lam = dt * lam
                S = S_out[j, k, a]
                E = E_out[j, k, a]
                I = I_out[j, k, a]
                new = lam * S
                lE = (dt / d_L) * E
                lI = (dt / dI) * I
                S_out[j, k + 1, a] = S - new
                E_out[j, k + 1, a] = E + new - lE
                I_out[j, k + 1, a] = I + lE - lI
                R_out[j, k + 1, a] = R_out[j, k, a] + lI
                D_out[j, k, a] = new
                if S - new < -1e-9 or E + new - lE < -1e-9 or I + lE - lI < -1e-9:
                    bad = True
            if bad:
                status[j] = 2
                break


# --- delay distribution and convolution -------------------------------------------------

def discretize_gamma(mean: float, sd: float, dt: float, n: int) -> np.ndarray:
    """Mass of a gamma delay in each interval ``[k dt, (k+1) dt)``, k < n."""
    shape = (mean / sd) ** 2
    edges = stats.gamma.cdf(np.arange(n + 1) * dt, shape, scale=mean / shape)
    return np.diff(edges)


def discretize_exponential(mean: float, dt: float, n: int) -> np.ndarray:
    edges = -np.expm1(-np.arange(n + 1) * dt / mean)
    return np.diff(edges)


def delay_pmf(incubation_mean: float = 1.6, incubation_sd: float = 0.8, report_mean: float = 1.0,
              dt: float = 0.5, max_lag: int = 28) -> np.ndarray:
    """Infection-to-event delay: discretised gamma incubation plus exponential reporting lag.

    Truncated at ``max_lag`` steps and renormalised.
    """
    if min(incubation_mean, incubation_sd, report_mean) <= 0:
        raise ConfigurationError("delay parameters must be positive")
    g = discretize_gamma(incubation_mean, incubation_sd, dt, max_lag)
    e = discretize_exponential(report_mean, dt, max_lag) if report_mean > 0 else np.r_[1.0]
    f = np.convolve(g, e)[:max_lag]
    return f / f.sum()


@njit(cache=True)
def _convolve_kernel(x, f, out):
    B, K, A = x.shape
    L = f.shape[0]
    for j in range(B):
        for v in range(K):
            for lag in range(min(L, v + 1)):
                m = f[lag]
                for a in range(A):
                    out[j, v, a] += m * x[j, v - lag, a]


def convolve_endpoint(series, f, scale=1.0):
    """``out[v] = scale[v] * sum_{k <= v} series[k] f[v - k]`` along the time axis.

    ``series`` has shape ``(..., K, A)`` (or ``(K,)``); the loop runs over
    lags, so the cost is ``O(K * len(f))``. A delay longer than the series is
    truncated and renormalised with a warning.
    """
    x = np.asarray(series, dtype=float)
    f = np.asarray(f, dtype=float)
    if np.any(f < 0) or abs(f.sum() - 1.0) > 1e-9:
        raise ConfigurationError("delay pmf must be nonnegative and sum to 1")
    vector = x.ndim == 1
    if vector:
        x = x[:, None]
    K = x.shape[-2]
    if len(f) > K:
        warnings.warn(f"delay pmf ({len(f)} lags) longer than series ({K}); truncating", RuntimeWarning)
        f = f[:K] / f[:K].sum()
    flat = np.ascontiguousarray(x.reshape((-1,) + x.shape[-2:]))
    out = np.zeros_like(flat)
    _convolve_kernel(flat, np.ascontiguousarray(f), out)
    out = out.reshape(x.shape)
    if vector:
        out = out[:, 0]
    return np.asarray(scale, dtype=float) * out if np.ndim(scale) else float(scale) * out


def aggregate(series, steps_per_day: int):
    """Sum a step-grid series ``(..., K, A)`` into whole days ``(..., K // spd, A)``."""
    x = np.asarray(series, dtype=float)
    K = x.shape[-2]
    days = K // steps_per_day
    x = x[..., :days * steps_per_day, :]
    return x.reshape(x.shape[:-2] + (days, steps_per_day, x.shape[-1])).sum(axis=-2)


# --- scenario ------------------------------------------------------------------------------------

@dataclass
class TransmissionScenario:
    """Fixed structure of a transmission model (everything that is not inferred).

    Mixing is ``multiplier_p * C`` with ``C`` rescaled so that
    ``diag(N) C`` has spectral radius one; periods start at
    ``mixing_breakpoints`` (days). Multipliers listed in ``free_mixing`` are
    estimated, the others stay at ``mixing_multipliers``.
    """

    ages: AgeStructure
    N: Sequence[float]
    days: int
    delta_t: float = 0.5
    d_L: float = 2.0
    contact: Any = None
    mixing_breakpoints: Sequence[float] = ()
    mixing_multipliers: Sequence[float] | None = None
    free_mixing: Sequence[int] = ()
    init_weights: Any = "population"
    incubation_mean: float = 1.6
    incubation_sd: float = 0.8
    report_mean: float = 1.0
    max_lag: int = 28
    pG_breakpoints: Sequence[float] = ()
    background_degree: int = 2
    eta: float = 50.0
    eta_C: float | None = None
    dt_inside: bool = True
    streams: Sequence[str] = ("confirmed", "gp", "positivity", "sero")
    priors: dict[str, PriorSpec] = field(default_factory=dict)
    fixed: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        A = self.ages.count
        self.N = self.ages.check(self.N, "N")
        if np.any(self.N <= 0):
            raise ConfigurationError("population sizes must be positive")
        if self.days < 1:
            raise ConfigurationError("days must be >= 1")
        if self.delta_t > self.d_L:
            raise StepSizeError("delta_t exceeds the latent period")
        self.spd = int(round(1.0 / self.delta_t))
        if abs(self.spd * self.delta_t - 1.0) > 1e-12:
            raise ConfigurationError("delta_t must divide one day")
        self.K = self.days * self.spd
        C = np.ones((A, A)) if self.contact is None else np.asarray(self.contact, dtype=float)
        if C.shape != (A, A) or np.any(C < 0):
            raise ConfigurationError("contact matrix must be A x A and nonnegative")
        rho = np.max(np.abs(np.linalg.eigvals(self.N[:, None] * C)))
        if rho <= 0:
            raise ConfigurationError("contact matrix has zero spectral radius")
        self.C = C / rho
        bps = np.asarray(self.mixing_breakpoints, dtype=float)
        if np.any(np.diff(bps) <= 0):
            raise ConfigurationError("mixing breakpoints must increase")
        self.n_periods = len(bps) + 1
        mults = np.ones(self.n_periods) if self.mixing_multipliers is None else np.asarray(
            self.mixing_multipliers, dtype=float)
        if mults.shape != (self.n_periods,) or np.any(mults < 0):
            raise ConfigurationError("need one nonnegative mixing multiplier per period")
        self.mixing_multipliers = mults
        self.free_mixing = tuple(int(i) for i in self.free_mixing)
        step_days = np.arange(self.K) * self.delta_t
        self.period = np.searchsorted(bps, step_days, side="right").astype(np.int64)
        self.weights = self._init_weights()
        self.f = delay_pmf(self.incubation_mean, self.incubation_sd, self.report_mean,
                           self.delta_t, self.max_lag)
        pg = np.asarray(self.pG_breakpoints, dtype=float)
        self.n_pG = len(pg) + 1
        self.pG_phase = np.searchsorted(pg, np.arange(self.days), side="right")
        self.design = background_design(self.days, A, self.background_degree)
        unknown = set(self.streams) - {"confirmed", "gp", "positivity", "sero"}
        if unknown:
            raise ConfigurationError(f"unknown transmission streams {sorted(unknown)}")

    def _init_weights(self) -> np.ndarray:
        w = self.init_weights
        if isinstance(w, str):
            if w == "population":
                w = self.N / self.N.sum()
            elif w == "eigenvector":
                vals, vecs = np.linalg.eig(self.N[:, None] * self.C)
                v = np.abs(np.real(vecs[:, np.argmax(np.real(vals))]))
                w = v / v.sum()
            else:
                raise ConfigurationError(f"unknown initial weights {w!r}")
        w = np.asarray(w, dtype=float)
        if w.shape != (self.ages.count,) or np.any(w < 0) or abs(w.sum() - 1) > 1e-9:
            raise ConfigurationError("initial weights must be nonnegative and sum to 1")
        return w

    def mixing(self, period: int, multipliers=None) -> np.ndarray:
        m = self.mixing_multipliers if multipliers is None else multipliers
        return m[period] * self.C

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "TransmissionScenario":
        d = dict(d)
        for key in ("N", "days"):
            if key not in d:
                raise ConfigurationError(f"manifest field missing: {key}")
        ages = AgeStructure(tuple(d.pop("ages", {}).get("labels", [f"a{i}" for i in range(len(d["N"]))])))
        priors = {k: PriorSpec.from_dict(v) for k, v in d.pop("priors", {}).items()}
        known = set(cls.__dataclass_fields__) - {"ages", "priors"}
        extra = set(d) - known
        if extra:
            raise ConfigurationError(f"unknown scenario fields {sorted(extra)}")
        return cls(ages=ages, priors=priors, **d)


def background_design(days: int, A: int, degree: int = 2) -> np.ndarray:
    """Design ``X[t, a, :]``: age indicators then centred time powers 1..degree."""
    tau = (np.arange(days) + 0.5) / days - 0.5
    X = np.zeros((days, A, A + degree))
    X[:, :, :A] = np.eye(A)[None, :, :]
    for j in range(degree):
        X[:, :, A + j] = (tau ** (j + 1))[:, None]
    return X


def background_counts(beta, design) -> np.ndarray:
    """``N_B = exp(X beta)`` with batch axes on ``beta``."""
    beta = np.asarray(beta, dtype=float)
    return np.exp(np.einsum("tap,...p->...ta", design, beta))


# --- trajectories -------------------------------------------------------------------------

@dataclass
class TransmissionState:
    S: np.ndarray
    E: np.ndarray
    I: np.ndarray
    R: np.ndarray
    new_infections: np.ndarray
    N: np.ndarray
    status: np.ndarray


def _batch(x, B):
    return np.ascontiguousarray(np.broadcast_to(np.asarray(x, dtype=float), (B,)))


def simulate_dynamics(scenario: TransmissionScenario, phi, I0, d_I, multipliers=None,
                      strict: bool = True) -> TransmissionState:
    """Deterministic trajectories for one or many ``(phi, I0, d_I, m)``.

    Arrays have shape ``(batch..., K+1, A)`` (compartments) and
    ``(batch..., K, A)`` (new infections per step). With ``strict`` an invalid
    regime raises; otherwise the affected batch entries are filled with -1
    and flagged in ``status``.
    """
    batch_shape = np.broadcast_shapes(np.shape(phi), np.shape(I0), np.shape(d_I))
    if multipliers is not None:
        batch_shape = np.broadcast_shapes(batch_shape, np.shape(multipliers)[:-1])
    B = int(np.prod(batch_shape)) if batch_shape else 1
    ph = _batch(np.broadcast_to(phi, batch_shape).ravel(), B)
    i0 = _batch(np.broadcast_to(I0, batch_shape).ravel(), B)
    di = _batch(np.broadcast_to(d_I, batch_shape).ravel(), B)
    P = scenario.n_periods
    if multipliers is None:
        mult = np.broadcast_to(scenario.mixing_multipliers, (B, P))
    else:
        mult = np.broadcast_to(np.asarray(multipliers, dtype=float), batch_shape + (P,)).reshape(B, P)
    mult = np.ascontiguousarray(mult, dtype=float)
    A, K = scenario.ages.count, scenario.K
    S = np.empty((B, K + 1, A))
    E = np.empty_like(S)
    I = np.empty_like(S)
    R = np.empty_like(S)
    D = np.empty((B, K, A))
    status = np.zeros(B, dtype=np.int64)
    _seir_kernel(ph, i0, di, mult, scenario.period, scenario.C, scenario.N, scenario.weights,
                 float(scenario.d_L), float(scenario.delta_t), bool(scenario.dt_inside),
                 S, E, I, R, D, status)
    bad = status != OK
    if bad.any():
        if strict:
            if np.any(status == BAD_STEP):
                raise StepSizeError("negative compartment or delta_t above a sojourn time; use a smaller delta_t")
            raise RegimeError("parameters outside the valid Reed-Frost regime")
        for arr in (S, E, I, R, D):
            arr[bad] = -1.0
    shape = lambda arr: arr.reshape(batch_shape + arr.shape[1:])  # noqa: E731
    return TransmissionState(shape(S), shape(E), shape(I), shape(R), shape(D), scenario.N,
                             status.reshape(batch_shape))


def initialize_state(scenario: TransmissionScenario, I0: float, phi: float, d_I: float):
    """``(S, E, I)`` at ``t0`` under initial exponential growth at rate ``phi``."""
    if I0 <= 0:
        raise DomainError("I0 must be positive")
    I = I0 * scenario.weights
    E = I * (scenario.d_L / d_I) * (1.0 + phi * d_I)
    S = scenario.N - E - I
    if np.any(S < 0):
        raise DomainError("initial infections exceed the population of an age group")
    return S, E, I


@dataclass
class Endpoints:
    symptomatic: np.ndarray   # daily delayed infections times p_Sym, (..., days, A)
    gp: np.ndarray            # N_G
    background: np.ndarray    # N_B
    confirmed: np.ndarray     # N_C
    susceptible: np.ndarray   # S at the start of each day, (..., days + 1, A)


def endpoints(scenario: TransmissionScenario, theta: Mapping[str, Any]) -> Endpoints:
    """Expected daily endpoint series for parameter dict(s) ``theta``."""
    values = build_transmission_graph(scenario).evaluate(_complete(scenario, theta))
    return Endpoints(values["N_Sym"], values["N_G"], values["N_B"], values["N_C"], values["S_daily"])


def _complete(scenario, theta):
    out = dict(theta)
    for k, v in scenario.fixed.items():
        out.setdefault(k, v)
    return out


# --- model graph --------------------------------------------------------------------------

DEFAULT_PRIORS = {
    "phi": PriorSpec("normal", {"mean": 0.1, "sd": 0.1}),
    "I0": PriorSpec("lognormal", {"meanlog": np.log(50.0), "sdlog": 1.5}),
    "d_I": PriorSpec("gamma", {"shape": 8.0, "rate": 4.0}),
    "p_Sym": PriorSpec("beta", {"a": 6.0, "b": 6.0}),
    "p_C": PriorSpec("beta", {"a": 2.0, "b": 18.0}),
    "p_G": PriorSpec("beta", {"a": 6.0, "b": 14.0}),
    "beta_B": PriorSpec("normal", {"mean": 0.0, "sd": 5.0}),
    "m": PriorSpec("lognormal", {"meanlog": 0.0, "sdlog": 0.5}),
}


def build_transmission_graph(scenario: TransmissionScenario) -> ModelGraph:
    """Graph with basic nodes phi, I0, d_I, p_Sym, p_C, p_G, beta_B (and m)."""
    A = scenario.ages.count
    nB = A + scenario.background_degree
    prior = lambda k: scenario.priors.get(k, DEFAULT_PRIORS[k])  # noqa: E731
    sizes = {"phi": None, "I0": None, "d_I": None, "p_Sym": None, "p_C": None,
             "p_G": scenario.n_pG, "beta_B": nB}
    if scenario.free_mixing:
        sizes["m"] = len(scenario.free_mixing)
    needed = {"phi", "I0", "d_I", "p_Sym", "beta_B", "p_G"}
    if "confirmed" in scenario.streams:
        needed.add("p_C")
    nodes: list = []
    for name, size in sizes.items():
        if name not in needed and name != "m":
            continue
        if name in scenario.fixed:
            nodes.append(ConstantNode(name, np.asarray(scenario.fixed[name], dtype=float)))
        else:
            nodes.append(BasicNode(name, prior(name), size))

    sc = scenario
    free = np.array(sc.free_mixing, dtype=int)

    def multipliers(m):
        m = np.asarray(m, dtype=float)
        out = np.broadcast_to(sc.mixing_multipliers, m.shape[:-1] + (sc.n_periods,)).copy()
        out[..., free] = m
        return out

    def trajectory(phi, I0, d_I, mult=None):
        with np.errstate(all="ignore"):
            st = simulate_dynamics(sc, phi, I0, d_I, mult, strict=False)
        inc = st.new_infections
        bad = st.status != OK
        if np.any(bad):
            # a large negative sentinel drives every downstream mean or probability out of its domain
            inc = np.where(bad[..., None, None], -1e12, inc)
        return {"S": st.S[..., ::sc.spd, :], "inc": inc, "status": st.status}

    def symptomatic(p_sym, traj):
        delayed = aggregate(convolve_endpoint(traj["inc"], sc.f), sc.spd)
        return np.asarray(p_sym, dtype=float)[..., None, None] * delayed

    def gp(n_sym, p_g):
        return n_sym * np.asarray(p_g, dtype=float)[..., sc.pG_phase][..., None]

    traj_parents: tuple[str, ...] = ("phi", "I0", "d_I")
    if sc.free_mixing:
        nodes.append(FunctionalNode("multipliers", ("m",), multipliers))
        traj_parents += ("multipliers",)
    nodes += [
        FunctionalNode("R0", ("phi", "d_I"),
                       lambda phi, d_I: (1.0 + phi * sc.d_L) * (1.0 + phi * d_I)),
        FunctionalNode("trajectory", traj_parents, trajectory),
        FunctionalNode("S_daily", ("trajectory",), lambda t: t["S"]),
        FunctionalNode("N_Sym", ("p_Sym", "trajectory"), symptomatic),
        FunctionalNode("N_G", ("N_Sym", "p_G"), gp),
        FunctionalNode("N_B", ("beta_B",), lambda b: background_counts(b, sc.design)),
        FunctionalNode("psi_G", ("N_B", "N_G"), lambda nb, ng: {"mean": nb + ng, "size": sc.eta}),
        FunctionalNode("psi_P", ("N_B", "N_G"), lambda nb, ng: ng / (nb + ng)),
        FunctionalNode("psi_S", ("S_daily",), lambda s: 1.0 - s / sc.N),
    ]
    if "confirmed" in sc.streams:
        eta_c = sc.eta if sc.eta_C is None else sc.eta_C
        nodes += [
            FunctionalNode("N_C", ("N_Sym", "p_C"), lambda ns, pc: ns * np.asarray(pc)[..., None, None]),
            FunctionalNode("psi_C", ("N_C",), lambda nc: {"mean": nc, "size": eta_c}),
            DataNode("confirmed", "psi_C", NegBinomial("time_age")),
        ]
    if "gp" in sc.streams:
        nodes.append(DataNode("gp", "psi_G", NegBinomial("time_age")))
    if "positivity" in sc.streams:
        nodes.append(DataNode("positivity", "psi_P", Binomial("time_age")))
    if "sero" in sc.streams:
        nodes.append(DataNode("sero", "psi_S", Binomial("time_age")))
    return ModelGraph(nodes)


def transmission_loglik(scenario: TransmissionScenario, theta: Mapping[str, Any], data,
                        graph: ModelGraph | None = None):
    """Sum of the confirmed, GP, positivity and sero-prevalence terms."""
    g = build_transmission_graph(scenario) if graph is None else graph
    return g.log_likelihood(_complete(scenario, theta), data)


def write_endpoints_csv(scenario: TransmissionScenario, ep: Endpoints, path: str | Path) -> Path:
    """Daily expected endpoints for one parameter vector (no batch axes)."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["day", "age", "symptomatic", "gp", "background", "confirmed", "susceptible"])
        for t in range(scenario.days):
            for a, label in enumerate(scenario.ages.labels):
                w.writerow([t, label] + [f"{float(x[t, a]):.6g}" for x in
                                         (ep.symptomatic, ep.gp, ep.background, ep.confirmed, ep.susceptible)])
    return path
