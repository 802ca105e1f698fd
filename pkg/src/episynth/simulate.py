"""Forward simulation of synthetic surveillance data and a brute-force immigration-death oracle.

Every generator takes an explicit seed and returns the simulated streams
together with the parameter values (ground truth) that produced them.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Mapping, Sequence

import numba
import numpy as np

from episynth.core.streams import AgeStructure, DataStream, StreamKind, load_manifest, write_stream_csv
from episynth.errors import ConfigurationError
from episynth.severity import SeverityParams, pyramid_counts
from episynth.transmission import TransmissionScenario, build_transmission_graph

FIXTURE_VERSION = 1


def _age_stream(name, kind, values, denominators=None, times=None):
    values = np.asarray(values, dtype=float)
    A = values.shape[-1]
    if values.ndim == 1:
        t = np.zeros(A, dtype=int) if times is None else np.full(A, times)
        a = np.arange(A)
        d = None if denominators is None else np.broadcast_to(denominators, (A,))
        return DataStream(name, kind, t, a, values, d)
    T = values.shape[0]
    tt, aa = np.meshgrid(np.arange(T) if times is None else np.asarray(times), np.arange(A), indexing="ij")
    d = None if denominators is None else np.broadcast_to(denominators, values.shape).ravel()
    return DataStream(name, kind, tt.ravel(), aa.ravel(), values.ravel(), d)


# --- severity -----------------------------------------------------------------------------------

def simulate_severity(params: SeverityParams, N_Pop, seed: int, sero_n: float | Sequence[float] = 500,
                      prefix: str = "w1.", symptomatic: str = "binomial", y_S_sd: float = 0.28,
                      streams: Sequence[str] | None = None) -> tuple[dict[str, DataStream], dict[str, Any]]:
    """Binomial observations at every severity data node given the floor-based pyramid counts.

    Detected counts are ``y_l ~ Bin(N_l, d_l)``; the ICU and death outcomes
    among detected hospitalisations are ``Bin(y_H, p_ICU|H)`` and
    ``Bin(y_H, p_D|H)``. With ``symptomatic="lognormal"`` the symptomatic
    stream is a log-scale estimate ``log(d_S N_S) + y_S_sd * eps``.
    """
    params.check()
    rng = np.random.default_rng(seed)
    N_Pop = np.asarray(N_Pop, dtype=float)
    A = N_Pop.shape[-1]
    st = pyramid_counts(params, N_Pop)

    def full(x):
        return np.broadcast_to(np.asarray(x, dtype=float), (A,))

    n_sero = full(sero_n)
    out: dict[str, np.ndarray] = {}
    out["sero_baseline"] = rng.binomial(n_sero.astype(int), full(params.pi_baseline))
    out["sero_post"] = rng.binomial(n_sero.astype(int), np.clip(full(params.pi), 0, 1))
    if symptomatic == "lognormal":
        with np.errstate(divide="ignore"):
            y_s = np.log(full(params.d_S) * st.N_S) + y_S_sd * rng.standard_normal(A)
    else:
        y_s = rng.binomial(st.N_S.astype(np.int64), full(params.d_S))
    y_h = rng.binomial(st.N_H.astype(np.int64), full(params.d_H))
    y_d = rng.binomial(st.N_D.astype(np.int64), full(params.d_D))
    y_icu_h = rng.binomial(y_h, full(params.p_ICUH))
    y_d_h = rng.binomial(y_h, full(params.p_DH))

    made = {
        "sero_baseline": _age_stream(prefix + "sero_baseline", StreamKind.SeroPrevalence,
                                     out["sero_baseline"], n_sero),
        "sero_post": _age_stream(prefix + "sero_post", StreamKind.SeroPrevalence, out["sero_post"], n_sero),
        "y_S": (_age_stream(prefix + "y_S", StreamKind.PointEstimateLogScale, y_s, np.full(A, y_S_sd))
                if symptomatic == "lognormal" else _age_stream(prefix + "y_S", StreamKind.GPConsultations, y_s)),
        "y_H": _age_stream(prefix + "y_H", StreamKind.HospAdmissions, y_h),
        "y_D": _age_stream(prefix + "y_D", StreamKind.Deaths, y_d),
        "y_ICU_H": _age_stream(prefix + "y_ICU_H", StreamKind.ICUAdmissions, y_icu_h, y_h),
        "y_D_H": _age_stream(prefix + "y_D_H", StreamKind.Deaths, y_d_h, y_h),
    }
    keep = made.keys() if streams is None else streams
    data = {made[k].name: made[k] for k in keep}
    truth = {"seed": seed, "N_Pop": N_Pop.tolist(),
             "params": {k: np.asarray(v, dtype=float).tolist() for k, v in asdict(params).items()},
             "counts": {k: np.asarray(v).tolist() for k, v in asdict(st).items()}}
    return data, truth


# --- transmission -------------------------------------------------------------------------------

@dataclass(frozen=True)
class Shock:
    """Step change of the consultation probability to ``p_G`` from ``day`` onwards."""

    day: int
    p_G: float


def simulate_transmission(scenario: TransmissionScenario, theta: Mapping[str, Any], seed: int,
                          n_swabs: float = 100, sero_days: Sequence[int] = (),
                          sero_n: float = 500, shock: Shock | None = None,
                          eta: float | None = None) -> tuple[dict[str, DataStream], dict[str, Any]]:
    """Deterministic trajectory plus stochastic observations on each configured stream.

    GP and confirmed counts are negative binomial with size ``eta``
    (``np.inf`` gives Poisson draws), positivity is binomial out of
    ``n_swabs`` per day and age, sero-prevalence binomial out of ``sero_n``
    on ``sero_days``. A ``shock`` overrides the true consultation
    probability from its day onwards, whatever the scenario's phases.
    """
    rng = np.random.default_rng(seed)
    graph = build_transmission_graph(scenario)
    th = {k: np.asarray(v, dtype=float) for k, v in theta.items()}
    for k, v in scenario.fixed.items():
        th.setdefault(k, np.asarray(v, dtype=float))
    missing = [n for n in graph.param_names if n not in th]
    if missing:
        raise ConfigurationError(f"theta is missing {missing}")
    vals = graph.evaluate(th)
    if int(np.asarray(vals["trajectory"]["status"])) != 0:
        raise ConfigurationError("true parameters give an invalid epidemic regime")
    n_sym = np.asarray(vals["N_Sym"])
    p_g = np.asarray(th["p_G"], dtype=float).reshape(-1)[scenario.pG_phase].copy()
    if shock is not None:
        p_g[shock.day:] = shock.p_G
    n_g = n_sym * p_g[:, None]
    n_b = np.asarray(vals["N_B"])
    eta = scenario.eta if eta is None else eta

    def nb(mean, size):
        if np.isinf(size):
            return rng.poisson(mean)
        return rng.negative_binomial(size, size / (size + mean))

    data: dict[str, DataStream] = {}
    truth_series = {"N_Sym": n_sym, "N_G": n_g, "N_B": n_b, "S": np.asarray(vals["S_daily"]),
                    "p_G_daily": p_g}
    if "gp" in scenario.streams:
        data["gp"] = _age_stream("gp", StreamKind.GPConsultations, nb(n_b + n_g, eta))
    if "positivity" in scenario.streams:
        swabs = np.full(n_g.shape, float(n_swabs))
        pos = rng.binomial(swabs.astype(int), n_g / (n_b + n_g))
        data["positivity"] = _age_stream("positivity", StreamKind.ViroPositivity, pos, swabs)
    if "confirmed" in scenario.streams:
        n_c = n_sym * float(th["p_C"])
        truth_series["N_C"] = n_c
        eta_c = eta if scenario.eta_C is None else scenario.eta_C
        data["confirmed"] = _age_stream("confirmed", StreamKind.ConfirmedCases, nb(n_c, eta_c))
    if "sero" in scenario.streams and len(sero_days):
        days = np.asarray(sero_days, dtype=int)
        prev = 1.0 - truth_series["S"][days] / scenario.N
        n = np.full(prev.shape, float(sero_n))
        data["sero"] = _age_stream("sero", StreamKind.SeroPrevalence,
                                   rng.binomial(n.astype(int), np.clip(prev, 0, 1)), n, times=days)
    R0 = (1 + float(th["phi"]) * scenario.d_L) * (1 + float(th["phi"]) * float(th["d_I"]))
    truth = {"seed": seed, "theta": {k: np.asarray(v).tolist() for k, v in th.items()}, "R0": R0,
             "shock": None if shock is None else asdict(shock),
             "series": {k: np.asarray(v).tolist() for k, v in truth_series.items()}}
    return data, truth


# --- immigration-death oracle ---------------------------------------------------------------------

@numba.njit(cache=True)
def _gillespie(lam, mu, dt, start, seed_arr, out, last_zero):
    R, T1 = out.shape
    T = T1 - 1
    for r in range(R):
        np.random.seed(seed_arr[r])
        n = start[r]
        t = 0.0
        out[r, 0] = n
        lz = 0.0 if n == 0 else np.nan
        for k in range(T):
            end = (k + 1) * dt
            while True:
                rate = lam[k] + mu * n
                if rate <= 0.0:
                    t = end
                    break
                wait = np.random.exponential(1.0 / rate)
                if t + wait >= end:
                    # memorylessness: restart the clock at the boundary
                    t = end
                    break
                t += wait
                if np.random.random() * rate < lam[k]:
                    n += 1
                else:
                    n -= 1
                    if n == 0:
                        lz = t
            out[r, k + 1] = n
        last_zero[r] = lz if n == 0 else np.nan


@dataclass
class ImmigrationDeathSample:
    times: np.ndarray
    prevalence: np.ndarray
    last_zero: np.ndarray

    @property
    def mean(self) -> np.ndarray:
        return self.prevalence.mean(axis=0)

    @property
    def se(self) -> np.ndarray:
        return self.prevalence.std(axis=0, ddof=1) / np.sqrt(len(self.prevalence))


def brute_force_immigration_death(lam, mu: float, replicates: int, seed: int, start: int = 0,
                                  start_mean: float | None = None, dt: float = 1.0,
                                  min_replicates: int = 10_000) -> ImmigrationDeathSample:
    """Event-driven simulation with exponential waiting times.

    ``lam`` is piecewise constant on steps of length ``dt``; prevalence is
    recorded at the step boundaries. The initial count is ``start`` or, if
    ``start_mean`` is given, Poisson with that mean. ``last_zero`` is the
    time the process last dropped to zero (NaN if it ends positive).
    """
    if replicates < min_replicates:
        raise ConfigurationError(f"use at least {min_replicates} replicates")
    if not mu > 0:
        raise ConfigurationError("exit rate mu must be positive")
    lam = np.asarray(lam, dtype=float)
    if np.any(lam < 0):
        raise ConfigurationError("arrival rates must be nonnegative")
    rng = np.random.default_rng(seed)
    starts = (rng.poisson(start_mean, replicates) if start_mean is not None
              else np.full(replicates, int(start))).astype(np.int64)
    seeds = rng.integers(0, 2**31 - 1, replicates)
    out = np.empty((replicates, len(lam) + 1), dtype=np.int64)
    lz = np.empty(replicates)
    _gillespie(lam, float(mu), float(dt), starts, seeds, out, lz)
    return ImmigrationDeathSample(dt * np.arange(len(lam) + 1), out, lz)


# --- fixtures -----------------------------------------------------------------------------------

def _digest(directory: Path, files: Sequence[str]) -> str:
    h = hashlib.sha256()
    for f in sorted(files):
        h.update(f.encode())
        h.update((directory / f).read_bytes())
    return h.hexdigest()


def write_fixture(directory: str | Path, streams: Mapping[str, DataStream], truth: Mapping[str, Any],
                  ages: AgeStructure | None = None, extra: Mapping[str, Any] | None = None) -> Path:
    """Write stream CSVs, ``truth.json`` and a ``manifest.json`` carrying a content hash."""
    d = Path(directory) / f"v{FIXTURE_VERSION}"
    d.mkdir(parents=True, exist_ok=True)
    files = []
    entries = []
    for name, s in streams.items():
        fname = f"{name}.csv"
        write_stream_csv(s, d / fname)
        files.append(fname)
        entries.append({"name": name, "path": fname})
    (d / "truth.json").write_text(json.dumps(truth, indent=1, sort_keys=True) + "\n")
    files.append("truth.json")
    manifest = {"version": FIXTURE_VERSION, "streams": entries, "hash": _digest(d, files)}
    if ages is not None:
        manifest["ages"] = {"labels": list(ages.labels)}
    if extra:
        manifest.update(extra)
    path = d / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return path


def verify_fixture(manifest_path: str | Path):
    """Reload a fixture and check its hash; raises ``ConfigurationError`` on drift."""
    path = Path(manifest_path)
    raw = json.loads(path.read_text())
    files = [e["path"] for e in raw["streams"]] + ["truth.json"]
    if _digest(path.parent, files) != raw.get("hash"):
        raise ConfigurationError(f"fixture {path.parent} changed since it was written (hash mismatch)")
    manifest = load_manifest(path)
    truth = json.loads((path.parent / "truth.json").read_text())
    return manifest, truth
