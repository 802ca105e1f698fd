import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose
from scipy import integrate, stats

from episynth.core.priors import PriorSpec
from episynth.core.streams import AgeStructure, DataStream, StreamKind
from episynth.errors import ConfigurationError, DomainError
from episynth.severity import (
    IcuProcessParams,
    SeverityConfig,
    SeverityParams,
    WaveSpec,
    build_severity_graph,
    case_severity_risks,
    icu_immigration_death_loglik,
    icu_lower_bound_term,
    icu_mean_prevalence,
    lognormal_point_estimate_term,
    nested_pyramid_loglik,
    pyramid_counts,
    severity_loglik_wave1,
    summarize_severity,
    wave3_hierarchical_prior,
    write_summary_csv,
)

probs = st.floats(0.0, 1.0)


def _params(p_I=0.3, p_SI=0.6, p_HS=0.05, p_ICUH=0.2, p_DH=0.1, **kw):
    return SeverityParams(p_I, p_SI, p_HS, p_ICUH, p_DH, **kw)


def test_pyramid_identity_chain():
    s = pyramid_counts(_params(1, 1, 1, 1, 1), 100)
    for level in ("N_I", "N_S", "N_H", "N_ICU", "N_D"):
        assert getattr(s, level) == 100


def test_pyramid_exact_halving():
    s = pyramid_counts(_params(0.5, 0.5), 1000)
    assert s.N_I == 500
    assert s.N_S == 250


def test_pyramid_matches_scalar_reimplementation():
    rng = np.random.default_rng(11)
    for _ in range(50):
        p = rng.uniform(size=5)
        s = pyramid_counts(_params(*p), 10**6)
        n_i = math.floor(p[0] * 10**6)
        n_s = math.floor(p[1] * n_i)
        n_h = math.floor(p[2] * n_s)
        expected = (n_i, n_s, n_h, math.floor(p[3] * n_h), math.floor(p[4] * n_h))
        got = (s.N_I, s.N_S, s.N_H, s.N_ICU, s.N_D)
        assert tuple(int(g) for g in got) == expected


@settings(max_examples=200, deadline=None)
@given(probs, probs, probs, probs, probs, st.integers(0, 10**7))
def test_pyramid_monotone(a, b, c, d, e, n):
    s = pyramid_counts(_params(a, b, c, d, e), n)
    assert n >= s.N_I >= s.N_S >= s.N_H >= s.N_ICU >= 0
    assert s.N_H >= s.N_D >= 0


def test_case_severity_risk_examples():
    r = case_severity_risks(_params(p_SI=1, p_HS=1, p_ICUH=1, p_DH=1))
    assert r.CHR == r.CIR == r.CFR == 1.0
    r = case_severity_risks(_params(p_SI=0.5, p_HS=0.1, p_DH=0.2))
    assert_allclose([r.CHR, r.CFR], [0.05, 0.01], rtol=1e-12)


@settings(max_examples=200, deadline=None)
@given(probs, probs, probs, st.floats(1e-6, 1.0))
def test_case_severity_identities(p_si, p_hs, p_icu, p_dh):
    r = case_severity_risks(_params(p_SI=p_si, p_HS=p_hs, p_ICUH=p_icu, p_DH=p_dh))
    assert r.CFR == p_dh * r.CHR
    assert r.CIR == p_icu * r.CHR
    assert r.CIR <= r.CHR and r.CFR <= r.CHR and r.sCFR >= r.CFR
    if min(r.CFR, r.CIR) > 1e-200:  # subnormal floats carry too few digits for a relative check
        assert_allclose(r.CIR / r.CFR, p_icu / p_dh, rtol=1e-12)


def _stream(name, kind, values, denominators=None):
    n = len(values)
    return DataStream(name, kind, np.zeros(n, int), np.arange(n), values, denominators)


def test_detection_terms_peak_at_full_detection():
    params = _params(d_S=1.0, d_H=1.0, d_D=1.0)
    state = pyramid_counts(params, np.array([5000.0]))
    base = {"y_H": _stream("y_H", StreamKind.HospAdmissions, [state.N_H[0]])}
    at = severity_loglik_wave1(params, state, base)
    assert at == 0.0
    below = {"y_H": _stream("y_H", StreamKind.HospAdmissions, [state.N_H[0] - 1])}
    assert severity_loglik_wave1(params, state, below) == -np.inf


def test_zero_deaths_with_zero_probability():
    params = _params(p_DH=0.0)
    state = pyramid_counts(params, np.array([1000.0]))
    data = {"y_D": _stream("y_D", StreamKind.Deaths, [0.0]),
            "y_D_H": _stream("y_D_H", StreamKind.Deaths, [0.0], [12.0])}
    assert severity_loglik_wave1(params, state, data) == 0.0


def test_overshooting_detection_is_rejected_not_raised():
    params = _params()
    state = pyramid_counts(params, np.array([1000.0]))
    data = {"y_H": _stream("y_H", StreamKind.HospAdmissions, [state.N_H[0] + 3])}
    assert severity_loglik_wave1(params, state, data) == -np.inf


def test_wave1_loglik_term_by_term():
    rng = np.random.default_rng(3)
    A = 3
    N_Pop = np.array([20000.0, 50000.0, 30000.0])
    params = SeverityParams(
        p_I=rng.uniform(0.1, 0.3, A), p_SI=rng.uniform(0.4, 0.8, A), p_HS=rng.uniform(0.01, 0.1, A),
        p_ICUH=rng.uniform(0.1, 0.3, A), p_DH=rng.uniform(0.05, 0.2, A),
        d_S=rng.uniform(0.2, 0.9, A), d_H=rng.uniform(0.5, 1.0, A), d_D=rng.uniform(0.5, 1.0, A),
        pi_baseline=rng.uniform(0.0, 0.1, A))
    state = pyramid_counts(params, N_Pop)
    n_sero = np.array([300.0, 400.0, 250.0])
    n_hout = np.array([40.0, 60.0, 50.0])
    y = {
        "sero_baseline": rng.binomial(n_sero.astype(int), params.pi_baseline),
        "sero_post": rng.binomial(n_sero.astype(int), params.pi),
        "y_S": rng.binomial(state.N_S.astype(int), params.d_S),
        "y_H": rng.binomial(state.N_H.astype(int), params.d_H),
        "y_D": rng.binomial(state.N_D.astype(int), params.d_D),
        "y_ICU_H": rng.binomial(n_hout.astype(int), params.p_ICUH),
        "y_D_H": rng.binomial(n_hout.astype(int), params.p_DH),
    }
    data = {
        "sero_baseline": _stream("sero_baseline", StreamKind.SeroPrevalence, y["sero_baseline"], n_sero),
        "sero_post": _stream("sero_post", StreamKind.SeroPrevalence, y["sero_post"], n_sero),
        "y_S": _stream("y_S", StreamKind.GPConsultations, y["y_S"]),
        "y_H": _stream("y_H", StreamKind.HospAdmissions, y["y_H"]),
        "y_D": _stream("y_D", StreamKind.Deaths, y["y_D"]),
        "y_ICU_H": _stream("y_ICU_H", StreamKind.ICUAdmissions, y["y_ICU_H"], n_hout),
        "y_D_H": _stream("y_D_H", StreamKind.Deaths, y["y_D_H"], n_hout),
    }
    brute = 0.0
    for a in range(A):
        brute += stats.binom.logpmf(y["sero_baseline"][a], n_sero[a], params.pi_baseline[a])
        brute += stats.binom.logpmf(y["sero_post"][a], n_sero[a], params.pi[a])
        brute += stats.binom.logpmf(y["y_S"][a], state.N_S[a], params.d_S[a])
        brute += stats.binom.logpmf(y["y_H"][a], state.N_H[a], params.d_H[a])
        brute += stats.binom.logpmf(y["y_D"][a], state.N_D[a], params.d_D[a])
        brute += stats.binom.logpmf(y["y_ICU_H"][a], n_hout[a], params.p_ICUH[a])
        brute += stats.binom.logpmf(y["y_D_H"][a], n_hout[a], params.p_DH[a])
    assert_allclose(severity_loglik_wave1(params, state, data), brute, rtol=1e-10)


def test_graph_matches_direct_loglik():
    rng = np.random.default_rng(5)
    ages = AgeStructure(("young", "old"))
    N_Pop = np.array([40000.0, 25000.0])
    cfg = SeverityConfig(ages, N_Pop, priors={"p_HS": PriorSpec("beta", {"a": 2, "b": 30})})
    graph = build_severity_graph(cfg)
    theta = graph.sample_prior(rng)
    theta["w1.pi_baseline"] = np.array([0.02, 0.05])
    theta["w1.p_I"] = np.array([0.2, 0.1])
    params = SeverityParams(**{k: theta["w1." + k] for k in
                               ("p_I", "p_SI", "p_HS", "p_ICUH", "p_DH", "d_S", "d_H", "d_D", "pi_baseline")})
    state = pyramid_counts(params, N_Pop)
    raw = {
        "sero_baseline": ([5, 12], [200, 210]), "sero_post": ([40, 30], [200, 210]),
        "y_S": (np.floor(state.N_S * 0.3), None), "y_H": (np.floor(state.N_H * 0.5), None),
        "y_D": (np.floor(state.N_D * 0.5), None), "y_ICU_H": ([2, 3], [20, 25]), "y_D_H": ([1, 2], [20, 25]),
    }
    kinds = {"sero_baseline": StreamKind.SeroPrevalence, "sero_post": StreamKind.SeroPrevalence}
    direct, named = {}, {}
    for k, (v, d) in raw.items():
        kind = kinds.get(k, StreamKind.HospAdmissions)
        direct[k] = _stream(k, kind, v, d)
        named["w1." + k] = _stream("w1." + k, kind, v, d)
    assert_allclose(graph.log_likelihood(theta, named, require_all=True),
                    severity_loglik_wave1(params, state, direct), rtol=1e-12)


def test_naive_switch_is_configuration():
    ages = AgeStructure(("a",))
    spec = [WaveSpec(1, streams=("y_S", "y_H"), symptomatic="lognormal")]
    g_flag = build_severity_graph(SeverityConfig(ages, [1e5], spec, naive_ds=True))
    g_fix = build_severity_graph(SeverityConfig(ages, [1e5], spec)).fix({"w1.d_S": np.ones(1)})
    assert "w1.d_S" not in g_flag.param_names
    assert g_flag.param_names == g_fix.param_names
    theta = g_flag.sample_prior(np.random.default_rng(0))
    data = {"w1.y_S": _stream("w1.y_S", StreamKind.PointEstimateLogScale, [8.11], [0.30]),
            "w1.y_H": _stream("w1.y_H", StreamKind.HospAdmissions, [3.0])}
    assert g_flag.log_likelihood(theta, data) == g_fix.log_likelihood(theta, data)


def test_lognormal_point_term_at_mean():
    sigma = 0.7
    assert_allclose(lognormal_point_estimate_term(250, math.log(250), sigma),
                    -math.log(sigma * math.sqrt(2 * math.pi)), rtol=1e-14)
    # symptomatic estimate for the under-ones in the first wave
    assert_allclose(lognormal_point_estimate_term(math.exp(8.11), 8.11, 0.30),
                    -math.log(0.30 * math.sqrt(2 * math.pi)), rtol=1e-12)


def test_lognormal_point_term_normalizes_and_domain():
    val, _ = integrate.quad(lambda y: math.exp(lognormal_point_estimate_term(300, y, 0.4)), -np.inf, np.inf)
    assert_allclose(val, 1.0, atol=1e-10)
    assert lognormal_point_estimate_term(0, 1.0, 0.3) == -np.inf
    with pytest.raises(DomainError):
        lognormal_point_estimate_term(10, 1.0, 0.0)


def test_icu_lower_bound_term():
    assert icu_lower_bound_term(10, 10, 1.0) == 0.0
    assert icu_lower_bound_term(10, 9, 1.0) == -np.inf
    assert_allclose(icu_lower_bound_term(10, 5, 0.5), math.log(252) - 10 * math.log(2), rtol=1e-13)
    assert icu_lower_bound_term(10, 11, 0.5) == -np.inf
    total = np.exp(icu_lower_bound_term(40, np.arange(41), 0.37)).sum()
    assert_allclose(total, 1.0, atol=1e-12)


def test_wave3_hierarchical_prior():
    sd = 0.8
    peak = wave3_hierarchical_prior(0.3, 0.3, sd)
    assert_allclose(peak, -math.log(sd * math.sqrt(2 * math.pi)), rtol=1e-14)
    assert wave3_hierarchical_prior(0.35, 0.3, sd) < peak
    assert_allclose(wave3_hierarchical_prior(0.2, 0.6, sd), wave3_hierarchical_prior(0.6, 0.2, sd), rtol=1e-14)
    assert wave3_hierarchical_prior(0.0, 0.3, sd) == -np.inf
    assert wave3_hierarchical_prior(0.3, 1.0, sd) == -np.inf
    val, _ = integrate.quad(lambda p: math.exp(wave3_hierarchical_prior(p, 0.2, sd)) / (p * (1 - p)), 0, 1,
                            limit=200)
    assert_allclose(val, 1.0, atol=1e-8)


def test_hierarchical_graph_prior_matches_term():
    ages = AgeStructure(("a", "b"))
    cfg = SeverityConfig(ages, [1e4, 1e4], [WaveSpec(2, streams=("y_H",)),
                                              WaveSpec(3, streams=("y_H",), centre_on=2)], centre_sd=0.5)
    g = build_severity_graph(cfg)
    assert g["w3.p_SI"].prior.center == "w2.p_SI"
    theta = g.sample_prior(np.random.default_rng(2))
    lp = g.log_prior(theta)
    expected = 0.0
    for name in ("p_SI", "p_HS", "p_ICUH", "p_DH"):
        p3 = theta["w3." + name]
        # the graph prior is a density on the probability scale: add the logit Jacobian
        expected += np.sum(wave3_hierarchical_prior(p3, theta["w2." + name], 0.5) - np.log(p3 * (1 - p3)))
    # the remaining priors are uniform on [0, 1] and contribute zero
    assert_allclose(lp, expected, rtol=1e-12)


def test_missing_centre_wave_is_a_configuration_error():
    with pytest.raises(ConfigurationError):
        build_severity_graph(SeverityConfig(AgeStructure(("a",)), [10], [WaveSpec(3, centre_on=2)]))


def test_icu_mean_prevalence_limits():
    nu = icu_mean_prevalence(np.full(200, 2.0), 0.5, 0.0)
    assert_allclose(nu[-1], 4.0, rtol=1e-12)
    nu = icu_mean_prevalence(np.zeros(6), 1.0, 10.0)
    assert_allclose(nu, 10 * np.exp(-np.arange(7.0)), rtol=1e-13)
    p = IcuProcessParams(np.full(30, 3.0), 0.25)
    assert_allclose(p.cumulative_admissions, 90.0)
    assert_allclose(p.mean_stay, 4.0)
    with pytest.raises(DomainError):
        IcuProcessParams(np.ones(3), 0.0)
    with pytest.raises(DomainError):
        icu_mean_prevalence(np.ones(3), -1.0)


def test_icu_mean_prevalence_matches_ode_solution():
    from scipy.integrate import solve_ivp
    lam = np.array([1.0, 4.0, 0.5, 2.5, 0.0, 3.0])
    mu = 0.3
    sol = solve_ivp(lambda t, y: [lam[min(int(t), 5)] - mu * y[0]], (0, 6), [2.0],
                    t_eval=np.arange(7.0), rtol=1e-11, atol=1e-12, max_step=0.01)
    assert_allclose(icu_mean_prevalence(lam, mu, 2.0), sol.y[0], rtol=1e-7)


def test_icu_loglik_methods():
    lam = np.full(20, 2.0)
    params = IcuProcessParams(lam, 0.5, nu0=1.0)
    one = DataStream("icu", StreamKind.ICUPrevalence, [7], [0], [3.0])
    nu7 = icu_mean_prevalence(lam, 0.5, 1.0)[7]
    assert_allclose(icu_immigration_death_loglik(params, one), stats.poisson.logpmf(3, nu7), rtol=1e-12)
    assert_allclose(icu_immigration_death_loglik(params, one, method="markov"),
                    icu_immigration_death_loglik(params, one), rtol=1e-12)
    series = DataStream("icu", StreamKind.ICUPrevalence, [2, 3, 5], [0, 0, 0], [3.0, 4.0, 2.0])
    # the Markov likelihood is a proper joint pmf: summing the last count out recovers the shorter series
    two = series.select([True, True, False])
    total = 0.0
    for m in range(60):
        s = DataStream("icu", StreamKind.ICUPrevalence, [2, 3, 5], [0, 0, 0], [3.0, 4.0, float(m)])
        total += math.exp(icu_immigration_death_loglik(params, s, method="markov"))
    assert_allclose(total, math.exp(icu_immigration_death_loglik(params, two, method="markov")), rtol=1e-10)
    with pytest.raises(ConfigurationError):
        icu_immigration_death_loglik(params, series, method="other")


def test_nested_mode_matches_enumeration():
    params = _params(0.6, 0.7, 0.5, 0.0, 0.4, d_S=0.8, d_H=0.9, d_D=0.7)
    N, yS, yH, yD = 6, 2, 1, 0
    total = 0.0
    for ni in range(N + 1):
        for ns in range(ni + 1):
            for nh in range(ns + 1):
                for nd in range(nh + 1):
                    p = (stats.binom.pmf(ni, N, 0.6) * stats.binom.pmf(ns, ni, 0.7)
                         * stats.binom.pmf(nh, ns, 0.5) * stats.binom.pmf(nd, nh, 0.4))
                    p *= stats.binom.pmf(yS, ns, 0.8) * stats.binom.pmf(yH, nh, 0.9) * stats.binom.pmf(yD, nd, 0.7)
                    total += p
    assert_allclose(nested_pyramid_loglik(params, N, yS, yH, yD), math.log(total), rtol=1e-11)


def test_nested_graph_mode_is_a_distribution_over_observations():
    ages = AgeStructure(("a",))
    cfg = SeverityConfig(ages, [4], [WaveSpec(1, streams=("y_S", "y_H"))], nested=True)
    g = build_severity_graph(cfg)
    theta = {"w1.p_I": np.array([0.5]), "w1.p_SI": np.array([0.8]), "w1.p_HS": np.array([0.5]),
             "w1.p_ICUH": np.array([0.1]), "w1.p_DH": np.array([0.1]),
             "w1.d_S": np.array([0.9]), "w1.d_H": np.array([0.6])}
    total = 0.0
    for ys, yh in itertools.product(range(5), range(5)):
        data = {"w1.y_S": _stream("w1.y_S", StreamKind.GPConsultations, [float(ys)]),
                "w1.y_H": _stream("w1.y_H", StreamKind.HospAdmissions, [float(yh)])}
        total += math.exp(g.log_likelihood(theta, data, require_all=True))
    assert_allclose(total, 1.0, rtol=1e-12)


def test_summary_rows_and_csv(tmp_path):
    ages = AgeStructure(("a", "b"))
    g = build_severity_graph(SeverityConfig(ages, [1e4, 2e4], [WaveSpec(1, streams=("y_H",))]))
    draws = g.sample_prior(np.random.default_rng(8), 400)
    rows = summarize_severity(g, draws, ages)
    chr_rows = [r for r in rows if r["node"] == "CHR"]
    assert [r["age"] for r in chr_rows] == ["a", "b"]
    expected = np.median(draws["w1.p_HS"][:, 1] * draws["w1.p_SI"][:, 1])
    assert_allclose(chr_rows[1]["median"], expected, rtol=1e-12)
    path = write_summary_csv(rows, tmp_path / "summary.csv")
    assert path.read_text().splitlines()[0] == "node,age,wave,median,q2.5,q97.5"
