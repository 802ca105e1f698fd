import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose
from scipy import optimize, stats

from episynth.core.streams import AgeStructure, DataStream, StreamKind
from episynth.errors import ConfigurationError, DomainError, RegimeError, StepSizeError
from episynth.transmission import (
    R0_from_growth_rate,
    TransmissionScenario,
    aggregate,
    background_counts,
    build_transmission_graph,
    convolve_endpoint,
    delay_pmf,
    endpoints,
    force_of_infection,
    growth_rate_from_R0,
    initialize_state,
    simulate_dynamics,
    step_dynamics,
    transmission_loglik,
    write_endpoints_csv,
)

TWO = AgeStructure(("child", "adult"))


def _scenario(**kw):
    base = dict(ages=TWO, N=[2e5, 8e5], days=120, contact=[[3.0, 1.0], [1.0, 1.5]])
    base.update(kw)
    return TransmissionScenario(**base)


def _theta(**kw):
    th = {"phi": growth_rate_from_R0(1.65, 2.0, 2.0), "I0": 30.0, "d_I": 2.0, "p_Sym": 0.5, "p_C": 0.1,
          "p_G": np.array([0.3]), "beta_B": np.array([3.0, 4.0, 0.5, -1.0])}
    th.update(kw)
    return th


# --- growth rate and R0 ------------------------------------------------------------------------

def test_R0_threshold_and_sir_limit():
    assert R0_from_growth_rate(0.0, 2.0, 3.0) == 1.0
    assert_allclose(R0_from_growth_rate(0.2, 0.0, 3.0), 1.6, rtol=1e-15)
    with pytest.raises(DomainError):
        R0_from_growth_rate(-0.6, 2.0, 2.0)


def test_growth_rate_round_trip_via_root_finding():
    for R0, d_L, d_I in [(1.65, 2.0, 2.0), (3.0, 1.0, 4.0), (0.8, 2.5, 1.5)]:
        # the SEIR characteristic equation solved numerically, independent of the closed form
        phi = optimize.brentq(lambda p: (1 + p * d_L) * (1 + p * d_I) - R0, -1 / max(d_L, d_I) + 1e-12, 10)
        assert_allclose(R0_from_growth_rate(phi, d_L, d_I), R0, atol=1e-10)
        assert_allclose(growth_rate_from_R0(R0, d_L, d_I), phi, atol=1e-10)


# --- force of infection -----------------------------------------------------------------------

def test_foi_zero_infectious():
    lam = force_of_infection(np.zeros(3), np.full((3, 3), 1e-4), 2.0, 2.0, 0.5)
    assert np.all(lam == 0.0)


def test_foi_single_infective_is_exact():
    M = np.array([[2e-5, 1e-5], [3e-5, 4e-5]])
    lam = force_of_infection(np.array([0.0, 1.0]), M, 1.7, 2.5, 0.5)
    assert_allclose(lam, 0.5 * M[:, 1] * 1.7 / 2.5, rtol=1e-13)


def test_foi_small_argument_expansion():
    rng = np.random.default_rng(1)
    M = rng.uniform(0, 1e-7, (4, 4))
    I = rng.uniform(0, 50, 4)
    lam = force_of_infection(I, M, 1.5, 2.0, 0.5)
    # the product evaluated in 50-digit arithmetic, then the first-order expansion
    with mpmath.workdps(50):
        exact = [float(1 - mpmath.fprod((1 - mpmath.mpf(0.5) * mpmath.mpf(M[a, b]) * mpmath.mpf(1.5) / 2)
                                        ** mpmath.mpf(I[b]) for b in range(4))) for a in range(4)]
    linear = 0.5 * (1.5 / 2.0) * M @ I
    assert_allclose(lam, exact, rtol=1e-12)
    assert_allclose(lam, linear, rtol=0.01)


def test_foi_regime_error_and_outside_variant():
    with pytest.raises(RegimeError):
        force_of_infection(np.ones(1), np.array([[1.0]]), 3.0, 1.0, 0.5)
    M = np.array([[1e-4]])
    inside = force_of_infection(np.array([10.0]), M, 2.0, 2.0, 0.5)
    outside = force_of_infection(np.array([10.0]), M, 2.0, 2.0, 0.5, dt_inside=False)
    assert_allclose(inside, 1 - (1 - 0.5e-4) ** 10, rtol=1e-12)
    assert_allclose(outside, 0.5 * (1 - (1 - 1e-4) ** 10), rtol=1e-12)


# --- one step and full trajectories --------------------------------------------------------

def test_disease_free_fixed_point():
    S = np.array([100.0, 200.0])
    out = step_dynamics(S, np.zeros(2), np.zeros(2), np.zeros(2), np.full((2, 2), 1e-3), 1.5, 2.0, 2.0, 0.5)
    assert_allclose(out[0], S)
    assert np.all(out[1] == 0) and np.all(out[2] == 0) and np.all(out[4] == 0)


def test_step_size_error():
    with pytest.raises(StepSizeError):
        step_dynamics(np.ones(1), np.ones(1), np.ones(1), np.zeros(1), np.eye(1) * 1e-3, 1.2, 0.4, 2.0, 0.5)
    with pytest.raises(StepSizeError):
        _scenario(d_L=0.25)


def test_compiled_kernel_matches_step_loop():
    sc = _scenario(days=30, mixing_breakpoints=[10], mixing_multipliers=[1.0, 0.6])
    phi, I0, d_I = 0.12, 40.0, 2.3
    traj = simulate_dynamics(sc, phi, I0, d_I)
    R0 = R0_from_growth_rate(phi, sc.d_L, d_I)
    S, E, I = initialize_state(sc, I0, phi, d_I)
    R = np.zeros(2)
    for k in range(sc.K):
        S, E, I, R, new = step_dynamics(S, E, I, R, sc.mixing(sc.period[k]), R0, d_I, sc.d_L, sc.delta_t)
        assert_allclose(traj.new_infections[k], new, rtol=1e-12)
    assert_allclose(traj.S[-1], S, rtol=1e-12)
    assert_allclose(traj.I[-1], I, rtol=1e-12)


def test_conservation_and_monotonicity():
    sc = _scenario(mixing_breakpoints=[30, 50], mixing_multipliers=[1.0, 0.5, 1.1])
    st_ = simulate_dynamics(sc, np.array([0.05, 0.15, 0.25]), np.array([5.0, 50.0, 500.0]), 2.0)
    total = st_.S + st_.E + st_.I + st_.R
    assert_allclose(total, np.broadcast_to(sc.N, total.shape), rtol=1e-9)
    assert np.all(np.diff(st_.S, axis=-2) <= 0)
    assert np.all(st_.new_infections >= 0)
    assert np.all(np.diff(np.cumsum(st_.new_infections, axis=-2), axis=-2) >= 0)
    assert np.all(st_.new_infections.sum(axis=-2) <= sc.N)


def test_fine_grid_self_convergence():
    peaks = {}
    for dt in (0.5, 0.01):
        sc = TransmissionScenario(AgeStructure(("all",)), [1e6], days=150, delta_t=dt)
        st_ = simulate_dynamics(sc, growth_rate_from_R0(1.65, 2.0, 2.0), 10.0, 2.0)
        peaks[dt] = aggregate(st_.new_infections, sc.spd)[:, 0].max()
    assert abs(peaks[0.5] / peaks[0.01] - 1) < 0.02


def test_subcritical_decay():
    sc = _scenario()
    st_ = simulate_dynamics(sc, growth_rate_from_R0(0.8, 2.0, 2.0), 20.0, 2.0)
    assert st_.I[-1].sum() < 20.0
    assert st_.new_infections.sum() < 200.0


@settings(max_examples=25, deadline=None)
@given(st.floats(0.5, 3.0), st.floats(0.05, 1.0))
def test_final_size_increases_with_R0(R0, bump):
    sc = TransmissionScenario(AgeStructure(("all",)), [1e5], days=200, delta_t=0.5)
    sizes = []
    for r in (R0, R0 + bump):
        st_ = simulate_dynamics(sc, growth_rate_from_R0(r, 2.0, 2.0), 10.0, 2.0)
        sizes.append(st_.new_infections.sum())
    assert sizes[1] >= sizes[0] * (1 - 1e-12)


def test_two_waves_from_mixing_breakpoint():
    sc = _scenario(days=200, mixing_breakpoints=[45, 85], mixing_multipliers=[1.0, 0.45, 1.0])
    daily = aggregate(simulate_dynamics(sc, growth_rate_from_R0(1.65, 2.0, 2.0), 10.0, 2.0).new_infections,
                      sc.spd).sum(axis=1)
    inner = daily[1:-1]
    peaks = np.flatnonzero((inner > daily[:-2]) & (inner >= daily[2:])) + 1
    assert len(peaks) >= 2
    assert daily[peaks[0]:peaks[1]].min() < 0.8 * daily[peaks[0]]


def test_invalid_regime_handling():
    sc = _scenario()
    with pytest.raises(RegimeError):
        simulate_dynamics(sc, -0.6, 10.0, 2.0)
    lax = simulate_dynamics(sc, np.array([0.1, -0.6]), 10.0, 2.0, strict=False)
    assert list(lax.status) == [0, 1]
    assert np.all(lax.S[1] == -1.0) and np.all(lax.S[0] > 0)


# --- initial state --------------------------------------------------------------------------------

def test_initial_state_ratios_and_weights():
    sc = _scenario(init_weights=[0.3, 0.7])
    S, E, I = initialize_state(sc, 100.0, 0.0, 2.5)
    assert_allclose(I, [30.0, 70.0])
    assert_allclose(E / I, 2.0 / 2.5)
    assert_allclose(S, sc.N - E - I)
    assert_allclose(_scenario().weights, [0.2, 0.8])
    with pytest.raises(DomainError):
        initialize_state(TransmissionScenario(AgeStructure(("a",)), [10.0], days=5), 20.0, 0.1, 2.0)
    with pytest.raises(ConfigurationError):
        _scenario(init_weights=[0.5, 0.6])


@pytest.mark.parametrize("weights", ["eigenvector"])
def test_initial_growth_rate(weights):
    sc = _scenario(init_weights=weights, N=[2e7, 8e7], days=20)
    phi = 0.14
    st_ = simulate_dynamics(sc, phi, 20.0, 2.0)
    inc = st_.new_infections.sum(axis=-1)
    ratio = inc[1:30] / inc[:29]
    assert np.all(np.abs(ratio / math.exp(phi * sc.delta_t) - 1) < 0.03)


# --- delay and convolution --------------------------------------------------------------------

def test_delay_pmf_is_normalized():
    f = delay_pmf()
    assert len(f) == 28 and np.all(f >= 0)
    assert_allclose(f.sum(), 1.0, atol=1e-14)
    with pytest.raises(ConfigurationError):
        delay_pmf(incubation_sd=0)


def test_convolution_identity_and_pulse():
    x = np.random.default_rng(0).uniform(0, 10, 50)
    assert_allclose(convolve_endpoint(x, np.array([1.0])), x)
    pulse = np.zeros(10)
    pulse[0] = 100
    out = convolve_endpoint(pulse, np.full(4, 0.25), 0.5)
    assert_allclose(out[:4], 12.5)
    assert np.all(out[4:] == 0)


def test_convolution_against_naive_double_loop():
    rng = np.random.default_rng(9)
    x = rng.gamma(2.0, 50.0, (3, 200, 2))
    f = rng.dirichlet(np.ones(28))
    scale = rng.uniform(0.1, 1.0, (200, 1))
    out = convolve_endpoint(x, f, scale)
    naive = np.zeros_like(x)
    for b in range(3):
        for v in range(200):
            for k in range(v + 1):
                if v - k < len(f):
                    naive[b, v] += x[b, k] * f[v - k]
    assert_allclose(out, scale * naive, rtol=1e-10, atol=1e-10)


def test_convolution_truncates_long_kernels():
    with pytest.warns(RuntimeWarning):
        out = convolve_endpoint(np.ones(3), np.full(5, 0.2))
    assert_allclose(out, [1 / 3, 2 / 3, 1.0])


def test_aggregate_sums_steps():
    x = np.arange(12.0).reshape(6, 2)
    assert_allclose(aggregate(x, 2), [[2, 4], [10, 12], [18, 20]])


# --- observation model -----------------------------------------------------------------------

def _stream(name, kind, t, a, v, d=None):
    return DataStream(name, kind, t, a, v, d)


def test_positivity_and_sero_boundaries():
    sc = _scenario(days=40)
    g = build_transmission_graph(sc)
    th = _theta(beta_B=np.array([-800.0, -800.0, 0.0, 0.0]))
    vals = g.evaluate(th)
    assert_allclose(vals["psi_P"], 1.0)
    pos = _stream("positivity", StreamKind.ViroPositivity, [5], [0], [3], [3])
    assert g.node_logliks(th, {"positivity": pos})["positivity"] == 0.0
    assert np.all(vals["psi_S"][..., 0, :] > 0)
    # before any infection the susceptible fraction is one, so a positive sero count is impossible
    sc0 = _scenario(days=40, init_weights=[1.0, 0.0])
    g0 = build_transmission_graph(sc0)
    assert g0.evaluate(th)["psi_S"][0, 1] == 0.0
    sero = _stream("sero", StreamKind.SeroPrevalence, [0], [1], [2], [100])
    assert g0.node_logliks(th, {"sero": sero})["sero"] == -np.inf


def test_positivity_ratio_invariance():
    sc = _scenario(days=40)
    g = build_transmission_graph(sc)
    v = g.evaluate(_theta())
    nb, ng = v["N_B"], v["N_G"]
    node = g["psi_P"]
    assert_allclose(node.func(3.7 * nb, 3.7 * ng), v["psi_P"], rtol=1e-13)


def test_loglik_terms_match_independent_evaluation():
    sc = _scenario(days=60, pG_breakpoints=[30], eta=40.0)
    th = _theta(p_G=np.array([0.3, 0.15]))
    ep = endpoints(sc, th)
    rng = np.random.default_rng(4)
    t = np.repeat(np.arange(60), 2)
    a = np.tile([0, 1], 60)
    nG = ep.gp[t, a]
    nB = ep.background[t, a]
    mean_G = nG + nB
    r = 40.0
    y_G = rng.negative_binomial(r, r / (r + mean_G))
    n_P = np.full(len(t), 30)
    y_P = rng.binomial(n_P, nG / (nG + nB))
    ts = np.array([10, 10, 50, 50])
    as_ = np.array([0, 1, 0, 1])
    n_S = np.full(4, 200)
    y_S = rng.binomial(n_S, 1 - ep.susceptible[ts, as_] / sc.N[as_])
    tc = np.repeat(np.arange(20), 2)
    ac = np.tile([0, 1], 20)
    y_C = rng.negative_binomial(r, r / (r + ep.confirmed[tc, ac]))
    data = {
        "gp": _stream("gp", StreamKind.GPConsultations, t, a, y_G),
        "positivity": _stream("positivity", StreamKind.ViroPositivity, t, a, y_P, n_P),
        "sero": _stream("sero", StreamKind.SeroPrevalence, ts, as_, y_S, n_S),
        "confirmed": _stream("confirmed", StreamKind.ConfirmedCases, tc, ac, y_C),
    }
    expected = {
        "gp": stats.nbinom.logpmf(y_G, r, r / (r + mean_G)).sum(),
        "positivity": stats.binom.logpmf(y_P, n_P, nG / (nG + nB)).sum(),
        "sero": stats.binom.logpmf(y_S, n_S, 1 - ep.susceptible[ts, as_] / sc.N[as_]).sum(),
        "confirmed": stats.nbinom.logpmf(y_C, r, r / (r + ep.confirmed[tc, ac])).sum(),
    }
    g = build_transmission_graph(sc)
    per_node = g.node_logliks(th, data)
    for k, v in expected.items():
        assert_allclose(per_node[k], v, rtol=1e-10)
    assert_allclose(transmission_loglik(sc, th, data), sum(expected.values()), rtol=1e-10)
    # GP mean uses the phase-specific consultation probability
    assert_allclose(ep.gp[45] / ep.symptomatic[45], 0.15)


def test_invalid_parameters_give_minus_infinity():
    sc = _scenario(days=30)
    g = build_transmission_graph(sc)
    gp = _stream("gp", StreamKind.GPConsultations, [3, 4], [0, 1], [10, 12])
    assert g.log_likelihood(_theta(phi=-0.6), {"gp": gp}) == -np.inf
    batch = _theta(phi=np.array([0.1, -0.6]), I0=np.array([30.0, 30.0]), d_I=np.array([2.0, 2.0]),
                   p_Sym=np.array([0.5, 0.5]), p_C=np.array([0.1, 0.1]), p_G=np.array([[0.3], [0.3]]),
                   beta_B=np.tile([3.0, 4.0, 0.5, -1.0], (2, 1)))
    ll = g.log_likelihood(batch, {"gp": gp})
    assert np.isfinite(ll[0]) and ll[1] == -np.inf


def test_batched_matches_single():
    sc = _scenario(days=50, free_mixing=[1], mixing_breakpoints=[25])
    g = build_transmission_graph(sc)
    assert "m" in g.param_names
    rng = np.random.default_rng(2)
    th = g.sample_prior(rng, 4)
    th["d_I"] = np.clip(th["d_I"], 0.6, None)
    th["phi"] = np.abs(th["phi"]) * 0.5
    gp = _stream("gp", StreamKind.GPConsultations, [3, 14, 40], [0, 1, 1], [10, 12, 40])
    batched = g.log_likelihood(th, {"gp": gp})
    single = [g.log_likelihood({k: v[i] for k, v in th.items()}, {"gp": gp}) for i in range(4)]
    assert_allclose(batched, single, rtol=1e-12)


def test_background_counts():
    sc = _scenario(days=10, background_degree=1)
    nb = background_counts(np.array([1.0, 2.0, 0.0]), sc.design)
    assert_allclose(nb, np.exp(np.tile([1.0, 2.0], (10, 1))))


def test_scenario_from_dict_and_csv(tmp_path):
    sc = TransmissionScenario.from_dict({"N": [1e5, 2e5], "days": 20, "ages": {"labels": ["y", "o"]}})
    assert sc.ages.labels == ("y", "o")
    with pytest.raises(ConfigurationError, match="days"):
        TransmissionScenario.from_dict({"N": [1e5]})
    with pytest.raises(ConfigurationError, match="unknown"):
        TransmissionScenario.from_dict({"N": [1e5], "days": 3, "colour": 1})
    ep = endpoints(sc, _theta())
    path = write_endpoints_csv(sc, ep, tmp_path / "ep.csv")
    lines = path.read_text().splitlines()
    assert lines[0].startswith("day,age,symptomatic")
    assert len(lines) == 1 + 20 * 2
