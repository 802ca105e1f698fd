import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from episynth.core import BasicNode, DataNode, DataStream, ModelGraph, Normal, PriorSpec, StreamKind
from episynth.errors import ConfigurationError, DegenerateEnsembleError
from episynth.smc import (
    ParticleEnsemble,
    SMCConfig,
    ess,
    init_ensemble,
    merge_streams,
    resample_and_jitter,
    reweight,
    reweight_batch,
    run_smc,
    split_batches,
    systematic_resample,
    temper_batch,
    write_predictive_csv,
    write_summary_csv,
)

PRIOR_SD = 2.0


def _model(y, sd=1.0, times=None):
    g = ModelGraph([BasicNode("mu", PriorSpec("normal", {"mean": 0.0, "sd": PRIOR_SD})),
                    DataNode("y", "mu", Normal("scalar"))])
    n = len(y)
    t = np.arange(n) if times is None else times
    data = {"y": DataStream("y", StreamKind.PointEstimateLogScale, t, np.zeros(n), y, np.full(n, sd))}
    return g, data


def _conjugate(y, sd=1.0):
    prec = 1 / PRIOR_SD**2 + len(y) / sd**2
    return np.sum(y) / sd**2 / prec, np.sqrt(1 / prec)


@given(st.lists(st.floats(0.0, 10.0), min_size=1, max_size=20))
def test_ess_bounds(w):
    w = np.asarray(w)
    if w.sum() <= 0:
        return
    e = ess(w)
    assert 1 - 1e-9 <= e <= len(w) + 1e-9


def test_ess_uniform_and_single():
    assert ess(np.ones(10)) == pytest.approx(10)
    assert ess([0, 0, 1.0, 0]) == pytest.approx(1)


@settings(max_examples=50)
@given(st.lists(st.floats(0.01, 5.0), min_size=2, max_size=30), st.integers(0, 2**31))
def test_systematic_resampling_counts(w, seed):
    # each particle is copied floor(n w) or ceil(n w) times
    w = np.asarray(w) / np.sum(w)
    idx = systematic_resample(w, np.random.default_rng(seed))
    counts = np.bincount(idx, minlength=len(w))
    assert counts.sum() == len(w)
    assert np.all(counts >= np.floor(len(w) * w - 1e-9))
    assert np.all(counts <= np.ceil(len(w) * w + 1e-9))


def test_reweight_normalises_and_accumulates():
    ens = ParticleEnsemble(np.zeros((4, 1)), np.zeros(4), np.zeros(4))
    out = reweight(ens, np.log([1.0, 2.0, 3.0, 4.0]))
    assert_allclose(out.weights, np.array([1, 2, 3, 4]) / 10)
    assert_allclose(out.loglik, np.log([1.0, 2.0, 3.0, 4.0]))
    assert_allclose(ens.weights, 0.25)


def test_all_weights_underflow_raises():
    ens = ParticleEnsemble(np.zeros((3, 1)), np.zeros(3), np.zeros(3))
    with pytest.raises(DegenerateEnsembleError):
        reweight(ens, np.full(3, -np.inf))


def test_merge_and_split_round_trip():
    g, data = _model(np.arange(6.0))
    parts = split_batches(data, [0, 2, 5, 6])
    assert [len(p["y"]) for p in parts] == [2, 3, 1]
    back = merge_streams(*parts)["y"]
    assert_allclose(back.value, data["y"].value)
    assert_allclose(back.time_index, data["y"].time_index)


def test_single_batch_matches_conjugate_posterior():
    rng = np.random.default_rng(0)
    y = rng.normal(1.5, 1.0, 5)
    g, data = _model(y)
    res = run_smc(g, [data], SMCConfig(n_particles=4000, seed=1))
    m, s = _conjugate(y)
    assert abs(res.mean()[0] - m) < 4 * res.mcse()[0]
    x = res.draws()[:, 0]
    w = res.ensemble.weights
    assert abs(np.sqrt(w @ (x - w @ x) ** 2) - s) < 0.05 * s


def test_sequential_batches_match_all_at_once():
    rng = np.random.default_rng(2)
    y = rng.normal(-0.7, 1.0, 12)
    g, data = _model(y)
    batches = split_batches(data, [0, 4, 8, 12])
    res = run_smc(g, batches, SMCConfig(n_particles=3000, seed=3))
    m, s = _conjugate(y)
    assert res.ensemble.k == 3
    assert abs(res.mean()[0] - m) < 4 * res.mcse()[0]
    assert len(res.summaries) == 3
    assert res.summaries[-1]["mu"]["q2.5"] < m < res.summaries[-1]["mu"]["q97.5"]


def test_jitter_preserves_target():
    # particles drawn exactly from the posterior stay distributed as the posterior
    rng = np.random.default_rng(4)
    y = rng.normal(0.3, 1.0, 8)
    g, data = _model(y)
    m, s = _conjugate(y)
    z = rng.normal(m, s, (4000, 1))
    ens = ParticleEnsemble(z, np.zeros(4000), np.zeros(4000))
    cfg = SMCConfig(n_particles=4000, jitter_moves=10)
    out = resample_and_jitter(ens, g, data, {}, 1.0, rng, cfg, force=True)
    x = out.z[:, 0]
    assert abs(x.mean() - m) < 4 * s / np.sqrt(4000) * 2
    assert abs(x.std() - s) < 0.06 * s
    assert out.history[-1]["event"] == "resample"
    assert all(0.1 < a < 0.9 for a in out.history[-1]["accept"])


def test_no_resampling_above_threshold():
    g, data = _model(np.array([0.0]))
    ens = ParticleEnsemble(np.zeros((10, 1)), np.zeros(10), np.zeros(10))
    out = resample_and_jitter(ens, g, data, {}, 1.0, np.random.default_rng(0), SMCConfig(n_particles=10))
    assert out is ens


def test_tempering_keeps_ess_higher_than_direct_reweighting():
    # a sharp batch far in the tail of the prior ensemble
    y = np.full(40, 3.0)
    g, data = _model(y, sd=0.5)
    cfg = SMCConfig(n_particles=2000, seed=5)
    rng = np.random.default_rng(5)
    ens = init_ensemble(g, 2000, rng)
    direct = temper_batch(ens, g, {}, data, np.random.default_rng(6), cfg, steps=1)
    tempered = temper_batch(ens, g, {}, data, np.random.default_rng(6), cfg, steps=5)
    min_direct = min(h["ess"] for h in direct.history if h["event"] == "reweight")
    min_tempered = min(h["ess"] for h in tempered.history if h["event"] == "reweight")
    assert min_tempered > min_direct
    m, s = _conjugate(y, 0.5)
    x = tempered.z[:, 0]
    assert abs(tempered.weights @ x - m) < 0.05


def test_adaptive_ladder_holds_target_ess():
    y = np.full(40, 3.0)
    g, data = _model(y, sd=0.5)
    cfg = SMCConfig(n_particles=2000, seed=7, adaptive=True, adaptive_target=0.5)
    rng = np.random.default_rng(7)
    out = temper_batch(init_ensemble(g, 2000, rng), g, {}, data, rng, cfg)
    gammas = [h["gamma"] for h in out.history if h["event"] == "reweight"]
    assert gammas[-1] == 1.0
    assert np.all(np.diff(gammas) > 0)
    steps = [h for h in out.history if h["event"] == "reweight"]
    assert all(h["cess"] >= 0.5 * 2000 * 0.999 for h in steps[:-1])
    # every step starts from equal weights, so the ESS never drops below the target
    assert min(h["ess"] for h in steps) >= 0.5 * 2000 * 0.999
    m, _ = _conjugate(y, 0.5)
    assert abs(out.weights @ out.z[:, 0] - m) < 0.05


def test_deterministic_given_seed():
    g, data = _model(np.array([0.5, 1.0, 1.5]))
    batches = split_batches(data, [0, 1, 3])
    a = run_smc(g, batches, SMCConfig(n_particles=300, seed=9))
    b = run_smc(g, batches, SMCConfig(n_particles=300, seed=9))
    assert np.array_equal(a.ensemble.z, b.ensemble.z)


def test_config_validation():
    with pytest.raises(ConfigurationError):
        SMCConfig(n_particles=1)
    with pytest.raises(ConfigurationError):
        SMCConfig(ess_threshold=0.0)
    with pytest.raises(ConfigurationError):
        SMCConfig(temper_steps=0)


def test_summary_and_predictive_csv(tmp_path):
    g, data = _model(np.array([0.5, 1.0]))
    res = run_smc(g, split_batches(data, [0, 1, 2]), SMCConfig(n_particles=200, seed=0))
    path = write_summary_csv(res.summaries, tmp_path / "smc.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == "batch,parameter,mean,median,q2.5,q97.5,ess"
    assert len(lines) == 3
    bands = np.zeros((3, 2, 1))
    p = write_predictive_csv(bands, ["all"], tmp_path / "pred.csv")
    assert p.read_text().splitlines()[1] == "0,all,0,0,0"


def test_identical_particles_keep_their_weights():
    g, data = _model(np.array([0.7, 1.2]))
    log_w = np.log([0.1, 0.2, 0.3, 0.4])
    ens = ParticleEnsemble(np.full((4, 1), 0.5), log_w, np.zeros(4))
    out = reweight_batch(ens, g, data)
    assert_allclose(out.weights, [0.1, 0.2, 0.3, 0.4], rtol=1e-12)


def test_two_particle_arithmetic():
    ens = ParticleEnsemble(np.zeros((2, 1)), np.zeros(2), np.zeros(2))
    assert_allclose(reweight(ens, np.log([0.2, 0.8])).weights, [0.2, 0.8], rtol=1e-12)


def test_sequential_weights_equal_single_shot_weights():
    rng = np.random.default_rng(12)
    y = rng.normal(0.4, 1.0, 9)
    g, data = _model(y)
    ens = init_ensemble(g, 500, rng)
    seq = ens
    for batch in split_batches(data, [0, 2, 3, 7, 9]):
        seq = reweight_batch(seq, g, batch)
    once = reweight_batch(ens, g, data)
    # single-shot oracle: log prior-ensemble weights plus the full-data log-likelihood
    ll = np.array([np.sum(-0.5 * (y - z) ** 2 - 0.5 * np.log(2 * np.pi)) for z in ens.z[:, 0]])
    oracle = ll - np.logaddexp.reduce(ll)
    assert_allclose(seq.log_w, oracle, atol=1e-10)
    assert_allclose(once.log_w, oracle, atol=1e-10)


def test_collapsed_ensemble_resamples_to_one_particle_and_jitter_spreads_it():
    g, data = _model(np.array([0.2, -0.3]))
    rng = np.random.default_rng(13)
    z = rng.normal(0, 1, (200, 1))
    log_w = np.full(200, -np.inf)
    log_w[17] = 0.0
    ens = ParticleEnsemble(z, log_w, np.zeros(200))
    frozen = resample_and_jitter(ens, g, data, {}, 1.0, rng, SMCConfig(n_particles=200, jitter_moves=0), force=True)
    assert np.all(frozen.z == z[17])
    diverse = 0
    for r in range(100):
        out = resample_and_jitter(ens, g, data, {}, 1.0, np.random.default_rng(r),
                                  SMCConfig(n_particles=200, jitter_moves=5, jitter_scale=0.5), force=True)
        diverse += len(np.unique(out.z[:, 0])) > 1
    assert diverse / 100 >= 0.99


def test_single_step_tempering_is_plain_reweight_and_resample():
    rng = np.random.default_rng(14)
    g, data = _model(np.full(20, 2.0), sd=0.5)
    cfg = SMCConfig(n_particles=400, seed=0)
    ens = init_ensemble(g, 400, rng)
    a = temper_batch(ens, g, {}, data, np.random.default_rng(3), cfg, steps=1)
    plain = reweight_batch(ens, g, data)
    b = resample_and_jitter(plain, g, {}, data, 1.0, np.random.default_rng(3), cfg)
    assert np.array_equal(a.z, b.z)
    assert_allclose(a.log_w, b.log_w)


def test_ladder_increments_telescope_to_full_batch_likelihood():
    rng = np.random.default_rng(15)
    g, data = _model(np.array([0.3, 0.1]), sd=3.0)
    # a weak batch keeps the ESS above any threshold, so no resampling interrupts the ladder
    cfg = SMCConfig(n_particles=300, ess_threshold=1e-6)
    ens = init_ensemble(g, 300, rng)
    tempered = temper_batch(ens, g, {}, data, rng, cfg, steps=7)
    direct = reweight_batch(ens, g, data)
    assert [h["gamma"] for h in tempered.history if h["event"] == "reweight"][-1] == 1.0
    assert_allclose(tempered.loglik, direct.loglik, atol=1e-10)
    assert_allclose(tempered.log_w, direct.log_w, atol=1e-10)
