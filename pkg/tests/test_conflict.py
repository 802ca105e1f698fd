import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose
from scipy import stats

from episynth.conflict import (
    DifferenceSample,
    NodeSplit,
    Partition,
    conflict_pvalue,
    difference_sample,
    format_report,
    full_model_draws,
    is_compromise,
    pairwise_conflicts,
    partition_graph,
    split_and_fit,
    uniformity_check,
    write_delta_histogram,
    write_overlay_csv,
)
from episynth.core import BasicNode, DataNode, DataStream, FunctionalNode, ModelGraph, Normal, PriorSpec, StreamKind
from episynth.errors import ConfigurationError, SplitDesignError, UndefinedPValueError
from episynth.mcmc import ChainConfig

PRIOR_SD = 2.0
VAGUE = PriorSpec("normal", {"mean": 0.0, "sd": 100.0})
CFG = ChainConfig(iterations=12000, burn_in=2000, seed=3)


def _graph(n_obs=2):
    nodes = [BasicNode("mu", PriorSpec("normal", {"mean": 0.0, "sd": PRIOR_SD}))]
    nodes += [DataNode(f"y{i + 1}", "mu", Normal("scalar")) for i in range(n_obs)]
    return ModelGraph(nodes)


def _data(values, sd=1.0):
    return {f"y{i + 1}": DataStream(f"y{i + 1}", StreamKind.PointEstimateLogScale, [0], [0], [v], [sd])
            for i, v in enumerate(values)}


def _normal_posterior(prior_sd, ys, sd=1.0):
    prec = 1 / prior_sd**2 + len(ys) / sd**2
    return np.sum(ys) / sd**2 / prec, np.sqrt(1 / prec)


def test_two_way_split_matches_single_observation_posteriors():
    g, data = _graph(), _data([1.0, 2.5])
    fit = split_and_fit(g, data, NodeSplit.two_way("mu", ["y1"], ["y2"], VAGUE), CFG)
    for name, prior_sd, y in [("a", PRIOR_SD, 1.0), ("b", 100.0, 2.5)]:
        m, s = _normal_posterior(prior_sd, [y])
        x = fit.separator[name]
        mcse = fit.samples[name].mcse("mu")
        assert abs(x.mean() - m) < 3 * mcse
        assert abs(x.std() - s) < 0.1 * s


def test_partition_graphs_do_not_share_evidence():
    g = _graph(3)
    split = NodeSplit.two_way("mu", ["y1"], ["y2", "y3"], VAGUE)
    ga = partition_graph(g, split, split.partitions[0])
    gb = partition_graph(g, split, split.partitions[1])
    assert [d.name for d in ga.data_nodes] == ["y1"]
    assert [d.name for d in gb.data_nodes] == ["y2", "y3"]
    assert gb["mu"].prior == VAGUE
    assert ga["mu"].prior.params["sd"] == PRIOR_SD


def test_moving_a_data_node_changes_only_that_side():
    g, data = _graph(3), _data([1.0, 2.0, 4.0])
    cfg = ChainConfig(iterations=3000, burn_in=500, seed=1)

    def split(b, c):
        return NodeSplit("mu", [Partition("a", ("y1",), owner=True),
                                Partition("b", b, split_prior=VAGUE),
                                Partition("c", c, split_prior=VAGUE)])

    one = split_and_fit(g, data, split(("y2",), ("y3",)), cfg)
    two = split_and_fit(g, data, split(("y3",), ("y2",)), cfg)
    # partition a never sees y2 or y3: its draws are untouched by the move
    assert np.array_equal(one.separator["a"], two.separator["a"])
    assert one.separator["b"].mean() < one.separator["c"].mean()
    assert two.separator["b"].mean() > two.separator["c"].mean()


def test_three_partitions_return_one_posterior_each():
    g, data = _graph(3), _data([0.0, 1.0, 2.0])
    split = NodeSplit("mu", [Partition("sero", ("y1",), owner=True),
                             Partition("hosp", ("y2",), split_prior=VAGUE),
                             Partition("mort", ("y3",), split_prior=VAGUE)])
    fit = split_and_fit(g, data, split, ChainConfig(iterations=6000, burn_in=1000, seed=2))
    assert set(fit.separator) == {"sero", "hosp", "mort"}
    med = fit.medians()
    assert med["sero"] < med["hosp"] < med["mort"]
    pv = pairwise_conflicts(fit, np.random.default_rng(0))
    assert set(pv) == {("sero", "hosp"), ("sero", "mort"), ("hosp", "mort")}
    full = full_model_draws(g, data, "mu", ChainConfig(iterations=6000, burn_in=1000, seed=4))
    assert is_compromise(full, list(med.values()))
    assert "sero vs mort: c = " in format_report("mu", pv, "identity", "quantile")


def test_split_design_errors():
    g = _graph(3)
    with pytest.raises(SplitDesignError):  # y3 unassigned
        NodeSplit.two_way("mu", ["y1"], ["y2"], VAGUE).validate(g)
    with pytest.raises(SplitDesignError):  # overlap
        NodeSplit.two_way("mu", ["y1", "y3"], ["y2", "y3"], VAGUE).validate(g)
    with pytest.raises(SplitDesignError):  # child side carries no evidence
        NodeSplit.two_way("mu", ["y1", "y2", "y3"], [], VAGUE).validate(g)
    with pytest.raises(SplitDesignError):  # missing split prior
        NodeSplit("mu", [Partition("a", ("y1",), owner=True), Partition("b", ("y2", "y3"))]).validate(g)
    with pytest.raises(SplitDesignError):
        NodeSplit("mu", [Partition("a", ("y1",), owner=True), Partition("b", ("y2",), owner=True)])
    with pytest.raises(ConfigurationError):
        NodeSplit.two_way("mu", ["y1"], ["y2"], VAGUE, scale="probit")


def test_functional_separator_cut_severs_upstream():
    g = ModelGraph([BasicNode("p", PriorSpec("uniform")),
                    BasicNode("N", PriorSpec("lognormal", {"meanlog": np.log(1000.0), "sdlog": 0.2})),
                    FunctionalNode("N_S", ("p", "N"), lambda p, n: np.log(p * n)),
                    DataNode("upper", "N", Normal("scalar"), streams=("upper",)),
                    DataNode("lower", "N_S", Normal("scalar"))])
    split = NodeSplit.two_way("N_S", ["upper"], ["lower"], VAGUE)
    split.validate(g)
    gb = partition_graph(g, split, split.partitions[1])
    assert isinstance(gb["N_S"], BasicNode)
    assert "p" not in gb and "N" not in gb


# --- p-values ----------------------------------------------------------------------------------------

def test_symmetric_difference_gives_no_conflict():
    d = np.random.default_rng(0).normal(0, 1, 20_000)
    assert conflict_pvalue(d) == pytest.approx(1.0, abs=0.05)
    # zero sits at the mode; the estimated density need not peak exactly there
    assert conflict_pvalue(d, "density") > 0.8


def test_all_positive_difference_gives_total_conflict():
    d = np.random.default_rng(1).uniform(0.1, 2.0, 5000)
    assert conflict_pvalue(d) <= 2 / len(d)
    assert conflict_pvalue(d, "density") <= 2 / len(d)


def test_normal_tail_oracle():
    d = np.random.default_rng(2).normal(3.0, 1.0, 100_000)
    expected = 2 * stats.norm.cdf(-3.0)
    assert expected == pytest.approx(0.0027, abs=1e-4)
    assert abs(conflict_pvalue(d) - expected) < 0.001
    # the density variant agrees for a symmetric unimodal difference
    assert abs(conflict_pvalue(d, "density") - expected) < 0.001


def test_ties_split_evenly():
    assert conflict_pvalue(np.r_[np.zeros(2), np.ones(2)]) == pytest.approx(0.5)
    assert conflict_pvalue(np.r_[0.0, np.ones(3)]) == pytest.approx(0.25)


def test_degenerate_difference_has_no_pvalue():
    with pytest.raises(UndefinedPValueError):
        conflict_pvalue(np.full(2000, 0.3))
    with pytest.raises(ConfigurationError):
        conflict_pvalue(np.array([]))


def test_difference_sample_needs_enough_draws():
    with pytest.raises(ConfigurationError):
        DifferenceSample(np.zeros(10))


def test_permutation_pairing_is_uncorrelated():
    rng = np.random.default_rng(3)
    a = np.cumsum(rng.normal(size=5000))  # strongly autocorrelated, like MCMC output
    b = np.cumsum(rng.normal(size=5000))
    sample = difference_sample(a, b, rng=np.random.default_rng(4))
    paired_b = a - sample.delta
    r = np.corrcoef(a, paired_b)[0, 1]
    assert abs(r) < 3 / np.sqrt(len(a))


@settings(max_examples=30, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2), st.integers(0, 1000))
def test_quantile_pvalue_invariant_under_monotone_scale(m1, m2, seed):
    rng = np.random.default_rng(seed)
    a = np.exp(rng.normal(m1, 1.0, 1500))
    b = np.exp(rng.normal(m2, 1.0, 1500))
    c_id = conflict_pvalue(difference_sample(a, b, "identity", np.random.default_rng(seed)))
    c_log = conflict_pvalue(difference_sample(a, b, "log10", np.random.default_rng(seed)))
    assert c_id == c_log


def test_unequal_lengths_are_thinned():
    d = difference_sample(np.ones(3000), np.zeros(1200))
    assert len(d.delta) == 1200


# --- calibration -------------------------------------------------------------------------------------

def _null_generator(rng):
    mu = rng.normal(0.0, PRIOR_SD)
    return _graph(), _data(rng.normal(mu, 1.0, 2))


def test_null_pvalues_look_uniform():
    split = NodeSplit.two_way("mu", ["y1"], ["y2"], VAGUE)
    res = uniformity_check(_null_generator, split, 25, ChainConfig(iterations=3000, burn_in=500), seed=1)
    assert len(res.pvalues) == 25
    assert np.all((res.pvalues >= 0) & (res.pvalues <= 1))
    assert res.ks_pvalue > 0.001


def test_constant_pvalue_generator_is_rejected():
    split = NodeSplit.two_way("mu", ["y1"], ["y2"], VAGUE)
    res = uniformity_check(_null_generator, split, 50, pvalue=lambda rng, g, d: 0.5)
    assert res.ks_pvalue < 0.01


def test_single_replicate_ecdf_is_a_step():
    split = NodeSplit.two_way("mu", ["y1"], ["y2"], VAGUE)
    res = uniformity_check(_null_generator, split, 1, pvalue=lambda rng, g, d: 0.3)
    assert_allclose(res.ecdf([0.0, 0.29, 0.3, 0.9]), [0, 0, 1, 1])


def test_report_files(tmp_path):
    rng = np.random.default_rng(5)
    d = DifferenceSample(rng.normal(1, 1, 2000))
    lines = write_delta_histogram(d, tmp_path / "delta.csv", bins=10).read_text().splitlines()
    assert lines[0] == "lower,upper,density" and len(lines) == 11
    over = write_overlay_csv({"a": rng.normal(0, 1, 500), "b": rng.normal(1, 1, 500)},
                             tmp_path / "overlay.csv", n_grid=20)
    assert over.read_text().splitlines()[0] == "h(identity),a,b"
