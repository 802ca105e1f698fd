"""Shared domain types, probability kernels and the likelihood product."""

from episynth.core.graph import (
    BasicNode,
    ConstantNode,
    DataNode,
    FunctionalNode,
    GraphPosterior,
    ModelGraph,
    log_likelihood_product,
)
from episynth.core.kernels import (
    binomial_logpmf,
    expit,
    logit,
    negbin_logpmf,
    normal_logpdf,
    poisson_logpmf,
)
from episynth.core.likelihoods import (
    Binomial,
    Custom,
    LogNormalPoint,
    NegBinomial,
    Normal,
    Poisson,
)
from episynth.core.priors import PriorSpec, Transform
from episynth.core.streams import (
    AgeStructure,
    DataStream,
    Manifest,
    StreamKind,
    TimeGrid,
    load_manifest,
    read_stream_csv,
    write_stream_csv,
)

__all__ = [
    "AgeStructure", "BasicNode", "Binomial", "ConstantNode", "Custom", "DataNode",
    "DataStream", "FunctionalNode", "GraphPosterior", "LogNormalPoint", "Manifest",
    "ModelGraph", "NegBinomial", "Normal", "Poisson", "PriorSpec", "StreamKind",
    "TimeGrid", "Transform", "binomial_logpmf", "expit", "load_manifest",
    "log_likelihood_product", "logit", "negbin_logpmf", "normal_logpdf",
    "poisson_logpmf", "read_stream_csv", "write_stream_csv",
]
