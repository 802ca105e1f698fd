"""Node-splitting conflict diagnostics.

A model graph is cut at a *separator* node into independently fitted
partitions. One partition may keep the separator's upstream structure (its
prior); every other partition sees the separator as a founder with a split
prior, typically vague. Paired posterior draws give the difference
``delta = h(phi_a) - h(phi_b)`` and a two-sided conflict p-value says where
zero lies in its distribution.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import numpy as np
from scipy import stats

from episynth.core.graph import BasicNode, DataNode, ModelGraph
from episynth.core.priors import PriorSpec
from episynth.core.streams import DataStream, as_stream_map
from episynth.errors import ConfigurationError, SplitDesignError, UndefinedPValueError
from episynth.logs import get_logger, kv
from episynth.mcmc import ChainConfig, PosteriorSample, run_chain

log = get_logger(__name__)

SCALES = ("identity", "log10", "logit")
METHODS = ("quantile", "density")
MIN_DRAWS = 1000


def apply_scale(x, scale: str):
    x = np.asarray(x, dtype=float)
    if scale == "identity":
        return x
    with np.errstate(divide="ignore", invalid="ignore"):
        if scale == "log10":
            return np.log10(x)
        if scale == "logit":
            return np.log(x) - np.log1p(-x)
    raise ConfigurationError(f"unknown comparison scale {scale!r}; use one of {SCALES}")


@dataclass(frozen=True)
class Partition:
    """Data nodes fitted together; ``owner`` keeps the separator's own prior structure.

    A non-owner partition sees the separator as a founder with ``split_prior``.
    """

    name: str
    data: tuple[str, ...]
    owner: bool = False
    split_prior: PriorSpec | None = None

    def __post_init__(self):
        object.__setattr__(self, "data", tuple(self.data))


@dataclass
class NodeSplit:
    separator: str
    partitions: list[Partition]
    scale: str = "identity"
    method: str = "quantile"

    def __post_init__(self):
        if self.scale not in SCALES:
            raise ConfigurationError(f"unknown comparison scale {self.scale!r}; use one of {SCALES}")
        if self.method not in METHODS:
            raise ConfigurationError(f"unknown conflict method {self.method!r}; use one of {METHODS}")
        if len(self.partitions) < 2:
            raise SplitDesignError("a node split needs at least two partitions")
        names = [p.name for p in self.partitions]
        if len(set(names)) != len(names):
            raise SplitDesignError(f"partition names must be unique: {names}")
        if sum(p.owner for p in self.partitions) > 1:
            raise SplitDesignError("at most one partition can keep the separator's prior")

    @classmethod
    def two_way(cls, separator: str, parent: Sequence[str], child: Sequence[str],
                child_prior: PriorSpec, scale: str = "identity", method: str = "quantile") -> "NodeSplit":
        """Parent side keeps the separator's prior; the child side gets ``child_prior``."""
        return cls(separator, [Partition("a", tuple(parent), owner=True),
                               Partition("b", tuple(child), split_prior=child_prior)], scale, method)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "NodeSplit":
        """Read a split manifest: separator, partitions (name, data, owner, split_prior), scale, method."""
        try:
            parts = [Partition(p["name"], tuple(p["data"]), bool(p.get("owner", False)),
                               PriorSpec.from_dict(p["split_prior"]) if p.get("split_prior") else None)
                     for p in d["partitions"]]
            return cls(d["separator"], parts, d.get("scale", "identity"), d.get("method", "quantile"))
        except KeyError as exc:
            raise ConfigurationError(f"split manifest field missing: {exc.args[0]}") from exc

    def validate(self, graph: ModelGraph) -> None:
        """Check disjointness, exhaustiveness and that every partition can learn the separator."""
        sep = self.separator
        if sep not in graph:
            raise SplitDesignError(f"separator {sep!r} is not a node of the graph")
        seen: dict[str, str] = {}
        for p in self.partitions:
            for d in p.data:
                if d not in graph or not isinstance(graph[d], DataNode):
                    raise SplitDesignError(f"partition {p.name!r}: {d!r} is not a data node")
                if d in seen:
                    raise SplitDesignError(f"data node {d!r} is in both {seen[d]!r} and {p.name!r}")
                seen[d] = p.name
        below = set(_downstream_data(graph, sep))
        unassigned = [d for d in _touching(graph, sep) if d not in seen]
        if unassigned:
            raise SplitDesignError(f"data nodes {unassigned} touch {sep!r} but belong to no partition")
        for p in self.partitions:
            if p.owner:
                continue  # the separator's own prior structure is proper
            if p.split_prior is None:
                raise SplitDesignError(f"partition {p.name!r} needs a split prior for {sep!r}")
            if not below & set(p.data):
                raise SplitDesignError(
                    f"partition {p.name!r} has no evidence on {sep!r}: none of {list(p.data)} "
                    f"lies downstream of it (needs one of {sorted(below)})")


def _downstream_data(graph: ModelGraph, name: str) -> list[str]:
    return [d.name for d in graph.data_nodes if name in graph.ancestors([d.name])]


def _touching(graph: ModelGraph, sep: str) -> list[str]:
    """Data nodes below the separator or informing one of its basic ancestors."""
    upstream = {n for n in graph.ancestors([sep]) if isinstance(graph[n], BasicNode)}
    if isinstance(graph[sep], BasicNode):
        upstream.add(sep)
    out = []
    for d in graph.data_nodes:
        anc = graph.ancestors([d.name])
        if sep in anc or anc & upstream:
            out.append(d.name)
    return out


def partition_graph(graph: ModelGraph, split: NodeSplit, part: Partition) -> ModelGraph:
    """The sub-graph fitted for one partition; no evidence crosses the cut."""
    sep = split.separator
    if part.owner:
        return graph.restrict(part.data, keep=(sep,))
    return graph.cut(sep, part.split_prior, _node_size(graph, sep)).restrict(part.data, keep=(sep,))


def _node_size(graph: ModelGraph, name: str) -> int | None:
    """Plate length of a node; functional nodes are evaluated at one prior draw to find it."""
    node = graph[name]
    if isinstance(node, BasicNode):
        return node.size
    theta = graph.sample_prior(np.random.default_rng(0), 2)
    shape = np.shape(graph.evaluate(theta, [name])[name])[1:]
    if len(shape) > 1:
        raise SplitDesignError(f"separator {name!r} must be a scalar or a vector over one plate")
    return int(shape[0]) if shape else None


def _partition_data(data: Mapping[str, DataStream], graph: ModelGraph, names: Sequence[str]):
    streams = {s for n in names for s in graph[n].streams}
    return {k: v for k, v in data.items() if k in streams}


def separator_draws(sample: PosteriorSample, graph: ModelGraph, separator: str) -> np.ndarray:
    theta = sample.to_theta(graph)
    return np.asarray(graph.evaluate(theta, names=[separator])[separator], dtype=float)


@dataclass
class SplitFit:
    split: NodeSplit
    samples: dict[str, PosteriorSample]
    separator: dict[str, np.ndarray]
    graphs: dict[str, ModelGraph] = field(default_factory=dict)

    def medians(self) -> dict[str, np.ndarray]:
        return {k: np.median(v, axis=0) for k, v in self.separator.items()}


def split_and_fit(graph: ModelGraph, data, split: NodeSplit, config: ChainConfig | None = None) -> SplitFit:
    """Fit every partition independently and collect posterior draws of the separator."""
    data = as_stream_map(data)
    split.validate(graph)
    cfg = config or ChainConfig()
    samples, seps, graphs = {}, {}, {}
    for i, part in enumerate(split.partitions):
        g = partition_graph(graph, split, part)
        d = _partition_data(data, graph, part.data)
        s = run_chain(g, d, cfg, chain=i)
        samples[part.name] = s
        seps[part.name] = separator_draws(s, g, split.separator)
        graphs[part.name] = g
        log.info(kv("partition", name=part.name, data=list(part.data), draws=len(s),
                    acceptance=round(s.acceptance, 3)))
    return SplitFit(split, samples, seps, graphs)


# --- difference function and p-values ---------------------------------------------------------------

@dataclass
class DifferenceSample:
    delta: np.ndarray
    scale: str = "identity"
    labels: tuple[str, str] = ("a", "b")

    def __post_init__(self):
        self.delta = np.asarray(self.delta, dtype=float)
        if len(self.delta) < MIN_DRAWS:
            raise ConfigurationError(f"need at least {MIN_DRAWS} paired draws, got {len(self.delta)}")
        if not np.all(np.isfinite(self.delta)):
            raise ConfigurationError("difference draws must be finite")


def _thin_to(x: np.ndarray, n: int) -> np.ndarray:
    idx = np.round(np.linspace(0, len(x) - 1, n)).astype(int)
    return x[idx]


def difference_sample(phi_a, phi_b, scale: str = "identity", rng: np.random.Generator | None = None,
                      labels: tuple[str, str] = ("a", "b")) -> DifferenceSample:
    """Pair independent draws by a random permutation after thinning to a common length."""
    rng = rng or np.random.default_rng(0)
    a = np.asarray(phi_a, dtype=float)
    b = np.asarray(phi_b, dtype=float)
    n = min(len(a), len(b))
    a, b = _thin_to(a, n), _thin_to(b, n)
    b = b[rng.permutation(n)]
    return DifferenceSample(apply_scale(a, scale) - apply_scale(b, scale), scale, labels)


def conflict_pvalue(diff, method: str = "quantile") -> float:
    """Two-sided conflict p-value for ``H0: delta = 0``.

    ``quantile``: ``2 min(P(delta < 0), P(delta > 0))``, ties split evenly.
    ``density``: the posterior mass where the kernel density of ``delta`` is
    no higher than at zero.
    """
    delta = np.asarray(diff.delta if isinstance(diff, DifferenceSample) else diff, dtype=float).ravel()
    if delta.size == 0:
        raise ConfigurationError("empty difference sample")
    if np.ptp(delta) == 0:
        raise UndefinedPValueError("difference draws have zero variance; the conflict p-value is undefined")
    if method == "quantile":
        ties = np.mean(delta == 0)
        lower = np.mean(delta < 0) + 0.5 * ties
        return float(min(1.0, 2 * min(lower, 1 - lower)))
    if method == "density":
        kde = stats.gaussian_kde(delta, bw_method="silverman")
        # tabulate the density: evaluating the estimate at every draw is quadratic in the draws
        bw = float(np.sqrt(kde.covariance[0, 0]))
        grid = np.linspace(min(delta.min(), 0.0) - 4 * bw, max(delta.max(), 0.0) + 4 * bw, 2048)
        table = kde(grid)
        at_zero = np.interp(0.0, grid, table)
        return float(np.mean(np.interp(delta, grid, table) <= at_zero))
    raise ConfigurationError(f"unknown conflict method {method!r}; use one of {METHODS}")


def pairwise_conflicts(fit: SplitFit, rng: np.random.Generator | None = None,
                       method: str | None = None) -> dict[tuple[str, str], Any]:
    """Conflict p-values between every pair of partitions (elementwise for vector separators)."""
    rng = rng or np.random.default_rng(0)
    method = method or fit.split.method
    names = [p.name for p in fit.split.partitions]
    out = {}
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            xa, xb = fit.separator[a], fit.separator[b]
            if xa.ndim == 1:
                out[(a, b)] = conflict_pvalue(difference_sample(xa, xb, fit.split.scale, rng, (a, b)), method)
            else:
                out[(a, b)] = np.array([
                    conflict_pvalue(difference_sample(xa[:, j], xb[:, j], fit.split.scale, rng, (a, b)), method)
                    for j in range(xa.shape[1])])
    return out


# --- calibration ---------------------------------------------------------------------------------------

@dataclass
class UniformityResult:
    pvalues: np.ndarray
    ks_statistic: float
    ks_pvalue: float

    def ecdf(self, x):
        """Empirical CDF of the replicated conflict p-values."""
        x = np.asarray(x, dtype=float)
        return np.searchsorted(np.sort(self.pvalues), x, side="right") / len(self.pvalues)


def uniformity_check(generator: Callable[[np.random.Generator], tuple[ModelGraph, Mapping[str, DataStream]]],
                     split: NodeSplit, replicates: int, config: ChainConfig | None = None, seed: int = 0,
                     pvalue: Callable[[np.random.Generator, ModelGraph, Any], float] | None = None
                     ) -> UniformityResult:
    """Replicate the split under data simulated from the model itself and test ``c ~ U(0, 1)``.

    ``generator(rng)`` returns a graph and a dataset drawn from its own prior
    predictive. ``pvalue`` may replace the default pipeline (split, fit,
    pair, p-value) with any callable ``(rng, graph, data) -> c``.
    """
    if replicates < 1:
        raise ConfigurationError("need at least one replicate")
    root = np.random.default_rng(seed)
    cfg = config or ChainConfig()
    cs = np.empty(replicates)
    for r in range(replicates):
        rng = np.random.default_rng(root.integers(2**63))
        graph, data = generator(rng)
        if pvalue is not None:
            cs[r] = pvalue(rng, graph, data)
            continue
        fit = split_and_fit(graph, data, split, ChainConfig(**{**cfg.__dict__, "seed": int(rng.integers(2**31))}))
        a, b = split.partitions[0].name, split.partitions[1].name
        cs[r] = conflict_pvalue(difference_sample(fit.separator[a], fit.separator[b], split.scale, rng),
                                split.method)
    ks = stats.kstest(cs, "uniform")
    log.info(kv("uniformity", replicates=replicates, ks=float(ks.statistic), p=float(ks.pvalue)))
    return UniformityResult(cs, float(ks.statistic), float(ks.pvalue))


# --- influence and reports ------------------------------------------------------------------------------

def full_model_draws(graph: ModelGraph, data, separator: str, config: ChainConfig | None = None) -> np.ndarray:
    """Posterior draws of the separator under the unsplit model (all evidence together)."""
    s = run_chain(graph, as_stream_map(data), config or ChainConfig(), chain=99)
    return separator_draws(s, graph, separator)


def is_compromise(full, partition_medians: Sequence[float]) -> bool:
    """Does the full-model median lie within the span of the partition medians?"""
    m = float(np.median(full))
    return min(partition_medians) <= m <= max(partition_medians)


def write_delta_histogram(diff: DifferenceSample, path: str | Path, bins: int = 50) -> Path:
    counts, edges = np.histogram(diff.delta, bins=bins, density=True)
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["lower", "upper", "density"])
        for lo, hi, c in zip(edges[:-1], edges[1:], counts):
            w.writerow([f"{lo:.6g}", f"{hi:.6g}", f"{c:.6g}"])
    return path


def write_overlay_csv(draws: Mapping[str, np.ndarray], path: str | Path, scale: str = "identity",
                      n_grid: int = 200) -> Path:
    """Kernel density of each partition's (and the full model's) separator on a common grid."""
    vals = {k: apply_scale(np.asarray(v, dtype=float).ravel(), scale) for k, v in draws.items()}
    lo = min(v.min() for v in vals.values())
    hi = max(v.max() for v in vals.values())
    pad = 0.1 * (hi - lo or 1.0)
    grid = np.linspace(lo - pad, hi + pad, n_grid)
    dens = {k: stats.gaussian_kde(v)(grid) if np.std(v) > 0 else np.zeros(n_grid) for k, v in vals.items()}
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"h({scale})", *vals])
        for i, x in enumerate(grid):
            w.writerow([f"{x:.6g}", *(f"{dens[k][i]:.6g}" for k in vals)])
    return path


def format_report(separator: str, pvalues: Mapping[tuple[str, str], Any], scale: str, method: str) -> str:
    """Plain-text conflict report, one line per pair of partitions."""
    lines = [f"separator: {separator}", f"scale: {scale}", f"method: {method}"]
    for (a, b), c in pvalues.items():
        cs = np.atleast_1d(c)
        lines.append(f"{a} vs {b}: c = " + ", ".join(f"{v:.3f}" for v in cs))
    return "\n".join(lines) + "\n"


def write_report_json(separator: str, pvalues: Mapping[tuple[str, str], Any], path: str | Path) -> Path:
    path = Path(path)
    path.write_text(json.dumps({"separator": separator,
                                "pvalues": {f"{a}|{b}": np.asarray(c).tolist() for (a, b), c in pvalues.items()}},
                               indent=1, sort_keys=True) + "\n")
    return path
