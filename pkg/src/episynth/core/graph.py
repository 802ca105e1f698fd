"""Directed acyclic model graphs: basic, constant, functional and data nodes.

A :class:`ModelGraph` is immutable. Parameter values are passed around as a
``theta`` dict keyed by basic-node name; every value may carry leading batch
axes, so one call can evaluate many parameter vectors at once.
"""

from __future__ import annotations

import graphlib
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping

import numpy as np

from episynth.core.likelihoods import Likelihood
from episynth.core.priors import PriorSpec, Transform
from episynth.core.streams import DataStream, as_stream_map
from episynth.errors import ConfigurationError, EvaluationError


@dataclass(frozen=True)
class BasicNode:
    """Founder parameter with a prior; ``size`` makes it a vector over a plate."""

    name: str
    prior: PriorSpec
    size: int | None = None
    plate: str | None = None

    @property
    def parents(self) -> tuple[str, ...]:
        return (self.prior.center,) if self.prior.center else ()


@dataclass(frozen=True)
class ConstantNode:
    name: str
    value: Any
    plate: str | None = None
    parents: tuple[str, ...] = ()


@dataclass(frozen=True)
class FunctionalNode:
    """Deterministic function of its parents, called positionally."""

    name: str
    parents: tuple[str, ...]
    func: Callable[..., Any]
    plate: str | None = None


@dataclass(frozen=True)
class DataNode:
    """Observed stream(s) with one functional parent and an observation model."""

    name: str
    parent: str
    likelihood: Likelihood | Callable[..., Any]
    streams: tuple[str, ...] = ()
    plate: str | None = None

    def __post_init__(self):
        if not self.streams:
            object.__setattr__(self, "streams", (self.name,))

    @property
    def parents(self) -> tuple[str, ...]:
        return (self.parent,)


Node = BasicNode | ConstantNode | FunctionalNode | DataNode


def _check_finite(name: str, value: Any) -> None:
    if isinstance(value, Mapping):
        for v in value.values():
            _check_finite(name, v)
    elif isinstance(value, (float, np.floating, np.ndarray)):
        arr = np.asarray(value)
        if arr.dtype.kind == "f" and np.isnan(arr).any():
            raise EvaluationError(name)


class ModelGraph:
    """Evidence-synthesis DAG.

    Nodes keep their insertion order; :attr:`order` is a topological order
    that breaks ties by that insertion order, so exports are deterministic.
    """

    def __init__(self, nodes: Iterable[Node]):
        nodes = list(nodes)
        self._nodes: dict[str, Node] = {}
        for n in nodes:
            if n.name in self._nodes:
                raise ConfigurationError(f"duplicate node name {n.name!r}")
            self._nodes[n.name] = n
        self._validate()
        self.order = self._toposort()
        self._basic = [n for n in self.order_nodes if isinstance(n, BasicNode)]
        self._slices: dict[str, slice] = {}
        start = 0
        for n in self._basic:
            width = 1 if n.size is None else int(n.size)
            self._slices[n.name] = slice(start, start + width)
            start += width
        self.dim = start

    # --- structure ------------------------------------------------------------

    def _validate(self) -> None:
        for n in self._nodes.values():
            for p in n.parents:
                if p not in self._nodes:
                    raise ConfigurationError(f"node {n.name!r} references unknown parent {p!r}")
                if isinstance(self._nodes[p], DataNode):
                    raise ConfigurationError(f"data node {p!r} cannot be a parent of {n.name!r}")
            if isinstance(n, DataNode) and isinstance(self._nodes[n.parent], DataNode):
                raise ConfigurationError(f"data node {n.name!r} needs a functional parent")
            if isinstance(n, FunctionalNode) and not n.parents:
                raise ConfigurationError(f"functional node {n.name!r} has no parents")
            if isinstance(n, BasicNode) and n.prior.center is not None:
                c = self._nodes[n.prior.center]
                if not isinstance(c, (BasicNode, ConstantNode)):
                    raise ConfigurationError(f"prior of {n.name!r} centred on non-founder {c.name!r}")
                if isinstance(c, BasicNode) and c.size != n.size:
                    raise ConfigurationError(f"prior of {n.name!r} centred on node of different size")

    def _toposort(self) -> list[str]:
        ts = graphlib.TopologicalSorter({n.name: set(n.parents) for n in self._nodes.values()})
        try:
            ts.prepare()
        except graphlib.CycleError as exc:
            raise ConfigurationError(f"model graph has a cycle: {exc.args[1]}") from exc
        rank = {name: i for i, name in enumerate(self._nodes)}
        order: list[str] = []
        while ts.is_active():
            ready = sorted(ts.get_ready(), key=rank.__getitem__)
            order.extend(ready)
            ts.done(*ready)
        return order

    def __contains__(self, name: str) -> bool:
        return name in self._nodes

    def __getitem__(self, name: str) -> Node:
        return self._nodes[name]

    @property
    def nodes(self) -> list[Node]:
        return list(self._nodes.values())

    @property
    def order_nodes(self) -> list[Node]:
        return [self._nodes[k] for k in self.order]

    @property
    def basic_nodes(self) -> list[BasicNode]:
        return list(self._basic)

    @property
    def data_nodes(self) -> list[DataNode]:
        return [n for n in self.order_nodes if isinstance(n, DataNode)]

    @property
    def param_names(self) -> list[str]:
        return [n.name for n in self._basic]

    @property
    def flat_names(self) -> list[str]:
        out = []
        for n in self._basic:
            if n.size is None:
                out.append(n.name)
            else:
                out.extend(f"{n.name}[{i}]" for i in range(n.size))
        return out

    def children(self, name: str) -> list[str]:
        return [n.name for n in self.order_nodes if name in n.parents]

    def ancestors(self, names: Iterable[str]) -> set[str]:
        seen: set[str] = set()
        stack = list(names)
        while stack:
            k = stack.pop()
            for p in self._nodes[k].parents:
                if p not in seen:
                    seen.add(p)
                    stack.append(p)
        return seen

    # --- derived graphs ----------------------------------------------------------

    def replace_nodes(self, *new: Node) -> "ModelGraph":
        """Copy of the graph with same-named nodes swapped, new ones appended."""
        table = dict(self._nodes)
        for n in new:
            table[n.name] = n
        return ModelGraph(table.values())

    def fix(self, values: Mapping[str, Any] | None = None, **kw: Any) -> "ModelGraph":
        """Replace basic nodes by constants (e.g. ``d_S = 1`` for the naive variant)."""
        new = []
        for k, v in {**(values or {}), **kw}.items():
            if not isinstance(self._nodes.get(k), BasicNode):
                raise ConfigurationError(f"{k!r} is not a basic node")
            new.append(ConstantNode(k, v, self._nodes[k].plate))
        return self.replace_nodes(*new)

    def cut(self, name: str, prior: PriorSpec, size: int | None = None) -> "ModelGraph":
        """Turn ``name`` into a founder with ``prior``, severing its parents."""
        old = self._nodes[name]
        node = BasicNode(name, prior, size if size is not None else getattr(old, "size", None), old.plate)
        return self.replace_nodes(node).restrict(
            [d.name for d in self.data_nodes], keep=(name,))

    def restrict(self, data_names: Iterable[str], keep: Iterable[str] = ()) -> "ModelGraph":
        """Keep the named data nodes and everything upstream of them or of ``keep``."""
        data_names = list(data_names)
        keep = list(keep)
        for d in data_names:
            if not isinstance(self._nodes.get(d), DataNode):
                raise ConfigurationError(f"{d!r} is not a data node")
        wanted = set(data_names) | set(keep)
        wanted |= self.ancestors(wanted)
        return ModelGraph(n for n in self._nodes.values() if n.name in wanted)

    # --- parameter vectors --------------------------------------------------------

    def unflatten(self, x) -> dict[str, np.ndarray]:
        x = np.asarray(x, dtype=float)
        out = {}
        for n in self._basic:
            sl = self._slices[n.name]
            out[n.name] = x[..., sl.start] if n.size is None else x[..., sl]
        return out

    def flatten(self, theta: Mapping[str, Any]) -> np.ndarray:
        parts = []
        for n in self._basic:
            v = np.asarray(theta[n.name], dtype=float)
            parts.append(v[..., None] if n.size is None else v)
        return np.concatenate(parts, axis=-1)

    @property
    def transforms(self) -> list[Transform]:
        out = []
        for n in self._basic:
            out.extend([n.prior.transform] * (1 if n.size is None else n.size))
        return out

    # --- evaluation ------------------------------------------------------------------

    def evaluate(self, theta: Mapping[str, Any], names: Iterable[str] | None = None,
                 cache: dict[str, Any] | None = None) -> dict[str, Any]:
        """Values of the requested non-data nodes (all of them by default)."""
        cache = {} if cache is None else cache
        targets = [n.name for n in self.order_nodes if not isinstance(n, DataNode)] if names is None else list(names)
        for t in targets:
            self._value(t, theta, cache)
        return cache

    def _value(self, name: str, theta: Mapping[str, Any], cache: dict[str, Any]):
        if name in cache:
            return cache[name]
        node = self._nodes[name]
        if isinstance(node, BasicNode):
            if name not in theta:
                raise ConfigurationError(f"theta is missing basic parameter {name!r}")
            val = np.asarray(theta[name], dtype=float)
        elif isinstance(node, ConstantNode):
            val = node.value
        elif isinstance(node, FunctionalNode):
            args = [self._value(p, theta, cache) for p in node.parents]
            with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                val = node.func(*args)
            _check_finite(name, val)
        else:
            raise ConfigurationError(f"data node {name!r} has no value")
        cache[name] = val
        return val

    def log_prior(self, theta: Mapping[str, Any], cache: dict[str, Any] | None = None):
        cache = {} if cache is None else cache
        total = 0.0
        for n in self._basic:
            x = self._value(n.name, theta, cache)
            center = self._value(n.prior.center, theta, cache) if n.prior.center else None
            lp = n.prior.logpdf(x, center)
            if n.size is not None:
                lp = np.sum(lp, axis=-1)
            total = total + lp
        return total

    def node_logliks(self, theta: Mapping[str, Any], data, require_all: bool = False,
                     cache: dict[str, Any] | None = None) -> dict[str, Any]:
        """Per-data-node log-likelihood for every data node with a bound stream."""
        data = as_stream_map(data)
        bound = {s for d in self.data_nodes for s in d.streams}
        stray = set(data) - bound
        if stray:
            raise ConfigurationError(f"streams {sorted(stray)} do not bind to any data node")
        cache = {} if cache is None else cache
        out: dict[str, Any] = {}
        for d in self.data_nodes:
            present = [s in data for s in d.streams]
            if not all(present):
                if require_all or any(present):
                    missing = [s for s, ok in zip(d.streams, present) if not ok]
                    raise ConfigurationError(f"data node {d.name!r} is unbound (missing {missing})")
                continue
            psi = self._value(d.parent, theta, cache)
            with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                ll = d.likelihood(psi, *[data[s] for s in d.streams])
            out[d.name] = np.where(np.isnan(ll), -np.inf, ll) if np.ndim(ll) else (
                -np.inf if np.isnan(ll) else float(ll))
        return out

    def log_likelihood(self, theta: Mapping[str, Any], data, require_all: bool = False):
        lls = self.node_logliks(theta, data, require_all)
        return sum(lls.values()) if lls else 0.0

    def sample_prior(self, rng: np.random.Generator, n: int | None = None) -> dict[str, np.ndarray]:
        theta: dict[str, np.ndarray] = {}
        cache: dict[str, Any] = {}
        for node in self._basic:
            center = None
            if node.prior.center:
                center = self._value(node.prior.center, theta, cache)
            shape: tuple[int, ...] = () if n is None else (n,)
            if node.size is not None:
                shape = shape + (node.size,)
            theta[node.name] = np.asarray(node.prior.sample(rng, shape or None, center), dtype=float)
            cache[node.name] = theta[node.name]
        return theta

    def posterior(self, data=None, require_all: bool = True) -> "GraphPosterior":
        return GraphPosterior(self, as_stream_map(data), require_all)


def log_likelihood_product(graph: ModelGraph, theta: Mapping[str, Any], data=None,
                           require_all: bool = False):
    """Sum of per-stream log densities over conditionally independent data nodes.

    Streams absent from ``data`` contribute nothing (an empty product), so
    any partition of the streams factorises the total exactly.
    """
    return graph.log_likelihood(theta, data, require_all)


@dataclass
class GraphPosterior:
    """Unnormalised posterior on the unconstrained scale, as seen by samplers."""

    graph: ModelGraph
    data: dict[str, DataStream] = field(default_factory=dict)
    require_all: bool = True

    def __post_init__(self):
        if self.require_all:
            # fail early on unbound nodes
            bound = set(self.data)
            for d in self.graph.data_nodes:
                missing = [s for s in d.streams if s not in bound]
                if missing:
                    raise ConfigurationError(f"data node {d.name!r} is unbound (missing {missing})")
        groups: dict[Transform, list[int]] = {}
        for i, t in enumerate(self.graph.transforms):
            groups.setdefault(t, []).append(i)
        self._groups = {t: np.array(ix) for t, ix in groups.items()}

    @property
    def names(self) -> list[str]:
        return self.graph.flat_names

    @property
    def dim(self) -> int:
        return self.graph.dim

    @property
    def node_names(self) -> list[str]:
        return [d.name for d in self.graph.data_nodes if all(s in self.data for s in d.streams)]

    def constrain(self, z):
        """Return ``(x, log|dx/dz|)`` for unconstrained ``z`` (batch axes allowed)."""
        z = np.asarray(z, dtype=float)
        x = np.empty_like(z)
        ljac = np.zeros(z.shape[:-1])
        for t, ix in self._groups.items():
            xi, lj = t.inverse(z[..., ix])
            x[..., ix] = xi
            ljac = ljac + np.sum(lj, axis=-1)
        return x, ljac

    def unconstrain(self, x):
        x = np.asarray(x, dtype=float)
        z = np.empty_like(x)
        for t, ix in self._groups.items():
            z[..., ix] = t.forward(x[..., ix])
        return z

    def log_prior(self, z):
        x, ljac = self.constrain(z)
        with np.errstate(invalid="ignore"):
            lp = self.graph.log_prior(self.graph.unflatten(x)) + ljac
        return np.where(np.isnan(lp), -np.inf, lp) if np.ndim(lp) else (
            -np.inf if np.isnan(lp) else float(lp))

    def node_logliks(self, z, data=None) -> dict[str, Any]:
        x, _ = self.constrain(z)
        return self.graph.node_logliks(self.graph.unflatten(x), self.data if data is None else data)

    def log_lik(self, z, data=None):
        lls = self.node_logliks(z, data)
        return sum(lls.values()) if lls else np.zeros(np.shape(z)[:-1])

    def logp(self, z):
        """Return ``(log posterior, per-node log-likelihoods)`` at ``z``."""
        lp = self.log_prior(z)
        if np.ndim(lp) == 0 and not np.isfinite(lp):
            return -np.inf, {}
        lls = self.node_logliks(z)
        total = lp + (sum(lls.values()) if lls else 0.0)
        return total, lls

    def initial_points(self, rng: np.random.Generator, n: int | None = None):
        x = self.graph.flatten(self.graph.sample_prior(rng, n))
        return self.unconstrain(x)
