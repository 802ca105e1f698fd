"""Plain-text description of a model graph's structure.

The document lists nodes in topological order with their kind (founder,
constant, functional, data) and plate, followed by the edges with their kind:
an edge is *stochastic* when the child is drawn from a distribution indexed
by the parent (data given its parent, a founder whose prior is centred on
another node) and *deterministic* otherwise. Example::

    # episynth-dag 1
    node theta founder -
    node psi functional -
    node y data -
    edge theta psi deterministic
    edge psi y stochastic
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from episynth.core.graph import BasicNode, ConstantNode, DataNode, FunctionalNode, ModelGraph
from episynth.errors import ConfigurationError

HEADER = "# episynth-dag 1"
NODE_KINDS = ("founder", "constant", "functional", "data")
EDGE_KINDS = ("deterministic", "stochastic")


def node_kind(node) -> str:
    if isinstance(node, BasicNode):
        return "founder"
    if isinstance(node, ConstantNode):
        return "constant"
    if isinstance(node, FunctionalNode):
        return "functional"
    if isinstance(node, DataNode):
        return "data"
    raise ConfigurationError(f"unknown node type {type(node).__name__}")


@dataclass
class DagDocument:
    nodes: list[tuple[str, str, str | None]] = field(default_factory=list)  # (name, kind, plate)
    edges: list[tuple[str, str, str]] = field(default_factory=list)         # (parent, child, kind)

    def to_text(self) -> str:
        lines = [HEADER]
        lines += [f"node {n} {k} {p or '-'}" for n, k, p in self.nodes]
        lines += [f"edge {a} {b} {k}" for a, b, k in self.edges]
        return "\n".join(lines) + "\n"

    def census(self) -> dict[str, list[str]]:
        """Node names grouped by kind."""
        out: dict[str, list[str]] = {k: [] for k in NODE_KINDS}
        for n, k, _ in self.nodes:
            out[k].append(n)
        return out

    def plates(self) -> dict[str, list[str]]:
        out: dict[str, list[str]] = {}
        for n, _, p in self.nodes:
            if p:
                out.setdefault(p, []).append(n)
        return out


def describe(graph: ModelGraph) -> DagDocument:
    order = [n.name for n in graph.order_nodes]
    rank = {name: i for i, name in enumerate(order)}
    doc = DagDocument()
    for n in graph.order_nodes:
        doc.nodes.append((n.name, node_kind(n), getattr(n, "plate", None)))
    edges = []
    for n in graph.order_nodes:
        kind = "stochastic" if isinstance(n, (DataNode, BasicNode)) else "deterministic"
        for p in n.parents:
            edges.append((rank[n.name], rank[p], p, n.name, kind))
    doc.edges = [(p, c, k) for _, _, p, c, k in sorted(edges)]
    return doc


def export_dag(graph: ModelGraph) -> str:
    """The graph-description document; a pure function of the graph."""
    return describe(graph).to_text()


def parse_dag(text: str) -> DagDocument:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != HEADER:
        raise ConfigurationError(f"not a DAG document: expected header {HEADER!r}")
    doc = DagDocument()
    names: set[str] = set()
    for i, ln in enumerate(lines[1:], start=2):
        parts = ln.split()
        if parts[0] == "node" and len(parts) == 4 and parts[2] in NODE_KINDS:
            doc.nodes.append((parts[1], parts[2], None if parts[3] == "-" else parts[3]))
            names.add(parts[1])
        elif parts[0] == "edge" and len(parts) == 4 and parts[3] in EDGE_KINDS:
            if parts[1] not in names or parts[2] not in names:
                raise ConfigurationError(f"line {i}: edge refers to an undeclared node")
            doc.edges.append((parts[1], parts[2], parts[3]))
        else:
            raise ConfigurationError(f"line {i}: cannot parse {ln!r}")
    return doc


def write_dag(graph: ModelGraph, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(export_dag(graph))
    return path
