"""Deterministic agent-graph simulation engine.

A population is a directed graph of individuals with real-valued attributes.
Each cycle runs in three synchronous stages:

1. influence values are computed for every connection from the pre-cycle
   state of its source individual;
2. every individual's attributes are recomputed from its own pre-cycle state
   and the influences arriving on incoming connections (double-buffered, so
   evaluation order cannot leak into results);
3. connection rules run against the post-update individual states and may
   rewrite connection attributes.

Randomness is confined to keyed substreams: stage 3 derives one stream per
(cycle, connection), so results are identical whether entities are evaluated
sequentially or in parallel.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

from .errors import InfeasibleDegree, InvalidParam
from .rng import Rng, mix

GENERATION_STREAM = "population"
_CYCLE_STREAM = "cycle"
_EDGE_STREAM = "edge"


# ---------------------------------------------------------------------------
# attribute initializers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AttrInit:
    """Distribution spec for one attribute: a constant or uniform(low, high)."""

    dist: str  # "constant" | "uniform"
    value: float = 0.0
    low: float = 0.0
    high: float = 1.0

    @staticmethod
    def parse(spec) -> "AttrInit":
        if isinstance(spec, bool):
            raise InvalidParam("attribute initializer must be a number or object")
        if isinstance(spec, (int, float)):
            return AttrInit("constant", value=float(spec))
        if isinstance(spec, Mapping):
            dist = spec.get("dist")
            if dist == "constant":
                return AttrInit("constant", value=float(spec["value"]))
            if dist == "uniform":
                low = float(spec["low"])
                high = float(spec["high"])
                if high < low:
                    raise InvalidParam("uniform initializer needs low <= high")
                return AttrInit("uniform", low=low, high=high)
        raise InvalidParam(f"bad attribute initializer: {spec!r}")

    def sample(self, rng: Rng) -> float:
        if self.dist == "constant":
            return self.value
        return rng.uniform(self.low, self.high)


# ---------------------------------------------------------------------------
# graph
# ---------------------------------------------------------------------------

class Individual:
    __slots__ = ("id", "attrs")

    def __init__(self, node_id: int, attrs: dict[str, float] | None = None):
        self.id = node_id
        self.attrs = attrs if attrs is not None else {}

    def __repr__(self) -> str:  # pragma: no cover
        return f"Individual({self.id}, {self.attrs})"


class Connection:
    __slots__ = ("src", "dst", "attrs")

    def __init__(self, src: int, dst: int, attrs: dict[str, float] | None = None):
        if src == dst:
            raise InvalidParam("self-loops are not allowed")
        self.src = src
        self.dst = dst
        self.attrs = attrs if attrs is not None else {}

    def __repr__(self) -> str:  # pragma: no cover
        return f"Connection({self.src}->{self.dst}, {self.attrs})"


class Graph:
    """Individuals plus directed connections, with incidence indexes."""

    def __init__(self, nodes: list[Individual], edges: list[Connection]):
        self.nodes = nodes
        self.edges = edges
        self.incoming: list[list[int]] = [[] for _ in nodes]
        self.outgoing: list[list[int]] = [[] for _ in nodes]
        for k, edge in enumerate(edges):
            self.outgoing[edge.src].append(k)
            self.incoming[edge.dst].append(k)

    @property
    def size(self) -> int:
        return len(self.nodes)

    def clone(self) -> "Graph":
        nodes = [Individual(n.id, dict(n.attrs)) for n in self.nodes]
        edges = [Connection(e.src, e.dst, dict(e.attrs)) for e in self.edges]
        return Graph(nodes, edges)


# ---------------------------------------------------------------------------
# population models
# ---------------------------------------------------------------------------

METHODS = ("random", "power_law")


@dataclass(frozen=True)
class PopulationModel:
    size: int
    min_degree: int
    max_degree: int
    method: str = "random"
    node_attrs: Mapping[str, AttrInit] = field(default_factory=dict)
    edge_attrs: Mapping[str, AttrInit] = field(default_factory=dict)

    def __post_init__(self):
        if self.size < 1:
            raise InvalidParam("population size must be positive")
        if self.method not in METHODS:
            raise InvalidParam(f"unknown generation method {self.method!r}")
        if not (0 <= self.min_degree <= self.max_degree):
            raise InvalidParam("need 0 <= min_degree <= max_degree")
        if self.max_degree >= self.size:
            raise InfeasibleDegree(
                f"max_degree {self.max_degree} needs at least "
                f"{self.max_degree + 1} individuals, population has {self.size}")

    @staticmethod
    def from_doc(doc: Mapping, size: int | None = None) -> "PopulationModel":
        if not isinstance(doc, Mapping):
            raise InvalidParam("population model must be an object")
        node_attrs = {name: AttrInit.parse(spec)
                      for name, spec in (doc.get("node_attrs") or {}).items()}
        edge_attrs = {name: AttrInit.parse(spec)
                      for name, spec in (doc.get("edge_attrs") or {}).items()}
        return PopulationModel(
            size=int(size if size is not None else doc["size"]),
            min_degree=int(doc.get("min_degree", 0)),
            max_degree=int(doc.get("max_degree", 0)),
            method=doc.get("method", "random"),
            node_attrs=node_attrs,
            edge_attrs=edge_attrs,
        )


def _generate_random(model: PopulationModel, rng: Rng) -> list[Connection]:
    edges: list[Connection] = []
    size = model.size
    for i in range(size):
        degree = rng.randint(model.min_degree, model.max_degree)
        chosen: set[int] = set()
        while len(chosen) < degree:
            target = rng.randint(0, size - 1)
            if target == i or target in chosen:
                continue
            chosen.add(target)
            edges.append(Connection(i, target))
    return edges


def _generate_power_law(model: PopulationModel, rng: Rng) -> list[Connection]:
    # Sequential preferential attachment: node i attaches to earlier nodes
    # with probability proportional to (in-degree + 1). The attachment bag
    # holds one baseline entry per eligible node plus one entry per received
    # edge, so a uniform draw from it realizes that distribution.
    edges: list[Connection] = []
    bag: list[int] = []
    for i in range(model.size):
        if i > 0:
            degree = min(rng.randint(model.min_degree, model.max_degree), i)
            chosen: set[int] = set()
            while len(chosen) < degree:
                target = bag[rng.randint(0, len(bag) - 1)]
                if target in chosen:
                    continue
                chosen.add(target)
                edges.append(Connection(i, target))
                bag.append(target)
        bag.append(i)
    return edges


def generate_population(model: PopulationModel, seed: int | Rng) -> Graph:
    """Build a population graph; deterministic for a given (model, seed)."""
    rng = seed if isinstance(seed, Rng) else Rng(seed)
    if model.method == "random":
        edges = _generate_random(model, rng)
    else:
        edges = _generate_power_law(model, rng)
    nodes = [Individual(i) for i in range(model.size)]
    for node in nodes:
        for name, init in model.node_attrs.items():
            node.attrs[name] = init.sample(rng)
    for edge in edges:
        for name, init in model.edge_attrs.items():
            edge.attrs[name] = init.sample(rng)
    return Graph(nodes, edges)


# ---------------------------------------------------------------------------
# rules
# ---------------------------------------------------------------------------

class CycleContext:
    """Carries the cycle index and the root seed for keyed substreams."""

    __slots__ = ("cycle_index", "root_seed")

    def __init__(self, cycle_index: int, root_seed: int):
        self.cycle_index = cycle_index
        self.root_seed = root_seed

    def edge_rng(self, edge_index: int) -> Rng:
        return Rng(mix(self.root_seed, _CYCLE_STREAM, self.cycle_index,
                       _EDGE_STREAM, edge_index))


@dataclass(frozen=True)
class RuleSet:
    """Behavior of one simulation model.

    influence:         (source attrs, connection attrs) -> float
    update_individual: (individual, incoming influence list, ctx) -> new attrs
    update_connection: (connection, src attrs, dst attrs, ctx, edge index)
                       -> new attrs or None for "unchanged"; src/dst attrs are
                       the post-update states
    population_attributes: ordered (name, graph -> value) extractors
    initialize:        optional hook run once on the freshly generated graph
    """

    name: str
    influence: Callable | None
    update_individual: Callable
    update_connection: Callable | None
    population_attributes: tuple[tuple[str, Callable], ...]
    initialize: Callable | None = None


def population_attributes(graph: Graph, rules: RuleSet) -> dict[str, float]:
    return {name: extract(graph) for name, extract in rules.population_attributes}


def _chunks(count: int, parts: int) -> list[range]:
    step = max(1, -(-count // parts))
    return [range(lo, min(lo + step, count)) for lo in range(0, count, step)]


def run_cycle(graph: Graph, rules: RuleSet, rng: Rng, cycle_index: int,
              executor: ThreadPoolExecutor | None = None) -> Graph:
    """Advance the graph by one synchronous cycle (mutates and returns it)."""
    ctx = CycleContext(cycle_index, rng.seed)
    nodes = graph.nodes
    edges = graph.edges

    if rules.influence is not None:
        def influence_range(rng_: range) -> list[float]:
            fn = rules.influence
            return [fn(nodes[edges[k].src].attrs, edges[k].attrs) for k in rng_]
        influences = _map_ranges(executor, influence_range, len(edges))
    else:
        influences = [0.0] * len(edges)

    incoming = graph.incoming

    def update_range(rng_: range) -> list[dict]:
        fn = rules.update_individual
        return [fn(nodes[i], [influences[k] for k in incoming[i]], ctx)
                for i in rng_]

    new_attrs = _map_ranges(executor, update_range, len(nodes))
    for node, attrs in zip(nodes, new_attrs):
        node.attrs = attrs

    if rules.update_connection is not None:
        def connection_range(rng_: range) -> list[dict | None]:
            fn = rules.update_connection
            return [fn(edges[k], nodes[edges[k].src].attrs,
                       nodes[edges[k].dst].attrs, ctx, k) for k in rng_]
        updates = _map_ranges(executor, connection_range, len(edges))
        for edge, attrs in zip(edges, updates):
            if attrs is not None:
                edge.attrs = attrs
    return graph


def _map_ranges(executor: ThreadPoolExecutor | None, fn, count: int) -> list:
    if executor is None or count < 2:
        return fn(range(count))
    out: list = []
    for part in executor.map(fn, _chunks(count, executor._max_workers)):
        out.extend(part)
    return out


# ---------------------------------------------------------------------------
# full runs
# ---------------------------------------------------------------------------

@dataclass
class SimulationTrace:
    """Per-cycle population attributes; entry 0 is the initial state."""

    rules_name: str
    seed: int
    cycles: int
    entries: list[dict[str, float]]
    final_graph: Graph

    def to_doc(self, include_graph: bool = False) -> dict:
        doc = {
            "manifest": {
                "rules": self.rules_name,
                "seed": self.seed,
                "cycles": self.cycles,
                "population": self.final_graph.size,
            },
            "cycles": [
                {"index": i, "attributes": entry}
                for i, entry in enumerate(self.entries)
            ],
        }
        if include_graph:
            doc["nodes"] = [
                {"id": n.id, "attrs": dict(n.attrs)} for n in self.final_graph.nodes
            ]
            doc["edges"] = [
                {"from": e.src, "to": e.dst, "attrs": dict(e.attrs)}
                for e in self.final_graph.edges
            ]
        return doc


def run_simulation(model: PopulationModel, rules: RuleSet, cycles: int,
                   seed: int, executor: ThreadPoolExecutor | None = None) -> SimulationTrace:
    """Generate a population and run ``cycles`` cycles.

    The trace has ``cycles + 1`` entries; entry 0 reflects the initial
    population. Identical (model, rules, cycles, seed) yield identical traces.
    """
    if cycles < 0:
        raise InvalidParam("cycle count must be >= 0")
    rng = Rng(seed)
    graph = generate_population(model, rng.substream(GENERATION_STREAM))
    if rules.initialize is not None:
        rules.initialize(graph)
    entries = [population_attributes(graph, rules)]
    for cycle in range(1, cycles + 1):
        run_cycle(graph, rules, rng, cycle, executor=executor)
        entries.append(population_attributes(graph, rules))
    return SimulationTrace(rules.name, seed, cycles, entries, graph)
