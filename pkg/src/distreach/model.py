"""Domain types: agents, neighbor topology, networks and sets.

All array fields are stored as read-only float64 copies so that a validated
scenario can be shared freely between threads.
"""
from __future__ import annotations

import dataclasses
from typing import Mapping, Sequence

import numpy as np

from distreach.errors import (
    DimensionMismatch,
    EmptyNeighborSet,
    HorizonError,
    InvertedBounds,
    MissingNetwork,
    ScenarioValidationError,
    UnknownAgent,
)


def frozen_array(x, ndim=None) -> np.ndarray:
    arr = np.array(x, dtype=np.float64, copy=True)
    if ndim is not None and arr.ndim != ndim:
        if ndim == 1 and arr.ndim == 0:
            arr = arr.reshape(1)
        else:
            raise DimensionMismatch(f"expected a {ndim}-d array, got shape {arr.shape}")
    arr.flags.writeable = False
    return arr


@dataclasses.dataclass(frozen=True)
class Box:
    """Axis-aligned hyper-rectangle ``lower <= x <= upper``."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = frozen_array(self.lower, 1)
        hi = frozen_array(self.upper, 1)
        if lo.shape != hi.shape:
            raise DimensionMismatch(f"box bounds have shapes {lo.shape} and {hi.shape}")
        if np.any(lo > hi):
            bad = np.flatnonzero(lo > hi).tolist()
            raise InvertedBounds(f"box lower > upper at coordinates {bad}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def point(cls, x) -> "Box":
        return cls(x, x)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def is_degenerate(self) -> np.ndarray:
        return self.lower == self.upper

    def contains(self, x, tol: float = 0.0) -> bool:
        x = np.asarray(x)
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))

    def product(self, *others: "Box") -> "Box":
        boxes = (self,) + others
        return Box(np.concatenate([b.lower for b in boxes]), np.concatenate([b.upper for b in boxes]))

    def inflate(self, eps) -> "Box":
        return Box(self.lower - eps, self.upper + eps)

    def corners(self) -> np.ndarray:
        """All ``2**dim`` vertices, one per row (degenerate axes collapse)."""
        axes = [np.unique([lo, hi]) for lo, hi in zip(self.lower, self.upper)]
        grid = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in grid], axis=-1)

    def to_polytope(self) -> "Polytope":
        eye = np.eye(self.dim)
        return Polytope(np.vstack([eye, -eye]), np.concatenate([self.upper, -self.lower]))


@dataclasses.dataclass(frozen=True)
class Polytope:
    """Intersection of halfspaces ``normals @ x <= offsets``."""

    normals: np.ndarray
    offsets: np.ndarray

    def __post_init__(self):
        H = frozen_array(self.normals, 2)
        h = frozen_array(self.offsets, 1)
        if H.shape[0] < 1:
            raise DimensionMismatch("a polytope needs at least one facet")
        if H.shape[0] != h.shape[0]:
            raise DimensionMismatch(f"{H.shape[0]} normals but {h.shape[0]} offsets")
        if np.any(np.all(H == 0, axis=1)):
            raise DimensionMismatch("facet normals must be nonzero")
        object.__setattr__(self, "normals", H)
        object.__setattr__(self, "offsets", h)

    @property
    def facets(self):
        return list(zip(self.normals, self.offsets))

    @property
    def dim(self) -> int:
        return self.normals.shape[1]

    def contains(self, x, tol: float = 0.0) -> bool:
        return bool(np.all(self.normals @ np.asarray(x) <= self.offsets + tol))


@dataclasses.dataclass(frozen=True)
class Mlp:
    """ReLU multilayer perceptron; ``layers[-1]`` is the affine output map."""

    layers: tuple

    def __post_init__(self):
        layers = []
        for idx, (W, b) in enumerate(self.layers):
            W = frozen_array(W, 2)
            b = frozen_array(b, 1)
            if W.shape[0] != b.shape[0]:
                raise DimensionMismatch(f"layer {idx}: W has {W.shape[0]} rows, b has length {b.shape[0]}")
            if layers and layers[-1][0].shape[0] != W.shape[1]:
                raise DimensionMismatch(
                    f"layer {idx}: expects width {W.shape[1]}, previous layer outputs {layers[-1][0].shape[0]}"
                )
            layers.append((W, b))
        if not layers:
            raise DimensionMismatch("an MLP needs at least one layer")
        object.__setattr__(self, "layers", tuple(layers))

    @property
    def depth(self) -> int:
        """Number of hidden (ReLU) layers."""
        return len(self.layers) - 1

    @property
    def input_dim(self) -> int:
        return self.layers[0][0].shape[1]

    @property
    def output_dim(self) -> int:
        return self.layers[-1][0].shape[0]

    @property
    def hidden_widths(self) -> tuple:
        return tuple(W.shape[0] for W, _ in self.layers[:-1])

    @property
    def weights(self):
        return [W for W, _ in self.layers]

    @property
    def biases(self):
        return [b for _, b in self.layers]


@dataclasses.dataclass(frozen=True)
class AgentModel:
    """Discrete-time LTI data of one agent.

    ``A_neighbors`` is kept sorted by ascending neighbor id. Static agents have
    no dynamics of their own; their state follows ``static_states`` (one entry
    per step, the last entry is held afterwards).
    """

    id: int
    A_self: np.ndarray
    A_neighbors: tuple
    B: np.ndarray
    u_lower: np.ndarray
    u_upper: np.ndarray
    w_seq: tuple = ()
    is_static: bool = False
    static_states: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "A_self", frozen_array(self.A_self, 2))
        object.__setattr__(self, "B", frozen_array(self.B, 2))
        object.__setattr__(self, "u_lower", frozen_array(self.u_lower, 1))
        object.__setattr__(self, "u_upper", frozen_array(self.u_upper, 1))
        nbrs = sorted(((int(j), frozen_array(A, 2)) for j, A in self.A_neighbors), key=lambda t: t[0])
        object.__setattr__(self, "A_neighbors", tuple(nbrs))
        object.__setattr__(self, "w_seq", tuple(frozen_array(w, 1) for w in self.w_seq))
        object.__setattr__(self, "static_states", tuple(frozen_array(s, 1) for s in self.static_states))

    @classmethod
    def static(cls, id: int, states, n_u: int) -> "AgentModel":
        """A virtual agent whose state follows a known sequence."""
        states = [np.asarray(s, dtype=float) for s in np.atleast_2d(states)]
        n_x = states[0].shape[0]
        return cls(
            id=id,
            A_self=np.eye(n_x),
            A_neighbors=(),
            B=np.zeros((n_x, n_u)),
            u_lower=np.zeros(n_u),
            u_upper=np.zeros(n_u),
            is_static=True,
            static_states=tuple(states),
        )

    @property
    def n_x(self) -> int:
        return self.A_self.shape[0]

    @property
    def n_u(self) -> int:
        return self.B.shape[1]

    @property
    def neighbor_ids(self) -> tuple:
        return tuple(j for j, _ in self.A_neighbors)

    def w(self, k: int) -> np.ndarray:
        """Known external input at step ``k``."""
        if self.is_static:
            return np.zeros(self.n_x)
        if k >= len(self.w_seq):
            raise HorizonError(f"agent {self.id}: known input covers {len(self.w_seq)} steps, step {k} requested")
        return self.w_seq[k]

    def static_state(self, k: int) -> np.ndarray:
        if not self.static_states:
            raise ValueError(f"agent {self.id} has no static trajectory")
        return self.static_states[min(k, len(self.static_states) - 1)]


class NeighborGraph:
    """Agents plus the neighbor lookup ``g(i, j)`` and counts ``q(i)``."""

    def __init__(self, agents: Sequence[AgentModel]):
        self._agents = {a.id: a for a in agents}
        if len(self._agents) != len(agents):
            raise UnknownAgent("duplicate agent ids")

    @property
    def agents(self) -> list:
        return [self._agents[i] for i in sorted(self._agents)]

    @property
    def ids(self) -> list:
        return sorted(self._agents)

    @property
    def dynamic_ids(self) -> list:
        return [i for i in self.ids if not self._agents[i].is_static]

    def __getitem__(self, i: int) -> AgentModel:
        return self._agents[i]

    def __contains__(self, i) -> bool:
        return i in self._agents

    def __len__(self) -> int:
        return len(self._agents)

    def neighbors(self, i: int) -> tuple:
        return self._agents[i].neighbor_ids

    def g(self, i: int, j: int) -> int:
        """The ``j``-th neighbor of agent ``i`` (1-based ``j``)."""
        nbrs = self.neighbors(i)
        if not 1 <= j <= len(nbrs):
            raise IndexError(f"agent {i} has {len(nbrs)} neighbors, asked for #{j}")
        return nbrs[j - 1]

    def q(self, i: int) -> int:
        return len(self.neighbors(i))

    @property
    def n_x(self) -> int:
        return self.agents[0].n_x

    @property
    def n_u(self) -> int:
        return self.agents[0].n_u


@dataclasses.dataclass(frozen=True)
class UncertaintySpec:
    """Per-agent vertex lists for ``A_ii`` and ``B_i``."""

    A_vertices: Mapping[int, tuple]
    B_vertices: Mapping[int, tuple]

    def __post_init__(self):
        A = {int(i): tuple(frozen_array(m, 2) for m in ms) for i, ms in self.A_vertices.items()}
        B = {int(i): tuple(frozen_array(m, 2) for m in ms) for i, ms in self.B_vertices.items()}
        for name, table in (("A", A), ("B", B)):
            for i, ms in table.items():
                if len(ms) < 1:
                    raise DimensionMismatch(f"agent {i}: empty {name} vertex list")
        object.__setattr__(self, "A_vertices", A)
        object.__setattr__(self, "B_vertices", B)

    @classmethod
    def scaled(cls, graph: NeighborGraph, delta: float) -> "UncertaintySpec":
        """Vertices ``{(1-delta) M, (1+delta) M}`` around every nominal ``A_ii``, ``B_i``."""
        if delta < 0:
            raise ValueError("delta must be nonnegative")
        A, B = {}, {}
        for a in graph.agents:
            if a.is_static:
                continue
            A[a.id] = ((1 - delta) * a.A_self, (1 + delta) * a.A_self)
            B[a.id] = ((1 - delta) * a.B, (1 + delta) * a.B)
        return cls(A, B)

    def vertices(self, agent: AgentModel):
        """``(A_list, B_list)`` for ``agent``; nominal when not listed."""
        return (
            self.A_vertices.get(agent.id, (agent.A_self,)),
            self.B_vertices.get(agent.id, (agent.B,)),
        )


@dataclasses.dataclass(frozen=True)
class Scenario:
    """A validated multi-agent system with its controllers and initial set."""

    graph: NeighborGraph
    nets: Mapping[tuple, Mlp]
    init: Mapping[int, Box]
    uncertainty: UncertaintySpec | None = None
    references: Mapping[int, np.ndarray] | None = None

    def box_at(self, i: int, k: int) -> Box:
        """Degenerate box of a static agent at step ``k``."""
        return Box.point(self.graph[i].static_state(k))

    def pair_nets(self, i: int) -> list:
        return [self.nets[(i, j)] for j in self.graph.neighbors(i)]


def find_violations(graph: NeighborGraph, nets: Mapping[tuple, Mlp], init: Mapping[int, Box],
                    uncertainty: UncertaintySpec | None = None) -> list:
    """Every invariant violation in the scenario, as exception instances."""
    out = []
    agents = graph.agents
    if not agents:
        return [DimensionMismatch("scenario has no agents")]
    n_x, n_u = agents[0].n_x, agents[0].n_u
    for a in agents:
        tag = f"agent {a.id}"
        if a.A_self.shape != (n_x, n_x):
            out.append(DimensionMismatch(f"{tag}: A_self has shape {a.A_self.shape}, expected {(n_x, n_x)}"))
        if a.B.shape != (n_x, n_u):
            out.append(DimensionMismatch(f"{tag}: B has shape {a.B.shape}, expected {(n_x, n_u)}"))
        if a.u_lower.shape != (n_u,) or a.u_upper.shape != (n_u,):
            out.append(DimensionMismatch(f"{tag}: control limits must have length {n_u}"))
        elif np.any(a.u_lower > a.u_upper):
            out.append(InvertedBounds(f"{tag}: u_lower > u_upper at {np.flatnonzero(a.u_lower > a.u_upper).tolist()}"))
        for j, Aij in a.A_neighbors:
            if j == a.id:
                out.append(UnknownAgent(f"{tag}: lists itself as a neighbor"))
            elif j not in graph:
                out.append(UnknownAgent(f"{tag}: neighbor {j} does not exist"))
            if Aij.shape != (n_x, n_x):
                out.append(DimensionMismatch(f"{tag}: A_{a.id}{j} has shape {Aij.shape}, expected {(n_x, n_x)}"))
        for k, w in enumerate(a.w_seq):
            if w.shape != (n_x,):
                out.append(DimensionMismatch(f"{tag}: w[{k}] has length {w.shape[0]}, expected {n_x}"))
        if a.is_static:
            if not a.static_states:
                out.append(DimensionMismatch(f"{tag}: static agent without a state trajectory"))
            for s in a.static_states:
                if s.shape != (n_x,):
                    out.append(DimensionMismatch(f"{tag}: static state has length {s.shape[0]}, expected {n_x}"))
            continue
        if not a.A_neighbors:
            out.append(EmptyNeighborSet(f"{tag}: neighbor set is empty"))
        for j in a.neighbor_ids:
            net = nets.get((a.id, j))
            if net is None:
                out.append(MissingNetwork(f"pair ({a.id}, {j}): no network"))
                continue
            if net.input_dim != 2 * n_x:
                out.append(DimensionMismatch(f"pair ({a.id}, {j}): network input width {net.input_dim}, expected {2 * n_x}"))
            if net.output_dim != n_u:
                out.append(DimensionMismatch(f"pair ({a.id}, {j}): network output width {net.output_dim}, expected {n_u}"))
        pair = [nets[(a.id, j)] for j in a.neighbor_ids if (a.id, j) in nets]
        if pair and len({(p.depth, p.hidden_widths) for p in pair}) > 1:
            out.append(DimensionMismatch(f"agent {a.id}: neighbor networks differ in structure"))
        box = init.get(a.id)
        if box is None:
            out.append(DimensionMismatch(f"{tag}: no initial box"))
        elif box.dim != n_x:
            out.append(DimensionMismatch(f"{tag}: initial box has dimension {box.dim}, expected {n_x}"))
    if uncertainty is not None:
        for i, ms in uncertainty.A_vertices.items():
            if i not in graph:
                out.append(UnknownAgent(f"uncertainty lists unknown agent {i}"))
            for m in ms:
                if m.shape != (n_x, n_x):
                    out.append(DimensionMismatch(f"agent {i}: A vertex has shape {m.shape}"))
        for i, ms in uncertainty.B_vertices.items():
            if i not in graph:
                out.append(UnknownAgent(f"uncertainty lists unknown agent {i}"))
            for m in ms:
                if m.shape != (n_x, n_u):
                    out.append(DimensionMismatch(f"agent {i}: B vertex has shape {m.shape}"))
    return out


def validate_scenario(graph: NeighborGraph, nets: Mapping[tuple, Mlp], init: Mapping[int, Box],
                      uncertainty: UncertaintySpec | None = None,
                      references: Mapping[int, np.ndarray] | None = None) -> Scenario:
    """Check every invariant and return a :class:`Scenario`.

    Raises:
        ScenarioValidationError: listing all violations, not only the first.
    """
    violations = find_violations(graph, nets, init, uncertainty)
    if violations:
        raise ScenarioValidationError(violations)
    init = {i: init[i] for i in graph.dynamic_ids}
    nets = {(i, j): nets[(i, j)] for i in graph.dynamic_ids for j in graph.neighbors(i)}
    refs = None if references is None else {int(i): frozen_array(r, 1) for i, r in references.items()}
    return Scenario(graph, nets, init, uncertainty, refs)


def check_horizon(scenario: Scenario, steps: int) -> None:
    for a in scenario.graph.agents:
        if not a.is_static and len(a.w_seq) < steps:
            raise HorizonError(f"agent {a.id}: known input covers {len(a.w_seq)} steps, horizon is {steps}")


def restrict(scenario: Scenario, ids) -> Scenario:
    """Sub-scenario on the dynamic agents ``ids`` plus the static agents they read.

    Raises:
        UnknownAgent: a kept agent depends on a dynamic agent outside ``ids``.
    """
    ids = set(ids)
    graph = scenario.graph
    keep = set(ids)
    for i in ids:
        for j in graph.neighbors(i):
            if graph[j].is_static:
                keep.add(j)
            elif j not in ids:
                raise UnknownAgent(f"agent {i} depends on agent {j}, which is not kept")
    sub = NeighborGraph([graph[i] for i in sorted(keep)])
    unc = scenario.uncertainty
    if unc is not None:
        unc = UncertaintySpec({i: v for i, v in unc.A_vertices.items() if i in keep},
                              {i: v for i, v in unc.B_vertices.items() if i in keep})
    return validate_scenario(sub, scenario.nets, scenario.init, unc, scenario.references)
