"""Per-agent reformulation: stacked state, merged network, saturation layers."""
from __future__ import annotations

import dataclasses
from typing import NamedTuple, Sequence

import numpy as np
from scipy.linalg import block_diag

from distreach.errors import DimensionMismatch, InvalidDimension, StructureMismatch
from distreach.model import AgentModel, Mlp, NeighborGraph, Scenario, frozen_array


def build_lambda(q: int, n_x: int) -> np.ndarray:
    """Input replicator mapping ``[x_i; x_n1; ...; x_nq]`` to ``[x_i; x_n1; x_i; x_n2; ...]``."""
    if q < 1 or n_x < 1:
        raise InvalidDimension(f"need q >= 1 and n_x >= 1, got q={q}, n_x={n_x}")
    lam = np.zeros((2 * q * n_x, (1 + q) * n_x))
    eye = np.eye(n_x)
    for r in range(q):
        lam[2 * r * n_x:(2 * r + 1) * n_x, :n_x] = eye
        lam[(2 * r + 1) * n_x:(2 * r + 2) * n_x, (r + 1) * n_x:(r + 2) * n_x] = eye
    return lam


def build_omega(q: int, n_u: int) -> np.ndarray:
    """Output summer: ``q`` identity blocks side by side."""
    if q < 1 or n_u < 1:
        raise InvalidDimension(f"need q >= 1 and n_u >= 1, got q={q}, n_u={n_u}")
    return np.tile(np.eye(n_u), (1, q))


@dataclasses.dataclass(frozen=True)
class MergedMlp:
    """One network for the whole neighborhood, followed by two clamping layers.

    ``base`` maps the stacked state to the pre-saturation control. The
    saturation stage is ``z1 = relu(p - u_lower)``, ``z2 = relu(u_upper -
    u_lower - z1)``, ``u = u_upper - z2``.
    """

    base: Mlp
    u_lower: np.ndarray
    u_upper: np.ndarray
    lam: np.ndarray | None = None
    omega: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "u_lower", frozen_array(self.u_lower, 1))
        object.__setattr__(self, "u_upper", frozen_array(self.u_upper, 1))
        if self.u_lower.shape != (self.base.output_dim,) or self.u_upper.shape != (self.base.output_dim,):
            raise DimensionMismatch("control limits do not match network output width")

    @property
    def input_dim(self) -> int:
        return self.base.input_dim

    @property
    def n_u(self) -> int:
        return self.base.output_dim

    @property
    def depth(self) -> int:
        return self.base.depth

    @property
    def hidden_widths(self) -> tuple:
        return self.base.hidden_widths

    @property
    def n_neurons(self) -> int:
        """Hidden neurons of the base network (excluding the clamp layers)."""
        return sum(self.base.hidden_widths)

    @property
    def sat_layers(self):
        eye = np.eye(self.n_u)
        return ((eye, -self.u_lower), (-eye, self.u_upper - self.u_lower))

    @property
    def output_map(self):
        return (-np.eye(self.n_u), self.u_upper.copy())


class ForwardPass(NamedTuple):
    output: np.ndarray
    activations: list  # z^0 .. z^{L} (plain) or z^0 .. z^{L+2} (merged)
    preactivations: list  # zhat^1 .. (same length minus one)


def _relu(x):
    return np.maximum(x, 0.0)


def forward(net, x) -> ForwardPass:
    """Forward pass of an :class:`Mlp` or :class:`MergedMlp`; ``x`` may be batched by row."""
    mlp = net.base if isinstance(net, MergedMlp) else net
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != mlp.input_dim:
        raise DimensionMismatch(f"input width {x.shape[-1]}, network expects {mlp.input_dim}")
    z = [x]
    zhat = []
    for W, b in mlp.layers[:-1]:
        zhat.append(z[-1] @ W.T + b)
        z.append(_relu(zhat[-1]))
    W, b = mlp.layers[-1]
    out = z[-1] @ W.T + b
    if isinstance(net, MergedMlp):
        zhat.append(out - net.u_lower)
        z.append(_relu(zhat[-1]))
        zhat.append(-z[-1] + (net.u_upper - net.u_lower))
        z.append(_relu(zhat[-1]))
        out = -z[-1] + net.u_upper
    return ForwardPass(out, z, zhat)


def evaluate(net, x) -> np.ndarray:
    """Network output; for a merged network this is the saturated control."""
    return forward(net, x).output


def pre_saturation(net: MergedMlp, x) -> np.ndarray:
    return forward(net.base, x).output


def offset_first_layer(mlp: Mlp, reference) -> Mlp:
    """Network evaluating ``mlp(s - reference)``, absorbed into the first bias."""
    (W0, b0), *rest = mlp.layers
    return Mlp(((W0, b0 - W0 @ np.asarray(reference, dtype=float)),) + tuple(rest))


def compose_input(mlp: Mlp, T) -> Mlp:
    """Network evaluating ``mlp(T @ s)``."""
    (W0, b0), *rest = mlp.layers
    return Mlp(((W0 @ np.asarray(T, dtype=float), b0),) + tuple(rest))


def merge_networks(agent: AgentModel, nets: Sequence[Mlp]) -> MergedMlp:
    """Fold the per-neighbor networks of ``agent`` into one saturated network.

    ``nets`` must follow the agent's neighbor order.
    """
    q = len(nets)
    if q != len(agent.neighbor_ids):
        raise StructureMismatch(f"agent {agent.id} has {len(agent.neighbor_ids)} neighbors but {q} networks")
    if q == 0:
        raise InvalidDimension(f"agent {agent.id}: no networks to merge")
    shapes = {tuple(W.shape for W in n.weights) for n in nets}
    if len(shapes) != 1:
        raise StructureMismatch(f"agent {agent.id}: per-neighbor networks differ in structure")
    n_x, n_u = agent.n_x, agent.n_u
    if nets[0].input_dim != 2 * n_x or nets[0].output_dim != n_u:
        raise DimensionMismatch(f"agent {agent.id}: pair networks must map R^{2 * n_x} -> R^{n_u}")
    lam = build_lambda(q, n_x)
    omega = build_omega(q, n_u)
    L = nets[0].depth
    layers = []
    for ell in range(L + 1):
        W = block_diag(*[n.layers[ell][0] for n in nets])
        b = np.concatenate([n.layers[ell][1] for n in nets])
        if ell == 0:
            W = W @ lam
        if ell == L:
            W = omega @ W
            b = omega @ b
        layers.append((W, b))
    return MergedMlp(Mlp(tuple(layers)), agent.u_lower, agent.u_upper, lam, omega)


@dataclasses.dataclass(frozen=True)
class ReformedAgent:
    """Closed-loop one-step map ``x+ = A_tilde x_tilde + B sat(net(x_tilde)) + w``.

    ``self_cols`` marks the columns of ``A_tilde`` holding ``A_ii``; model
    uncertainty substitutes vertices there. ``members`` lists the agent ids
    whose states are stacked in ``x_tilde``.
    """

    A_tilde: np.ndarray
    B: np.ndarray
    net: MergedMlp
    members: tuple
    agent: AgentModel | None = None
    self_cols: slice | None = None
    w_seq: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "A_tilde", frozen_array(self.A_tilde, 2))
        object.__setattr__(self, "B", frozen_array(self.B, 2))
        if self.A_tilde.shape[1] != self.net.input_dim:
            raise DimensionMismatch(f"A_tilde has {self.A_tilde.shape[1]} columns, network input is {self.net.input_dim}")
        if self.B.shape != (self.A_tilde.shape[0], self.net.n_u):
            raise DimensionMismatch(f"B has shape {self.B.shape}")

    @property
    def n_out(self) -> int:
        return self.A_tilde.shape[0]

    def w(self, k: int) -> np.ndarray:
        if self.agent is not None:
            return self.agent.w(k)
        return self.w_seq[k]

    def with_vertex(self, A_self=None, B=None) -> "ReformedAgent":
        A_tilde = np.array(self.A_tilde)
        if A_self is not None:
            A_tilde[:, self.self_cols] = A_self
        return dataclasses.replace(self, A_tilde=A_tilde, B=self.B if B is None else B)

    def step(self, x_tilde, k: int, A_self=None, B=None) -> np.ndarray:
        A_tilde = self.A_tilde if A_self is None else self.with_vertex(A_self).A_tilde
        B = self.B if B is None else B
        u = evaluate(self.net, x_tilde)
        return x_tilde @ A_tilde.T + u @ B.T + self.w(k)


def reform_agent(agent: AgentModel, graph: NeighborGraph, nets, references=None) -> ReformedAgent:
    """Build ``A_tilde`` and the merged network for one agent.

    ``nets`` is either the ordered list of pair networks or a mapping keyed by
    ``(i, j)``. ``references`` optionally maps agent id to a reference state
    that the pair networks subtract from their inputs.
    """
    if isinstance(nets, dict):
        nets = [nets[(agent.id, j)] for j in agent.neighbor_ids]
    nets = list(nets)
    if references is not None:
        ref_i = np.asarray(references.get(agent.id, np.zeros(agent.n_x)), dtype=float)
        nets = [
            offset_first_layer(n, np.concatenate([ref_i, np.asarray(references.get(j, np.zeros(agent.n_x)), dtype=float)]))
            for n, j in zip(nets, agent.neighbor_ids)
        ]
    net = merge_networks(agent, nets)
    A_tilde = np.hstack([agent.A_self] + [A for _, A in agent.A_neighbors])
    return ReformedAgent(
        A_tilde=A_tilde,
        B=agent.B,
        net=net,
        members=(agent.id,) + agent.neighbor_ids,
        agent=agent,
        self_cols=slice(0, agent.n_x),
    )


def reform_scenario(scenario: Scenario) -> dict:
    """Reformed agent for every non-static agent, keyed by id."""
    return {
        i: reform_agent(scenario.graph[i], scenario.graph, scenario.nets, references=scenario.references)
        for i in scenario.graph.dynamic_ids
    }
