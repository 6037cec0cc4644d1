"""Builders for the platoon and power-network examples plus seeded controller synthesis.

Parameters that the examples leave open (engine time constant, area
constants, controller limits of the power network) carry placeholder
defaults and can be overridden.
"""
from __future__ import annotations

import dataclasses

import numpy as np

from distreach.model import AgentModel, Box, Mlp, NeighborGraph, UncertaintySpec, validate_scenario
from distreach.reformulate import compose_input
from distreach.sim import CtModel, zoh_discretize

PLATOON_LOWER = np.array([-0.1, 19.95, -0.01])
PLATOON_UPPER = np.array([0.1, 20.05, 0.01])
PLATOON_GAINS = (0.5, 1.5, 0.3)

POWER_RADIUS = np.array([1e-4, 1e-7, 1e-3, 1e-3])
POWER_NEIGHBORS = {1: (2,), 2: (1, 3), 3: (2, 4), 4: (3,)}


def synth_mlp(rng, n_in: int, hidden, n_out: int, scale: float = 0.1) -> Mlp:
    """Random network with ``N(0, scale^2)`` weights and biases."""
    sizes = [n_in, *hidden, n_out]
    return Mlp(tuple((scale * rng.standard_normal((b, a)), scale * rng.standard_normal(b))
                     for a, b in zip(sizes[:-1], sizes[1:])))


def linear_feedback_mlp(K, hidden, rng=None, noise: float = 0.0) -> Mlp:
    """ReLU network computing ``K f`` exactly (``relu(Kf) - relu(-Kf)``), optionally perturbed.

    Every hidden layer needs at least ``2 n_u`` units; extra units start
    at zero and only carry the perturbation.
    """
    K = np.atleast_2d(np.asarray(K, dtype=float))
    n_u, n_f = K.shape
    hidden = list(hidden)
    if not hidden or min(hidden) < 2 * n_u:
        raise ValueError(f"every hidden layer needs at least {2 * n_u} units")
    layers = []
    W = np.zeros((hidden[0], n_f))
    W[:n_u], W[n_u:2 * n_u] = K, -K
    layers.append((W, np.zeros(hidden[0])))
    for a, b in zip(hidden[:-1], hidden[1:]):
        W = np.zeros((b, a))
        W[:2 * n_u, :2 * n_u] = np.eye(2 * n_u)
        layers.append((W, np.zeros(b)))
    W = np.zeros((n_u, hidden[-1]))
    W[:, :n_u], W[:, n_u:2 * n_u] = np.eye(n_u), -np.eye(n_u)
    layers.append((W, np.zeros(n_u)))
    if noise and rng is not None:
        layers = [(W + noise * rng.standard_normal(W.shape), b + noise * rng.standard_normal(b.shape))
                  for W, b in layers]
    return Mlp(tuple(layers))


# -- platoon -----------------------------------------------------------------

def platoon_ct(tau: float = 0.5, T: float = 0.1, predecessor: int = 0) -> CtModel:
    """Longitudinal model of one follower; state ``[gap error, velocity, acceleration]``."""
    A = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, -1.0 / tau]])
    A_pred = np.zeros((3, 3))
    A_pred[0, 1] = 1.0
    B = np.array([[0.0], [0.0], [1.0 / tau]])
    return CtModel(A, ((predecessor, A_pred),), B, T)


def platoon_features() -> np.ndarray:
    """``[x_i; x_{i-1}] -> [e_i, v_{i-1} - v_i, a_{i-1} - a_i]``."""
    D = np.zeros((3, 6))
    D[0, 0] = 1.0
    D[1, 1], D[1, 4] = -1.0, 1.0
    D[2, 2], D[2, 5] = -1.0, 1.0
    return D


@dataclasses.dataclass(frozen=True)
class PlatoonSpec:
    M: int = 9
    horizon: int = 5
    tau: float = 0.5
    T: float = 0.1
    v_ref: float = 18.0
    u_limit: float = 5.0
    hidden: tuple = (15, 15)
    gains: tuple | None = PLATOON_GAINS
    scale: float = 0.05
    seed: int = 0
    delta: float | None = None


def platoon_nets(spec: PlatoonSpec) -> dict:
    """Feature-space controllers ``pi_{i,i-1}``, one per follower, seeded."""
    rng = np.random.default_rng(spec.seed)
    nets = {}
    for i in range(1, spec.M + 1):
        if spec.gains is None:
            nets[(i, i - 1)] = synth_mlp(rng, 3, spec.hidden, 1, spec.scale)
        else:
            nets[(i, i - 1)] = linear_feedback_mlp([spec.gains], spec.hidden, rng, spec.scale)
    return nets


def platoon_scenario(spec: PlatoonSpec = PlatoonSpec(), nets: dict | None = None):
    """Platoon of ``M`` followers behind a virtual leader (agent 0) holding ``v_ref``.

    ``nets`` are feature-space controllers; they are lifted onto the
    stacked state with :func:`platoon_features`.
    """
    nets = platoon_nets(spec) if nets is None else nets
    D = platoon_features()
    agents = [AgentModel.static(0, [[0.0, spec.v_ref, 0.0]], 1)]
    pair = {}
    for i in range(1, spec.M + 1):
        d = zoh_discretize(platoon_ct(spec.tau, spec.T, i - 1))
        agents.append(AgentModel(
            id=i, A_self=d.A_self, A_neighbors=d.A_neighbors, B=d.B,
            u_lower=[-spec.u_limit], u_upper=[spec.u_limit],
            w_seq=tuple(np.zeros(3) for _ in range(spec.horizon)),
        ))
        pair[(i, i - 1)] = compose_input(nets[(i, i - 1)], D)
    graph = NeighborGraph(agents)
    init = {i: Box(PLATOON_LOWER, PLATOON_UPPER) for i in range(1, spec.M + 1)}
    unc = UncertaintySpec.scaled(graph, spec.delta) if spec.delta is not None else None
    return validate_scenario(graph, pair, init, unc)


# -- power network -----------------------------------------------------------

@dataclasses.dataclass(frozen=True)
class AreaParams:
    """Placeholder constants of one generation area."""

    H: float
    D: float
    T_t: float
    T_g: float
    R: float


POWER_AREAS = {
    1: AreaParams(H=5.0, D=1.0, T_t=0.4, T_g=0.08, R=0.05),
    2: AreaParams(H=4.0, D=1.5, T_t=0.3, T_g=0.10, R=0.05),
    3: AreaParams(H=4.5, D=1.2, T_t=0.35, T_g=0.09, R=0.06),
    4: AreaParams(H=5.5, D=0.8, T_t=0.4, T_g=0.08, R=0.05),
}
POWER_TIES = {(1, 2): 2.0, (2, 3): 1.8, (3, 4): 2.2}


def _tie(i: int, j: int, ties) -> float:
    return ties.get((i, j), ties.get((j, i), 0.0))


def power_ct(i: int, areas=POWER_AREAS, ties=POWER_TIES, neighbors=POWER_NEIGHBORS, T: float = 1.0) -> CtModel:
    """Area ``i`` with state ``[d_theta, d_omega, d_P_m, d_P_v]`` and the local load as exogenous input."""
    p = areas[i]
    total = sum(_tie(i, j, ties) for j in neighbors[i])
    A = np.array([
        [0.0, 1.0, 0.0, 0.0],
        [-total / (2 * p.H), -p.D / (2 * p.H), 1.0 / (2 * p.H), 0.0],
        [0.0, 0.0, -1.0 / p.T_t, 1.0 / p.T_t],
        [0.0, -1.0 / (p.R * p.T_g), 0.0, -1.0 / p.T_g],
    ])
    nbrs = []
    for j in neighbors[i]:
        Aij = np.zeros((4, 4))
        Aij[1, 0] = _tie(i, j, ties) / (2 * p.H)
        nbrs.append((j, Aij))
    B = np.array([[0.0], [0.0], [0.0], [p.T_g]])
    L = np.array([[0.0], [-1.0 / (2 * p.H)], [0.0], [0.0]])
    return CtModel(A, tuple(nbrs), B, T, L)


@dataclasses.dataclass(frozen=True)
class PowerSpec:
    horizon: int = 3
    T: float = 1.0
    load_step: float = -0.15
    u_limit: float = 0.5
    hidden: tuple = (10, 10)
    scale: float = 0.05
    seed: int = 0


def power_nets(spec: PowerSpec) -> dict:
    rng = np.random.default_rng(spec.seed)
    return {(i, j): synth_mlp(rng, 8, spec.hidden, 1, spec.scale)
            for i in sorted(POWER_NEIGHBORS) for j in POWER_NEIGHBORS[i]}


def power_scenario(spec: PowerSpec = PowerSpec(), nets: dict | None = None, references: dict | None = None):
    """Four areas in a line; the load step is held for every step of the horizon."""
    nets = power_nets(spec) if nets is None else nets
    agents = []
    for i in sorted(POWER_NEIGHBORS):
        d = zoh_discretize(power_ct(i, T=spec.T))
        w = d.L[:, 0] * spec.load_step
        agents.append(AgentModel(
            id=i, A_self=d.A_self, A_neighbors=d.A_neighbors, B=d.B,
            u_lower=[-spec.u_limit], u_upper=[spec.u_limit],
            w_seq=tuple(w for _ in range(spec.horizon)),
        ))
    graph = NeighborGraph(agents)
    init = {i: Box(-POWER_RADIUS, POWER_RADIUS) for i in POWER_NEIGHBORS}
    return validate_scenario(graph, nets, init, references=references)
