import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from distreach.model import AgentModel, Box, Mlp, NeighborGraph, validate_scenario

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)


def random_mlp(rng, n_in, hidden, n_out, scale=1.0):
    sizes = [n_in, *hidden, n_out]
    return Mlp(tuple((scale * rng.standard_normal((b, a)), scale * rng.standard_normal(b))
                     for a, b in zip(sizes[:-1], sizes[1:])))


def zero_hidden_mlp(rng, n_in, hidden, n_out):
    """Constant-output network: every weight zero except the output bias (and layer-0 biases)."""
    sizes = [n_in, *hidden, n_out]
    layers = []
    for a, b in zip(sizes[:-1], sizes[1:]):
        layers.append((np.zeros((b, a)), rng.standard_normal(b)))
    return Mlp(tuple(layers))


def random_scenario(rng, M=2, n_x=2, n_u=1, hidden=(4,), topology="chain", net_factory=None,
                    horizon=3, u_limit=1.0, box_radius=0.5, static_leader=False):
    """Small random multi-agent system.

    ``chain``: agent i reads i-1 (agent 1 reads agent M when there is no
    static leader, so every agent has a neighbor). ``all``: every agent reads
    every other one.
    """
    net_factory = net_factory or (lambda: random_mlp(rng, 2 * n_x, hidden, n_u, 0.5))
    ids = list(range(1, M + 1))
    agents = []
    if static_leader:
        agents.append(AgentModel.static(0, [rng.standard_normal(n_x)], n_u))
    for i in ids:
        if topology == "chain":
            if i > 1:
                nbrs = [i - 1]
            elif static_leader:
                nbrs = [0]
            else:
                nbrs = [M] if M > 1 else []
        else:
            nbrs = [j for j in ids if j != i] or ([0] if static_leader else [])
        if not nbrs:
            nbrs = [0]
            if not static_leader:
                agents.append(AgentModel.static(0, [rng.standard_normal(n_x)], n_u))
                static_leader = True
        agents.append(AgentModel(
            id=i,
            A_self=0.5 * rng.standard_normal((n_x, n_x)),
            A_neighbors=tuple((j, 0.3 * rng.standard_normal((n_x, n_x))) for j in nbrs),
            B=rng.standard_normal((n_x, n_u)),
            u_lower=-u_limit * np.ones(n_u),
            u_upper=u_limit * np.ones(n_u),
            w_seq=tuple(0.1 * rng.standard_normal(n_x) for _ in range(horizon)),
        ))
    graph = NeighborGraph(agents)
    nets = {(a.id, j): net_factory() for a in agents if not a.is_static for j in a.neighbor_ids}
    init = {}
    for i in ids:
        c = rng.standard_normal(n_x)
        r = box_radius * (0.5 + rng.random(n_x))
        init[i] = Box(c - r, c + r)
    return validate_scenario(graph, nets, init)


def rk4_zoh(ct, substeps=2000):
    """Integrate ``x' = A x + G v`` over one period for unit state and input directions."""
    n = ct.A_self.shape[0]
    G = ct.exogenous
    m = G.shape[1]
    h = ct.T / substeps
    f = lambda X, V: ct.A_self @ X + G @ V
    X = np.hstack([np.eye(n), np.zeros((n, m))])
    V = np.hstack([np.zeros((m, n)), np.eye(m)])
    for _ in range(substeps):
        k1 = f(X, V)
        k2 = f(X + 0.5 * h * k1, V)
        k3 = f(X + 0.5 * h * k2, V)
        k4 = f(X + h * k3, V)
        X = X + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return X[:, :n], X[:, n:]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
