"""Ground truth: ZOH discretization, closed-loop simulation, affine interval oracle, containment checks."""
from __future__ import annotations

import dataclasses
import itertools
import math

import numpy as np
from scipy.linalg import expm

from distreach.errors import DimensionMismatch, InvalidDimension, NonFiniteEntries, NotAffine
from distreach.intervals import affine_hull
from distreach.model import Box, Scenario
from distreach.reformulate import ReformedAgent, evaluate, reform_scenario


@dataclasses.dataclass(frozen=True)
class CtModel:
    """Continuous-time agent ``x' = A x + sum_j A_j x_j + B u + L d``, sampled every ``T`` seconds."""

    A_self: np.ndarray
    A_neighbors: tuple  # ((j, A_j), ...)
    B: np.ndarray
    T: float
    L: np.ndarray | None = None

    def __post_init__(self):
        A = np.asarray(self.A_self, dtype=float)
        object.__setattr__(self, "A_self", A)
        object.__setattr__(self, "B", np.atleast_2d(np.asarray(self.B, dtype=float)))
        object.__setattr__(self, "A_neighbors", tuple((int(j), np.asarray(M, dtype=float)) for j, M in self.A_neighbors))
        if self.L is not None:
            object.__setattr__(self, "L", np.atleast_2d(np.asarray(self.L, dtype=float)))
        if not self.T > 0:
            raise InvalidDimension(f"sample period must be positive, got {self.T}")
        n = A.shape[0]
        if A.shape != (n, n):
            raise DimensionMismatch(f"A_self must be square, got {A.shape}")
        blocks = [M for _, M in self.A_neighbors] + [self.B] + ([self.L] if self.L is not None else [])
        for M in blocks:
            if M.shape[0] != n:
                raise DimensionMismatch(f"input block with {M.shape[0]} rows, state dimension is {n}")

    @property
    def exogenous(self) -> np.ndarray:
        blocks = [M for _, M in self.A_neighbors] + [self.B] + ([self.L] if self.L is not None else [])
        return np.hstack(blocks)


@dataclasses.dataclass(frozen=True)
class DiscreteBlocks:
    A_self: np.ndarray
    A_neighbors: tuple
    B: np.ndarray
    L: np.ndarray | None


def zoh_discretize(ct: CtModel) -> DiscreteBlocks:
    """Exact sampling with all exogenous signals held over each period.

    Uses ``expm([[A, G], [0, 0]] T) = [[e^{AT}, int_0^T e^{As} ds G], [0, I]]``.
    """
    for M in (ct.A_self, ct.exogenous):
        if not np.all(np.isfinite(M)):
            raise NonFiniteEntries("continuous-time model has non-finite entries")
    n = ct.A_self.shape[0]
    G = ct.exogenous
    m = G.shape[1]
    big = np.zeros((n + m, n + m))
    big[:n, :n] = ct.A_self
    big[:n, n:] = G
    E = expm(big * ct.T)
    Ad, Gd = E[:n, :n], E[:n, n:]
    if not np.all(np.isfinite(E)):
        raise NonFiniteEntries("matrix exponential overflowed")
    out, c = [], 0
    for j, M in ct.A_neighbors:
        out.append((j, Gd[:, c:c + M.shape[1]]))
        c += M.shape[1]
    B = Gd[:, c:c + ct.B.shape[1]]
    c += ct.B.shape[1]
    L = Gd[:, c:] if ct.L is not None else None
    return DiscreteBlocks(Ad, tuple(out), B, L)


def _random_simplex(rng, count: int, size) -> np.ndarray:
    return rng.dirichlet(np.ones(count), size=size)


def simulate(scenario: Scenario, x0: dict, N: int, rng=None, uncertain: bool = False, reformed=None) -> dict:
    """Closed-loop trajectories; ``x0[i]`` has shape ``(S, n_x)``, results ``(S, N+1, n_x)``.

    With ``uncertain`` each sample draws fresh convex weights over the
    ``A``/``B`` vertices at every step.
    """
    graph = scenario.graph
    reformed = reform_scenario(scenario) if reformed is None else reformed
    if uncertain and scenario.uncertainty is None:
        raise ValueError("scenario has no uncertainty description")
    rng = np.random.default_rng() if rng is None else rng
    x = {i: np.atleast_2d(np.asarray(x0[i], dtype=float)) for i in graph.dynamic_ids}
    S = next(iter(x.values())).shape[0]
    traj = {i: [v] for i, v in x.items()}
    for k in range(N):
        nxt = {}
        for i in graph.dynamic_ids:
            ra = reformed[i]
            xt = np.concatenate([
                np.broadcast_to(graph[j].static_state(k), (S, graph.n_x)) if graph[j].is_static else x[j]
                for j in ra.members
            ], axis=1)
            if not uncertain:
                nxt[i] = ra.step(xt, k)
                continue
            A_list, B_list = scenario.uncertainty.vertices(graph[i])
            a = _random_simplex(rng, len(A_list), S)
            b = _random_simplex(rng, len(B_list), S)
            A_s = np.einsum("sv,vij->sij", a, np.stack(A_list))
            B_s = np.einsum("sv,vij->sij", b, np.stack(B_list))
            u = evaluate(ra.net, xt)
            nb = xt[:, ra.self_cols]
            rest = xt @ ra.A_tilde.T - nb @ ra.A_tilde[:, ra.self_cols].T
            nxt[i] = np.einsum("sij,sj->si", A_s, nb) + rest + np.einsum("sij,sj->si", B_s, u) + ra.w(k)
        x = nxt
        for i, v in x.items():
            traj[i].append(v)
    return {i: np.stack(v, axis=1) for i, v in traj.items()}


def affine_control(ra: ReformedAgent, box: Box):
    """``(K, c)`` with ``sat(net(x)) = K x + c`` on ``box``.

    Every ReLU unit, clamp layers included, must keep one sign over the box
    (units with constant pre-activation qualify).

    Raises:
        NotAffine: some unit changes sign inside the box.
    """
    net = ra.net
    n = box.dim
    M, c = np.eye(n), np.zeros(n)

    def relu_stage(W, b, tag):
        nonlocal M, c
        M2, c2 = W @ M, W @ c + b
        lo, hi = affine_hull(M2, box.lower, box.upper, c2)
        unstable = (lo < 0) & (hi > 0)
        if np.any(unstable):
            raise NotAffine(f"{tag}: {int(unstable.sum())} unit(s) change sign over the box")
        active = lo >= 0
        M, c = M2 * active[:, None], c2 * active

    for ell, (W, b) in enumerate(net.base.layers[:-1]):
        relu_stage(W, b, f"hidden layer {ell + 1}")
    W, b = net.base.layers[-1]
    relu_stage(W, b - net.u_lower, "lower clamp")
    relu_stage(-np.eye(net.n_u), net.u_upper - net.u_lower, "upper clamp")
    return -M, net.u_upper - c


def interval_oracle(ra: ReformedAgent, box: Box, w_k) -> Box:
    """Exact hull of ``A_tilde x + B u(x) + w`` over ``box`` when the controller is affine there."""
    K, c = affine_control(ra, box)
    lo, hi = affine_hull(ra.A_tilde + ra.B @ K, box.lower, box.upper, ra.B @ c + np.asarray(w_k, dtype=float))
    return Box(lo, hi)


@dataclasses.dataclass
class Violation:
    agent: int
    step: int
    coord: int
    value: float
    lower: float
    upper: float

    @property
    def excess(self) -> float:
        return max(self.lower - self.value, self.value - self.upper)


@dataclasses.dataclass
class ContainmentReport:
    n_samples: int
    n_corners: int
    steps: int
    eps: float
    violations: list
    max_excess: float
    n_violations: int = 0
    trajectories: dict | None = dataclasses.field(default=None, repr=False)

    @property
    def ok(self) -> bool:
        return self.n_violations == 0

    def to_dict(self) -> dict:
        return {
            "n_samples": self.n_samples,
            "n_corners": self.n_corners,
            "steps": self.steps,
            "eps": self.eps,
            "ok": self.ok,
            "max_excess": self.max_excess,
            "violations": [dataclasses.asdict(v) | {"excess": v.excess} for v in self.violations[:100]],
            "n_violations": self.n_violations,
        }


CORNER_CAP = 2 ** 16


def initial_samples(scenario: Scenario, samples: int, rng, corner_cap: int = CORNER_CAP):
    """Uniform draws over the initial boxes plus joint corners (all, or a random subset past the cap)."""
    ids = scenario.graph.dynamic_ids
    boxes = [scenario.init[i] for i in ids]
    lo = np.concatenate([b.lower for b in boxes])
    hi = np.concatenate([b.upper for b in boxes])
    free = np.flatnonzero(hi > lo)
    uni = lo + rng.random((samples, lo.size)) * (hi - lo)
    if free.size <= math.log2(corner_cap):
        bits = np.array(list(itertools.product((0, 1), repeat=free.size)), dtype=bool).reshape(-1, free.size)
    else:
        bits = rng.random((corner_cap, free.size)) < 0.5
    corners = np.tile(lo, (bits.shape[0], 1))
    corners[:, free] = np.where(bits, hi[free], lo[free])
    X = np.vstack([uni, corners])
    n = scenario.graph.n_x
    return {i: X[:, p * n:(p + 1) * n] for p, i in enumerate(ids)}, corners.shape[0]


def find_escapes(boxes: dict, traj: dict, eps: float) -> tuple:
    """``(violations, worst_excess, count)``; at most 20 violations are listed per agent and step."""
    out, worst, count = [], -np.inf, 0
    for i, seq in boxes.items():
        X = traj[i]
        for k, box in enumerate(seq[:X.shape[1]]):
            lo, hi = box.lower - eps, box.upper + eps
            v = X[:, k, :]
            exc = np.maximum(lo - v, v - hi)
            worst = max(worst, float(exc.max()) + eps)
            rows, cols = np.nonzero(exc > 0)
            count += rows.size
            for r, cidx in zip(rows[:20], cols[:20]):
                out.append(Violation(i, k, int(cidx), float(v[r, cidx]), float(box.lower[cidx]), float(box.upper[cidx])))
    return out, worst, count


def containment_check(result, scenario: Scenario, samples: int = 10_000, eps: float = 1e-6, seed: int = 0,
                      uncertain: bool | None = None, corner_cap: int = CORNER_CAP,
                      keep_trajectories: bool = False) -> ContainmentReport:
    """Simulate sampled initial states and report every state outside its computed box.

    ``result`` is a :class:`~distreach.reach.ReachResult` or a plain mapping
    of agent id to per-step boxes. Uncertain dynamics are sampled whenever
    the scenario carries an uncertainty description, unless overridden.
    """
    boxes = result.boxes if hasattr(result, "boxes") else result
    steps = min(len(b) for b in boxes.values()) - 1
    rng = np.random.default_rng(seed)
    x0, n_corners = initial_samples(scenario, samples, rng, corner_cap)
    if uncertain is None:
        uncertain = scenario.uncertainty is not None
    traj = simulate(scenario, x0, steps, rng=rng, uncertain=uncertain)
    violations, worst, count = find_escapes(boxes, traj, eps)
    return ContainmentReport(samples, n_corners, steps, eps, violations, worst, count,
                             traj if keep_trajectories else None)
