"""Monolithic comparator: every agent stacked into one state, one network, one program per facet."""
from __future__ import annotations

import dataclasses
import time

import numpy as np
from scipy.linalg import block_diag

from distreach.errors import DimensionMismatch, SolverFailure, StructureMismatch
from distreach.model import Box, Mlp, Scenario, check_horizon
from distreach.reach import ReachResult, SolveRecord, box_normals, default_workers, solve_facets
from distreach.reformulate import MergedMlp, ReformedAgent, compose_input, evaluate, reform_scenario
from distreach.sdp import SolverSettings


@dataclasses.dataclass(frozen=True)
class AugmentedSystem:
    """Overall dynamics ``X+ = A_aug X + B_aug sat(net_aug(X)) + w_aug``.

    ``order`` lists every agent id, static ones included, in stacking order.
    Static rows are identity and their known state change enters through
    ``w_aug``; controls are stacked for the dynamic agents only.
    """

    scenario: Scenario
    order: tuple
    A_aug: np.ndarray
    B_aug: np.ndarray
    net_aug: MergedMlp

    @property
    def n_x(self) -> int:
        return self.scenario.graph.n_x

    @property
    def dynamic_rows(self) -> np.ndarray:
        n = self.n_x
        return np.concatenate([np.arange(p * n, (p + 1) * n) for p, i in enumerate(self.order)
                               if not self.scenario.graph[i].is_static])

    def block(self, i: int) -> slice:
        p = self.order.index(i)
        return slice(p * self.n_x, (p + 1) * self.n_x)

    def w(self, k: int) -> np.ndarray:
        parts = []
        for i in self.order:
            a = self.scenario.graph[i]
            parts.append(a.static_state(k + 1) - a.static_state(k) if a.is_static else a.w(k))
        return np.concatenate(parts)

    def stack(self, states: dict, k: int) -> np.ndarray:
        """Overall state from per-agent states (static agents filled in); row-batched."""
        batch = np.asarray(next(iter(states.values()))).shape[:-1]
        parts = []
        for i in self.order:
            a = self.scenario.graph[i]
            parts.append(np.broadcast_to(a.static_state(k), batch + (self.n_x,)) if a.is_static
                         else np.asarray(states[i], dtype=float))
        return np.concatenate(parts, axis=-1)

    def step(self, X, k: int) -> np.ndarray:
        u = evaluate(self.net_aug, X)
        return X @ self.A_aug.T + u @ self.B_aug.T + self.w(k)

    def reformed(self) -> ReformedAgent:
        """Single closed-loop map whose outputs are the dynamic agents' states."""
        rows = self.dynamic_rows
        return ReformedAgent(A_tilde=self.A_aug[rows], B=self.B_aug[rows], net=self.net_aug,
                             members=self.order, w_seq=())

    def input_box(self, boxes: dict, k: int) -> Box:
        parts = [self.scenario.box_at(i, k) if self.scenario.graph[i].is_static else boxes[i] for i in self.order]
        return parts[0].product(*parts[1:])


def augment(scenario: Scenario) -> AugmentedSystem:
    """Stack all agents; each merged network is lifted onto the overall state by a selector."""
    graph = scenario.graph
    order = tuple(graph.ids)
    n_x, n_u = graph.n_x, graph.n_u
    N = len(order) * n_x
    pos = {i: p for p, i in enumerate(order)}
    A = np.zeros((N, N))
    dyn = graph.dynamic_ids
    B = np.zeros((N, len(dyn) * n_u))
    reformed = reform_scenario(scenario)
    lifted = []
    for c, i in enumerate(dyn):
        a = graph[i]
        r = slice(pos[i] * n_x, (pos[i] + 1) * n_x)
        A[r, r] = a.A_self
        for j, Aij in a.A_neighbors:
            A[r, pos[j] * n_x:(pos[j] + 1) * n_x] = Aij
        B[r, c * n_u:(c + 1) * n_u] = a.B
        ra = reformed[i]
        S = np.zeros((ra.net.input_dim, N))
        for m, j in enumerate(ra.members):
            S[m * n_x:(m + 1) * n_x, pos[j] * n_x:(pos[j] + 1) * n_x] = np.eye(n_x)
        lifted.append((compose_input(ra.net.base, S), ra.net))
    for i in order:
        if graph[i].is_static:
            r = slice(pos[i] * n_x, (pos[i] + 1) * n_x)
            A[r, r] = np.eye(n_x)
    depths = {m.depth for m, _ in lifted}
    if len(depths) != 1:
        raise StructureMismatch(f"agent networks differ in depth: {sorted(depths)}")
    layers = []
    for ell in range(depths.pop() + 1):
        Ws = [m.layers[ell][0] for m, _ in lifted]
        W = np.vstack(Ws) if ell == 0 else block_diag(*Ws)
        layers.append((W, np.concatenate([m.layers[ell][1] for m, _ in lifted])))
    net = MergedMlp(Mlp(tuple(layers)),
                    np.concatenate([n.u_lower for _, n in lifted]),
                    np.concatenate([n.u_upper for _, n in lifted]))
    return AugmentedSystem(scenario, order, A, B, net)


def monolithic_step(aug: AugmentedSystem, boxes: dict, k: int, settings: SolverSettings = SolverSettings(),
                    workers: int = 1, ra: ReformedAgent | None = None):
    """Boxes at ``k+1`` for every dynamic agent from one program per facet of the overall state."""
    if aug.scenario.uncertainty is not None:
        raise DimensionMismatch("monolithic mode does not support model uncertainty")
    ra = aug.reformed() if ra is None else ra
    in_box = aug.input_box(boxes, k)
    w = aug.w(k)[aug.dynamic_rows]
    jobs = [(ra, in_box, H, w, None, {"agent": "all", "facet": p, "step": k})
            for p, H in enumerate(box_normals(ra.n_out))]
    results = solve_facets(jobs, settings, workers)
    n = ra.n_out
    vals = np.array([rep.h_value for rep, _ in results])
    upper, lower = vals[:n], -vals[n:]
    mid = 0.5 * (lower + upper)
    lower, upper = np.where(lower > upper, mid, lower), np.where(lower > upper, mid, upper)
    out = {}
    n_x = aug.n_x
    for c, i in enumerate(aug.scenario.graph.dynamic_ids):
        out[i] = Box(lower[c * n_x:(c + 1) * n_x], upper[c * n_x:(c + 1) * n_x])
    records = [SolveRecord(-1, k + 1, p, H, rep, retried)
               for p, (H, (rep, retried)) in enumerate(zip(box_normals(n), results))]
    return out, records


def monolithic_reach(scenario: Scenario, N: int, settings: SolverSettings = SolverSettings(),
                     workers: int | None = None) -> ReachResult:
    """Multi-step recursion with the monolithic program; same result shape as per-agent mode."""
    check_horizon(scenario, N)
    workers = default_workers() if workers is None else workers
    aug = augment(scenario)
    ra = aug.reformed()
    boxes = {i: [scenario.init[i]] for i in scenario.graph.dynamic_ids}
    result = ReachResult(boxes=boxes, mode="monolithic")
    t0 = time.perf_counter()
    for k in range(N):
        ts = time.perf_counter()
        try:
            nxt, records = monolithic_step(aug, {i: b[-1] for i, b in boxes.items()}, k, settings, workers, ra)
        except SolverFailure as exc:
            result.failure = {"step": k, "message": str(exc), "status": exc.status, **exc.context}
            break
        for i, b in nxt.items():
            boxes[i].append(b)
        result.records.extend(records)
        result.step_times.append(time.perf_counter() - ts)
    result.wall_time = time.perf_counter() - t0
    return result
