"""One-step and multi-step forward reachability, one agent at a time."""
from __future__ import annotations

import dataclasses
import logging
import os
import time
import warnings
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from distreach.errors import SolverFailure
from distreach.model import Box, Polytope, Scenario, check_horizon
from distreach.reformulate import ReformedAgent, reform_scenario
from distreach.sdp import SolverSettings, assemble_facet_sdp, solve_facet

log = logging.getLogger(__name__)

WORKERS_ENV = "DISTREACH_WORKERS"


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


@dataclasses.dataclass
class SolveRecord:
    agent: int
    step: int
    facet: int
    normal: np.ndarray
    report: object
    retried: bool = False

    def to_dict(self) -> dict:
        d = {"agent": self.agent, "step": self.step, "facet": self.facet,
             "normal": self.normal.tolist(), "retried": self.retried}
        d.update(self.report.to_dict())
        return d


@dataclasses.dataclass
class ReachResult:
    """Per-agent boxes for steps ``0..N`` plus solver diagnostics."""

    boxes: dict
    records: list = dataclasses.field(default_factory=list)
    mode: str = "per-agent"
    wall_time: float = 0.0
    step_times: list = dataclasses.field(default_factory=list)
    polytopes: dict = dataclasses.field(default_factory=dict)
    failure: dict | None = None

    @property
    def horizon(self) -> int:
        return min(len(b) for b in self.boxes.values()) - 1

    @property
    def complete(self) -> bool:
        return self.failure is None

    @property
    def solve_time(self) -> float:
        """Backend time summed over all facet solves (assembly excluded)."""
        return float(sum(r.report.solve_time for r in self.records))

    @property
    def n_solves(self) -> int:
        return len(self.records)


def _solve_with_retry(sdp, settings: SolverSettings, context: dict):
    try:
        return solve_facet(sdp, settings), False
    except SolverFailure as exc:
        if not settings.retry:
            raise SolverFailure(str(exc), status=exc.status, context=context) from exc
        log.warning("retrying with relaxed tolerance after: %s", exc)
        try:
            return solve_facet(sdp, settings.relaxed()), True
        except SolverFailure as exc2:
            raise SolverFailure(str(exc2), status=exc2.status, context=context) from exc2


def box_normals(n: int) -> np.ndarray:
    """``+e_1 .. +e_n`` (upper bounds) followed by ``-e_1 .. -e_n`` (lower bounds)."""
    eye = np.eye(n)
    return np.vstack([eye, -eye])


def solve_facets(jobs, settings: SolverSettings, workers: int = 1) -> list:
    """Solve ``(ra, box, H, w, uncertainty, context)`` jobs; results keep job order."""

    def run(job):
        ra, box, H, w, unc, ctx = job
        sdp = assemble_facet_sdp(ra, box, H, w, unc)
        return _solve_with_retry(sdp, settings, ctx)

    if workers <= 1 or len(jobs) <= 1:
        return [run(j) for j in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run, jobs))


def input_box(scenario: Scenario, ra: ReformedAgent, boxes: dict, k: int) -> Box:
    """Product of the member boxes in stacking order; static members use their known state."""
    parts = []
    for j in ra.members:
        parts.append(scenario.box_at(j, k) if scenario.graph[j].is_static else boxes[j])
    return parts[0].product(*parts[1:])


def _uncertainty_for(scenario: Scenario, i: int):
    if scenario.uncertainty is None:
        return None
    return scenario.uncertainty.vertices(scenario.graph[i])


def one_step(scenario: Scenario, reformed: dict, boxes: dict, k: int,
             settings: SolverSettings = SolverSettings(), workers: int = 1):
    """Boxes at step ``k+1`` from boxes at step ``k``.

    Returns ``(next_boxes, records)``; ``next_boxes`` covers the dynamic
    agents. Each agent gets ``2 n_x`` facet programs.
    """
    jobs, meta = [], []
    for i in scenario.graph.dynamic_ids:
        ra = reformed[i]
        in_box = input_box(scenario, ra, boxes, k)
        unc = _uncertainty_for(scenario, i)
        w = ra.w(k)
        for p, H in enumerate(box_normals(ra.n_out)):
            jobs.append((ra, in_box, H, w, unc, {"agent": i, "facet": p, "step": k}))
            meta.append((i, p, H))
    results = solve_facets(jobs, settings, workers)
    records = []
    h = {}
    for (i, p, H), (rep, retried) in zip(meta, results):
        records.append(SolveRecord(i, k + 1, p, H, rep, retried))
        h.setdefault(i, []).append(rep.h_value)
    out = {}
    for i, vals in h.items():
        n = len(vals) // 2
        upper = np.array(vals[:n])
        lower = -np.array(vals[n:])
        # an exact program can return lower > upper by solver tolerance on degenerate sets
        mid = np.where(lower > upper, 0.5 * (lower + upper), 0.0)
        out[i] = Box(np.where(lower > upper, mid, lower), np.where(lower > upper, mid, upper))
    return out, records


def multi_step(scenario: Scenario, N: int, settings: SolverSettings = SolverSettings(),
               workers: int | None = None, reformed: dict | None = None) -> ReachResult:
    """Apply :func:`one_step` ``N`` times, feeding each result forward.

    A solver failure stops the recursion; the result then holds the steps
    computed so far and ``failure`` describes the failed solve.
    """
    check_horizon(scenario, N)
    workers = default_workers() if workers is None else workers
    reformed = reform_scenario(scenario) if reformed is None else reformed
    boxes = {i: [scenario.init[i]] for i in scenario.graph.dynamic_ids}
    result = ReachResult(boxes=boxes, mode="per-agent")
    t0 = time.perf_counter()
    for k in range(N):
        ts = time.perf_counter()
        current = {i: b[-1] for i, b in boxes.items()}
        try:
            nxt, records = one_step(scenario, reformed, current, k, settings, workers)
        except SolverFailure as exc:
            result.failure = {"step": k, "message": str(exc), "status": exc.status, **exc.context}
            break
        for i, b in nxt.items():
            boxes[i].append(b)
        result.records.extend(records)
        result.step_times.append(time.perf_counter() - ts)
    result.wall_time = time.perf_counter() - t0
    return result


def custom_polytope_step(scenario: Scenario, ra: ReformedAgent, boxes: dict, normals, k: int,
                         settings: SolverSettings = SolverSettings(), workers: int = 1):
    """Polytope ``{x : H_p^T x <= h_p}`` at step ``k+1`` for user-chosen normals.

    Duplicate normals are solved once. Fewer than ``n_x + 1`` normals cannot
    bound the set; a warning is issued and the (unbounded) polytope returned.
    """
    normals = np.atleast_2d(np.asarray(normals, dtype=float))
    _, first = np.unique(normals, axis=0, return_index=True)
    normals = normals[np.sort(first)]
    if normals.shape[0] < ra.n_out + 1:
        warnings.warn(f"{normals.shape[0]} facet normals cannot bound a set in R^{ra.n_out}", stacklevel=2)
    in_box = input_box(scenario, ra, boxes, k)
    i = ra.agent.id if ra.agent is not None else -1
    unc = _uncertainty_for(scenario, i) if ra.agent is not None else None
    w = ra.w(k)
    jobs = [(ra, in_box, H, w, unc, {"agent": i, "facet": p, "step": k}) for p, H in enumerate(normals)]
    results = solve_facets(jobs, settings, workers)
    records = [SolveRecord(i, k + 1, p, H, rep, retried) for p, (H, (rep, retried)) in enumerate(zip(normals, results))]
    offsets = np.array([rep.h_value for rep, _ in results])
    return Polytope(normals, offsets), records
