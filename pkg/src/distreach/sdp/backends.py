"""Conic backends for linear SDPs in LMI form.

Every backend solves::

    minimize    c^T y
    subject to  F0_b + sum_k y_k F_k  <= 0   (negative semidefinite, every block b)
                y_k >= 0                     (k in nonneg)

and reports one of ``optimal``, ``infeasible``, ``numerical-failure`` or
``limit``.
"""
from __future__ import annotations

import dataclasses
import time

import numpy as np
import scipy.sparse as sp

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
NUMERICAL = "numerical-failure"
LIMIT = "limit"


@dataclasses.dataclass
class LmiProblem:
    c: np.ndarray
    F0: list  # one constant d x d matrix per LMI block
    F: np.ndarray  # (m, d, d) coefficients, shared by all blocks
    nonneg: np.ndarray  # boolean mask of length m

    @property
    def m(self) -> int:
        return self.c.shape[0]

    @property
    def d(self) -> int:
        return self.F.shape[1]

    def value(self, y, block: int = 0) -> np.ndarray:
        return self.F0[block] + np.tensordot(y, self.F, axes=1)

    def max_eig(self, y) -> float:
        return max(float(np.linalg.eigvalsh(self.value(y, b))[-1]) for b in range(len(self.F0)))


@dataclasses.dataclass
class BackendResult:
    status: str
    y: np.ndarray | None
    iterations: int
    solve_time: float
    raw_status: str


def _svec_index(d: int):
    """Clarabel's triangle ordering: upper triangle, column by column."""
    rows, cols = [], []
    for j in range(d):
        for i in range(j + 1):
            rows.append(i)
            cols.append(j)
    rows, cols = np.array(rows), np.array(cols)
    scale = np.where(rows == cols, 1.0, np.sqrt(2.0))
    return rows, cols, scale


class ClarabelBackend:
    name = "clarabel"

    def __init__(self, tol: float = 1e-8, max_iter: int = 200, verbose: bool = False):
        self.tol = tol
        self.max_iter = max_iter
        self.verbose = verbose

    def solve(self, prob: LmiProblem) -> BackendResult:
        import clarabel

        m, d = prob.m, prob.d
        rows, cols, scale = _svec_index(d)
        Fs = prob.F[:, rows, cols] * scale  # (m, nvec)
        A_blocks, b_blocks, cones = [], [], []
        nn = np.flatnonzero(prob.nonneg)
        if nn.size:
            A_blocks.append(sp.csc_matrix((-np.ones(nn.size), (np.arange(nn.size), nn)), shape=(nn.size, m)))
            b_blocks.append(np.zeros(nn.size))
            cones.append(clarabel.NonnegativeConeT(nn.size))
        for F0 in prob.F0:
            A_blocks.append(sp.csc_matrix(Fs.T))
            b_blocks.append(-F0[rows, cols] * scale)
            cones.append(clarabel.PSDTriangleConeT(d))
        A = sp.vstack(A_blocks, format="csc")
        b = np.concatenate(b_blocks)
        P = sp.csc_matrix((m, m))
        settings = clarabel.DefaultSettings()
        settings.verbose = self.verbose
        settings.max_iter = self.max_iter
        settings.tol_gap_abs = self.tol
        settings.tol_gap_rel = self.tol
        settings.tol_feas = self.tol
        settings.presolve_enable = False
        solver = clarabel.DefaultSolver(P, np.asarray(prob.c, dtype=float), A, b, cones, settings)
        t0 = time.perf_counter()
        sol = solver.solve()
        elapsed = time.perf_counter() - t0
        raw = str(sol.status)
        if raw.endswith("Solved") and "Almost" not in raw:
            status = OPTIMAL
        elif "Infeasible" in raw:
            status = INFEASIBLE
        elif "MaxIterations" in raw or "MaxTime" in raw:
            status = LIMIT
        else:
            status = NUMERICAL
        y = np.array(sol.x) if status == OPTIMAL else None
        return BackendResult(status, y, int(sol.iterations), elapsed, raw)


class CvxoptBackend:
    name = "cvxopt"

    def __init__(self, tol: float = 1e-8, max_iter: int = 200, verbose: bool = False):
        self.tol = tol
        self.max_iter = max_iter
        self.verbose = verbose

    def solve(self, prob: LmiProblem) -> BackendResult:
        from cvxopt import matrix, solvers

        m, d = prob.m, prob.d
        nn = np.flatnonzero(prob.nonneg)
        Gl = np.zeros((nn.size, m))
        Gl[np.arange(nn.size), nn] = -1.0
        # column-major vec of each F_k
        G = np.ascontiguousarray(prob.F.transpose(0, 2, 1).reshape(m, d * d).T)
        Gs = [matrix(G) for _ in prob.F0]
        hs = [matrix(-np.asarray(F0, dtype=float)) for F0 in prob.F0]
        opts = {
            "show_progress": self.verbose,
            "maxiters": self.max_iter,
            "abstol": self.tol,
            "reltol": self.tol,
            # tighter feasibility targets make the dual iterates drift after the optimum is reached
            "feastol": max(self.tol, 1e-7),
        }
        t0 = time.perf_counter()
        try:
            if nn.size:
                sol = solvers.sdp(matrix(np.asarray(prob.c, dtype=float)), Gl=matrix(Gl), hl=matrix(np.zeros(nn.size)),
                                  Gs=Gs, hs=hs, options=opts)
            else:
                sol = solvers.sdp(matrix(np.asarray(prob.c, dtype=float)), Gs=Gs, hs=hs, options=opts)
        except (ValueError, ArithmeticError) as exc:
            return BackendResult(NUMERICAL, None, 0, time.perf_counter() - t0, f"exception: {exc}")
        elapsed = time.perf_counter() - t0
        raw = sol["status"]
        if raw == "optimal":
            status = OPTIMAL
        elif "infeasible" in raw:
            status = INFEASIBLE
        else:
            status = NUMERICAL
        y = np.array(sol["x"]).ravel() if sol["x"] is not None else None
        if status == NUMERICAL and y is not None:
            # 'unknown' after stalling at the optimum: the slack residual can stay large while
            # y itself satisfies the LMI. Feasibility of y is left to the caller's certificate.
            gap = sol.get("relative gap")
            if gap is not None and abs(gap) < 1e3 * self.tol:
                status = OPTIMAL
        if status != OPTIMAL:
            y = None
        return BackendResult(status, y, int(sol.get("iterations", 0)), elapsed, raw)


BACKENDS = {"clarabel": ClarabelBackend, "cvxopt": CvxoptBackend}


def make_backend(name: str, **kwargs):
    try:
        return BACKENDS[name](**kwargs)
    except KeyError:
        raise ValueError(f"unknown backend {name!r}; choose from {sorted(BACKENDS)}") from None
