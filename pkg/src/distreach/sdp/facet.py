"""Per-facet semidefinite programs: ``min h`` s.t. ``Delta + Theta + Psi(h) <= 0``.

The decision vector is ``y = [h, gamma, lam, nu, eta]``. Every LMI term is
affine in ``y``, so a facet program is stored as one coefficient matrix per
variable plus one constant matrix per model-uncertainty vertex pair.
"""
from __future__ import annotations

import dataclasses
import itertools
import logging
from typing import NamedTuple

import numpy as np

from distreach import qc
from distreach.errors import DimensionMismatch, InfeasibleProblem, SolverFailure
from distreach.intervals import propagate
from distreach.model import Box
from distreach.reformulate import ReformedAgent
from distreach.sdp.backends import INFEASIBLE, OPTIMAL, LmiProblem, make_backend

log = logging.getLogger(__name__)


@dataclasses.dataclass(frozen=True)
class SolverSettings:
    backend: str = "cvxopt"
    tol: float = 1e-8
    cert_tol: float = 1e-6
    max_iter: int = 200
    reduce_degenerate: bool = True
    precondition: bool = True
    retry: bool = True
    verbose: bool = False
    # strict margin F'(y) <= -margin I in the solved basis
    margin: float = 0.0

    def relaxed(self) -> "SolverSettings":
        """Retry settings: looser solver tolerance, plus a small strict margin.

        The margin absorbs residuals that the conditioning congruence
        amplifies when the certificate is evaluated in the original basis.
        """
        return dataclasses.replace(self, tol=10 * self.tol, margin=max(self.margin, 1e-8))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclasses.dataclass(frozen=True)
class VariableLayout:
    n_in: int
    n_relu: int

    @property
    def h(self) -> int:
        return 0

    @property
    def gamma(self) -> slice:
        return slice(1, 1 + self.n_in)

    @property
    def lam(self) -> slice:
        s = 1 + self.n_in
        return slice(s, s + self.n_relu)

    @property
    def nu(self) -> slice:
        s = 1 + self.n_in + self.n_relu
        return slice(s, s + self.n_relu)

    @property
    def eta(self) -> slice:
        s = 1 + self.n_in + 2 * self.n_relu
        return slice(s, s + self.n_relu)

    @property
    def m(self) -> int:
        return 1 + self.n_in + 3 * self.n_relu

    def nonneg_mask(self) -> np.ndarray:
        mask = np.zeros(self.m, dtype=bool)
        for s in (self.gamma, self.nu, self.eta):
            mask[s] = True
        return mask

    def pack(self, h, gamma, lam, nu, eta) -> np.ndarray:
        y = np.zeros(self.m)
        y[self.h] = h
        y[self.gamma], y[self.lam], y[self.nu], y[self.eta] = gamma, lam, nu, eta
        return y


@dataclasses.dataclass(frozen=True)
class SolveReport:
    status: str
    h_value: float | None
    iterations: int
    solve_time: float
    max_eig: float | None
    backend: str = ""
    message: str = ""
    y: np.ndarray | None = dataclasses.field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if (self.h_value is not None) != (self.status == OPTIMAL):
            raise ValueError("h_value must be present exactly when the status is optimal")

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "h_value": self.h_value,
            "iterations": self.iterations,
            "solve_time": self.solve_time,
            "max_eig": self.max_eig,
            "backend": self.backend,
            "message": self.message,
        }


@dataclasses.dataclass
class FacetSdp:
    """One facet program; ``psi_vertices`` holds ``(A_self, B)`` per LMI."""

    ra: ReformedAgent
    box: Box
    H: np.ndarray
    w_k: np.ndarray
    layout: qc.BasisLayout
    variables: VariableLayout
    F: np.ndarray  # (m, d, d)
    F0: list  # one per vertex pair
    psi_vertices: list

    @property
    def n_lmi(self) -> int:
        return len(self.F0)

    @property
    def dim(self) -> int:
        return self.layout.dim

    # builders through the explicit change-of-basis matrices
    def delta(self, gamma) -> np.ndarray:
        return qc.lift_input_qc(qc.build_input_qc(self.box, gamma), self.layout)

    def theta(self, lam, nu, eta) -> np.ndarray:
        Q = qc.build_relu_qc(lam, nu, eta, self.layout.n_relu)
        return qc.lift_relu_qc(self.ra.net, Q, self.layout)

    def psi(self, h, vertex: int = 0) -> np.ndarray:
        A_self, B = self.psi_vertices[vertex]
        return qc.lift_output_qc(self.ra, qc.build_output_qc(self.H, h), self.w_k, self.layout, A_self, B)

    def lmi(self, y, vertex: int = 0) -> np.ndarray:
        return self.F0[vertex] + np.tensordot(y, self.F, axes=1)

    def standard_form(self, reduce_degenerate: bool = True, precondition: bool = False,
                      margin: float = 0.0) -> "StandardForm":
        """LMI problem in a transformed basis ``v = T v'``.

        Degenerate input coordinates are substituted by their fixed value
        (the true basis vector always satisfies this). ``precondition`` adds
        an invertible congruence: inputs are centered and scaled to the unit
        box, neurons are scaled by an interval bound on their magnitude.
        Neither step changes the feasible set. A positive ``margin`` shrinks
        it to ``F'(y) <= -margin I``.
        """
        lay = self.layout
        d = lay.dim
        lo, hi = self.box.lower, self.box.upper
        degenerate = (lo == hi) if reduce_degenerate else np.zeros(lay.n_in, dtype=bool)
        kept_cols = [j for j in range(d) if not (j < lay.n_in and degenerate[j])]
        col_of = {j: c for c, j in enumerate(kept_cols)}
        one_r = col_of[lay.one]
        T_red = np.zeros((d, len(kept_cols)))
        for j in range(d):
            if j < lay.n_in and degenerate[j]:
                T_red[j, one_r] = lo[j]
            else:
                T_red[j, col_of[j]] = 1.0
        T = T_red
        if precondition:
            C = np.eye(len(kept_cols))
            for j in range(lay.n_in):
                if not degenerate[j]:
                    c = col_of[j]
                    C[c, c] = 0.5 * (hi[j] - lo[j])
                    C[c, one_r] = 0.5 * (hi[j] + lo[j])
            # centering neurons as well hurts both backends when their ranges are tiny
            mags = np.concatenate([b[1] for b in propagate(self.ra.net, self.box)[1:]])
            for k, mag in enumerate(mags):
                if mag > 0:
                    c = col_of[lay.n_in + k]
                    C[c, c] = mag
            T = T_red @ C
        keep = np.ones(self.variables.m, dtype=bool)
        keep[self.variables.gamma] = ~degenerate
        F = np.einsum("ia,kij,jb->kab", T, self.F[keep], T, optimize=True)
        F0 = [T.T @ M @ T + margin * np.eye(T.shape[1]) for M in self.F0]
        c = np.zeros(int(keep.sum()))
        c[0] = 1.0
        prob = LmiProblem(c=c, F0=F0, F=F, nonneg=self.variables.nonneg_mask()[keep])
        return StandardForm(prob, np.flatnonzero(keep), T_red, T)


class StandardForm(NamedTuple):
    problem: LmiProblem
    keep: np.ndarray
    T_reduce: np.ndarray
    T_full: np.ndarray


def _coefficients(ra: ReformedAgent, box: Box, layout: qc.BasisLayout, variables: VariableLayout) -> np.ndarray:
    d = layout.dim
    one = layout.one
    F = np.zeros((variables.m, d, d))
    F[variables.h, one, one] = -2.0
    s = box.lower + box.upper
    for j in range(layout.n_in):
        k = variables.gamma.start + j
        F[k, j, j] = -2.0
        F[k, j, one] = F[k, one, j] = s[j]
        F[k, one, one] = -2.0 * box.lower[j] * box.upper[j]
    pre = qc.preactivation_rows(ra.net, layout)
    base = layout.relu.start
    for r in range(layout.n_relu):
        a = pre[r]
        bi = base + r
        # lam: sym(a b^T) - 2 b b^T
        k = variables.lam.start + r
        F[k, :, bi] += a
        F[k, bi, :] += a
        F[k, bi, bi] -= 2.0
        # nu: sym((b - a) c^T)
        k = variables.nu.start + r
        F[k, :, one] -= a
        F[k, one, :] -= a
        F[k, bi, one] += 1.0
        F[k, one, bi] += 1.0
        # eta: sym(b c^T)
        k = variables.eta.start + r
        F[k, bi, one] = F[k, one, bi] = 1.0
    return F


def _constant(ra: ReformedAgent, H, w_k, layout: qc.BasisLayout) -> np.ndarray:
    E = qc.output_basis_matrix(ra, w_k, layout)
    g = E[:ra.n_out].T @ H
    F0 = np.zeros((layout.dim, layout.dim))
    F0[:, layout.one] += g
    F0[layout.one, :] += g
    return F0


def assemble_facet_sdp(ra: ReformedAgent, in_box: Box, H, w_k, uncertainty=None) -> FacetSdp:
    """Build the program bounding ``H^T x_{k+1}`` over ``in_box``.

    ``uncertainty`` is an optional ``(A_vertices, B_vertices)`` pair for the
    agent's own ``A_ii`` and ``B_i``; one LMI is produced per combination.
    """
    H = np.asarray(H, dtype=float)
    w_k = np.asarray(w_k, dtype=float)
    if in_box.dim != ra.net.input_dim:
        raise DimensionMismatch(f"input box has dimension {in_box.dim}, agent expects {ra.net.input_dim}")
    if H.shape != (ra.n_out,):
        raise DimensionMismatch(f"facet normal has shape {H.shape}, state dimension is {ra.n_out}")
    layout = qc.BasisLayout.for_net(ra.net)
    variables = VariableLayout(layout.n_in, layout.n_relu)
    if uncertainty is None:
        vertices = [(None, None)]
    else:
        A_list, B_list = uncertainty
        if len(A_list) < 1 or len(B_list) < 1:
            raise DimensionMismatch("uncertainty vertex lists must be nonempty")
        vertices = list(itertools.product(A_list, B_list))
    F = _coefficients(ra, in_box, layout, variables)
    F0 = [_constant(ra.with_vertex(A, B) if A is not None else ra, H, w_k, layout) for A, B in vertices]
    return FacetSdp(ra, in_box, H, w_k, layout, variables, F, F0, vertices)


def solve_facet(sdp: FacetSdp, settings: SolverSettings = SolverSettings()) -> SolveReport:
    """Solve and certify one facet program.

    Raises:
        InfeasibleProblem: the backend declared the LMI infeasible.
        SolverFailure: any other non-optimal outcome, or a failed
            eigenvalue certificate.
    """
    form = sdp.standard_form(settings.reduce_degenerate, settings.precondition, settings.margin)
    keep, T_red = form.keep, form.T_reduce
    backend = make_backend(settings.backend, tol=settings.tol, max_iter=settings.max_iter, verbose=settings.verbose)
    res = backend.solve(form.problem)
    if res.status != OPTIMAL:
        exc = InfeasibleProblem if res.status == INFEASIBLE else SolverFailure
        raise exc(f"backend {backend.name} returned {res.raw_status}", status=res.status)
    y = np.zeros(sdp.variables.m)
    y[keep] = res.y
    # certificate in the reduced basis, without the conditioning congruence
    max_eig = max(float(np.linalg.eigvalsh(T_red.T @ sdp.lmi(y, v) @ T_red)[-1]) for v in range(sdp.n_lmi))
    if max_eig > settings.cert_tol:
        raise SolverFailure(f"eigenvalue certificate failed: max eigenvalue {max_eig:.3e}", status="numerical-failure")
    return SolveReport(OPTIMAL, float(y[0]), res.iterations, res.solve_time, max_eig, backend.name, res.raw_status, y)
