"""Quadratic constraints in the shared basis ``[z^0; z^1; ...; z^{L+2}; 1]``.

Input set (box), ReLU activations and the output halfspace are each written
as a small symmetric matrix on their local variables, then lifted to the
shared basis with a change-of-basis matrix ``E`` as ``E.T @ M @ E``.
"""
from __future__ import annotations

import dataclasses

import numpy as np

from distreach.errors import DimensionMismatch, NegativeGamma, NegativeMultiplier
from distreach.model import Box
from distreach.reformulate import MergedMlp, ReformedAgent


def _sym(M):
    return 0.5 * (M + M.T)


@dataclasses.dataclass(frozen=True)
class BasisLayout:
    """Offsets of each activation segment inside the basis vector."""

    widths: tuple  # z^0, z^1 .. z^L, z^{L+1}, z^{L+2}, then the constant

    @classmethod
    def for_net(cls, net: MergedMlp) -> "BasisLayout":
        return cls((net.input_dim,) + tuple(net.hidden_widths) + (net.n_u, net.n_u, 1))

    @property
    def offsets(self) -> tuple:
        return tuple(np.concatenate([[0], np.cumsum(self.widths)[:-1]]).astype(int))

    @property
    def dim(self) -> int:
        return int(sum(self.widths))

    @property
    def n_in(self) -> int:
        return self.widths[0]

    @property
    def n_relu(self) -> int:
        """Number of ReLU units, clamp layers included."""
        return int(sum(self.widths[1:-1]))

    @property
    def n_u(self) -> int:
        return self.widths[-2]

    @property
    def one(self) -> int:
        return self.dim - 1

    def segment(self, idx: int) -> slice:
        off = self.offsets[idx]
        return slice(off, off + self.widths[idx])

    @property
    def z_in(self) -> slice:
        return self.segment(0)

    @property
    def relu(self) -> slice:
        """Basis positions of ``nu = (z^1, ..., z^{L+2})``."""
        return slice(self.n_in, self.one)

    @property
    def z_last(self) -> slice:
        return self.segment(len(self.widths) - 2)

    def stack(self, activations) -> np.ndarray:
        """Basis vector ``[z; 1]`` from a forward pass (batched rows allowed)."""
        acts = [np.asarray(a, dtype=float) for a in activations]
        ones = np.ones(acts[0].shape[:-1] + (1,))
        v = np.concatenate(acts + [ones], axis=-1)
        if v.shape[-1] != self.dim:
            raise DimensionMismatch(f"activations give a basis of width {v.shape[-1]}, layout expects {self.dim}")
        return v


@dataclasses.dataclass(frozen=True)
class QcMultipliers:
    gamma: np.ndarray
    lam: np.ndarray
    nu: np.ndarray
    eta: np.ndarray

    def __post_init__(self):
        for name in ("gamma", "nu", "eta"):
            if np.any(np.asarray(getattr(self, name)) < 0):
                raise NegativeMultiplier(f"{name} must be nonnegative")


def quad(M, v) -> np.ndarray:
    """``v^T M v``, row-batched over ``v``."""
    v = np.asarray(v, dtype=float)
    return np.einsum("...i,ij,...j->...", v, M, v)


# -- input set ---------------------------------------------------------------

def build_input_qc(box: Box, gamma) -> np.ndarray:
    """``P(Gamma)``: nonnegative on ``[x; 1]`` for every ``x`` in ``box``."""
    gamma = np.asarray(gamma, dtype=float)
    if gamma.shape != (box.dim,):
        raise DimensionMismatch(f"gamma has shape {gamma.shape}, box has dimension {box.dim}")
    if np.any(gamma < 0):
        raise NegativeGamma("gamma must be nonnegative")
    n = box.dim
    s = box.lower + box.upper
    P = np.zeros((n + 1, n + 1))
    P[:n, :n] = -2.0 * np.diag(gamma)
    P[:n, n] = gamma * s
    P[n, :n] = gamma * s
    P[n, n] = -2.0 * np.sum(box.lower * gamma * box.upper)
    return P


def input_basis_matrix(layout: BasisLayout) -> np.ndarray:
    E = np.zeros((layout.n_in + 1, layout.dim))
    E[:layout.n_in, layout.z_in] = np.eye(layout.n_in)
    E[layout.n_in, layout.one] = 1.0
    return E


def lift_input_qc(P, layout: BasisLayout) -> np.ndarray:
    if P.shape != (layout.n_in + 1, layout.n_in + 1):
        raise DimensionMismatch(f"P has shape {P.shape}, layout input width is {layout.n_in}")
    E = input_basis_matrix(layout)
    return _sym(E.T @ P @ E)


# -- ReLU activations --------------------------------------------------------

def build_relu_qc(lam, nu, eta, width: int) -> np.ndarray:
    """Per-neuron ReLU constraint on ``[nu_hat; nu; 1]``.

    Encodes ``nu * (nu - nu_hat) = 0`` (free ``lam``), ``nu >= nu_hat`` and
    ``nu >= 0`` (nonnegative ``nu``, ``eta``).
    """
    lam, nu, eta = (np.asarray(a, dtype=float) for a in (lam, nu, eta))
    for name, a in (("lam", lam), ("nu", nu), ("eta", eta)):
        if a.shape != (width,):
            raise DimensionMismatch(f"{name} has shape {a.shape}, expected ({width},)")
    if np.any(nu < 0) or np.any(eta < 0):
        raise NegativeMultiplier("nu and eta must be nonnegative")
    T = np.diag(lam)
    Q = np.zeros((2 * width + 1, 2 * width + 1))
    a, b, c = slice(0, width), slice(width, 2 * width), 2 * width
    Q[a, b] = T
    Q[b, a] = T
    Q[b, b] = -2.0 * T
    Q[a, c] = -nu
    Q[c, a] = -nu
    Q[b, c] = nu + eta
    Q[c, b] = nu + eta
    return Q


def preactivation_rows(net: MergedMlp, layout: BasisLayout) -> np.ndarray:
    """Affine maps basis -> ``nu_hat`` (one row per ReLU unit)."""
    if layout != BasisLayout.for_net(net):
        raise DimensionMismatch("layout does not match the network")
    d = layout.dim
    rows = np.zeros((layout.n_relu, d))
    r = 0
    for ell, (W, b) in enumerate(net.base.layers):
        src = layout.segment(ell)
        rows[r:r + W.shape[0], src] = W
        rows[r:r + W.shape[0], layout.one] = b
        r += W.shape[0]
    rows[r - net.n_u:r, layout.one] -= net.u_lower
    L1 = len(layout.widths) - 3
    rows[r:r + net.n_u, layout.segment(L1)] = -np.eye(net.n_u)
    rows[r:r + net.n_u, layout.one] = net.u_upper - net.u_lower
    return rows


def relu_basis_matrix(net: MergedMlp, layout: BasisLayout) -> np.ndarray:
    """``E_mid``: basis -> ``[nu_hat; nu; 1]``."""
    n = layout.n_relu
    E = np.zeros((2 * n + 1, layout.dim))
    E[:n] = preactivation_rows(net, layout)
    E[n:2 * n, layout.relu] = np.eye(n)
    E[2 * n, layout.one] = 1.0
    return E


def lift_relu_qc(net: MergedMlp, Q, layout: BasisLayout) -> np.ndarray:
    n = layout.n_relu
    if Q.shape != (2 * n + 1, 2 * n + 1):
        raise DimensionMismatch(f"Q has shape {Q.shape}, network has {n} ReLU units")
    E = relu_basis_matrix(net, layout)
    return _sym(E.T @ Q @ E)


# -- output halfspace --------------------------------------------------------

def build_output_qc(H, h: float) -> np.ndarray:
    """``S(h)`` with ``[x; 1]^T S [x; 1] = 2 (H^T x - h)``."""
    H = np.asarray(H, dtype=float)
    if H.ndim != 1:
        raise DimensionMismatch("H must be a vector")
    n = H.shape[0]
    S = np.zeros((n + 1, n + 1))
    S[:n, n] = H
    S[n, :n] = H
    S[n, n] = -2.0 * h
    return S


def output_basis_matrix(ra: ReformedAgent, w_k, layout: BasisLayout, A_self=None, B=None) -> np.ndarray:
    """``E_out``: basis -> ``[x_{k+1}; 1]`` (vertex ``A_self``/``B`` optional)."""
    if A_self is not None or B is not None:
        ra = ra.with_vertex(A_self, B)
    w_k = np.asarray(w_k, dtype=float)
    if w_k.shape != (ra.n_out,):
        raise DimensionMismatch(f"w has shape {w_k.shape}, expected ({ra.n_out},)")
    E = np.zeros((ra.n_out + 1, layout.dim))
    E[:ra.n_out, layout.z_in] = ra.A_tilde
    E[:ra.n_out, layout.z_last] = -ra.B
    E[:ra.n_out, layout.one] = ra.B @ ra.net.u_upper + w_k
    E[ra.n_out, layout.one] = 1.0
    return E


def lift_output_qc(ra: ReformedAgent, S, w_k, layout: BasisLayout, A_self=None, B=None) -> np.ndarray:
    if S.shape != (ra.n_out + 1, ra.n_out + 1):
        raise DimensionMismatch(f"S has shape {S.shape}, state dimension is {ra.n_out}")
    E = output_basis_matrix(ra, w_k, layout, A_self, B)
    return _sym(E.T @ S @ E)
