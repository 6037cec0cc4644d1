"""Interval arithmetic helpers (sign-split affine images, network propagation)."""
from __future__ import annotations

import numpy as np

from distreach.model import Box
from distreach.reformulate import MergedMlp


def affine_hull(M, lower, upper, offset=0.0):
    """Exact interval image of ``M x + offset`` over the box ``[lower, upper]``."""
    M = np.asarray(M, dtype=float)
    pos = np.maximum(M, 0.0)
    neg = np.minimum(M, 0.0)
    lo = pos @ lower + neg @ upper + offset
    hi = pos @ upper + neg @ lower + offset
    return lo, hi


def propagate(net: MergedMlp, box: Box):
    """Interval bounds of every activation ``z^0 .. z^{L+2}``.

    Used for numerical conditioning only; never to tighten constraints.
    """
    lo, hi = box.lower, box.upper
    out = [(lo, hi)]
    for W, b in net.base.layers[:-1]:
        lo, hi = affine_hull(W, lo, hi, b)
        lo, hi = np.maximum(lo, 0.0), np.maximum(hi, 0.0)
        out.append((lo, hi))
    W, b = net.base.layers[-1]
    lo, hi = affine_hull(W, lo, hi, b - net.u_lower)
    lo, hi = np.maximum(lo, 0.0), np.maximum(hi, 0.0)
    out.append((lo, hi))
    span = net.u_upper - net.u_lower
    lo, hi = np.maximum(span - hi, 0.0), np.maximum(span - lo, 0.0)
    out.append((lo, hi))
    return out
