"""Tangent-point self-avoidance energy and its first variation.

The energy integrates r(p, x)^(-q) over curve point pairs, where r is the
radius of the circle through x tangent to the curve at p,

    r = |x - p|^2 / (2 |(x - p) x t_p|),      TP = 1/(2^q q) integral r^(-q),

with arclength weights |y'| carried explicitly since the discrete curve is
only approximately unit speed.  A strip of parameter half-width `cutoff`
(2 h_max by default) around the diagonal is removed at element-pair
granularity: a pair of elements enters iff the periodic parameter gap
between them is at least the cutoff.  The gradient differentiates the
quadrature sum itself, so the force is exactly consistent with the reported
energy.  Pair loops are compiled and run serially, which keeps summation
order fixed between runs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from . import mesh as msh
from .mesh import HermiteCurve, Mesh1D

__all__ = [
    "TangentPointParams",
    "tp_radius",
    "tp_energy",
    "tp_gradient",
    "tp_energy_gradient",
    "min_strand_distance",
]


@dataclass(frozen=True)
class TangentPointParams:
    q: float
    rho: float
    cutoff: float

    def __post_init__(self):
        if not self.q > 2.0:
            raise ValueError(f"tangent-point exponent must exceed 2, got {self.q}")
        if self.rho < 0.0:
            raise ValueError("rho must be nonnegative")
        if self.cutoff < 0.0:
            raise ValueError("cutoff must be nonnegative")

    @classmethod
    def for_mesh(cls, mesh: Mesh1D, q: float = 4.0, rho: float = 0.0) -> "TangentPointParams":
        return cls(q=q, rho=rho, cutoff=2.0 * mesh.h_max)


def tp_radius(p, t_p, x) -> float:
    """Radius of the circle tangent at p (direction t_p, unit) through x.

    Infinite when x - p is parallel to t_p; x = p is rejected.
    """
    u = np.asarray(x, dtype=float) - np.asarray(p, dtype=float)
    n2 = float(u @ u)
    if n2 == 0.0:
        raise ValueError("tangent-point radius undefined for coincident points")
    c = np.cross(u, np.asarray(t_p, dtype=float))
    m = float(np.sqrt(c @ c))
    if m == 0.0:
        return float("inf")
    return n2 / (2.0 * m)


def _kept_pairs(mesh: Mesh1D, cutoff: float) -> tuple[np.ndarray, np.ndarray]:
    """Element pairs (i < j) whose parameter gap is at least the cutoff."""
    key = ("tp_pairs", float(cutoff))
    if key not in mesh._cache:
        z = mesh.nodes
        L = mesh.length
        ne = mesh.n_elements
        ii, jj = np.triu_indices(ne, k=1)
        gap = z[jj] - z[ii + 1]
        if mesh.periodic:
            gap = np.minimum(gap, L - z[jj + 1] + z[ii])
        keep = gap >= cutoff
        mesh._cache[key] = (ii[keep].astype(np.int64), jj[keep].astype(np.int64))
    return mesh._cache[key]


def _gauss_geometry(curve: HermiteCurve, mesh: Mesh1D, ng: int):
    B0, B1, _, w = mesh.curve_basis(ng)
    ed = curve.element_dofs(mesh)
    P = np.einsum("egk,ekc->egc", B0, ed)
    V = np.einsum("egk,ekc->egc", B1, ed)
    hw = mesh.elem_lengths[:, None] * w[None, :]
    return P, V, hw


@njit(cache=True)
def _tp_kernel(P, V, hw, pi, pj, q, want_grad, gP, gV):
    # Both orientations of each unordered pair: evaluation point on one
    # element, tangency point on the other.  Returns (energy, bad_pair_index).
    ng = P.shape[1]
    total = 0.0
    for k in range(pi.shape[0]):
        for orient in range(2):
            a = pi[k] if orient == 0 else pj[k]
            b = pj[k] if orient == 0 else pi[k]
            for g in range(ng):
                x0, x1, x2 = P[a, g, 0], P[a, g, 1], P[a, g, 2]
                vx0, vx1, vx2 = V[a, g, 0], V[a, g, 1], V[a, g, 2]
                Ax = (vx0 * vx0 + vx1 * vx1 + vx2 * vx2) ** 0.5
                for gg in range(ng):
                    p0, p1, p2 = P[b, gg, 0], P[b, gg, 1], P[b, gg, 2]
                    vp0, vp1, vp2 = V[b, gg, 0], V[b, gg, 1], V[b, gg, 2]
                    Ap = (vp0 * vp0 + vp1 * vp1 + vp2 * vp2) ** 0.5
                    t0, t1, t2 = vp0 / Ap, vp1 / Ap, vp2 / Ap
                    u0, u1, u2 = x0 - p0, x1 - p1, x2 - p2
                    n2 = u0 * u0 + u1 * u1 + u2 * u2
                    if n2 < 1e-28:
                        return np.nan, k
                    # m_vec = u x t_hat
                    m0 = u1 * t2 - u2 * t1
                    m1 = u2 * t0 - u0 * t2
                    m2 = u0 * t1 - u1 * t0
                    m2sq = m0 * m0 + m1 * m1 + m2 * m2
                    if m2sq < 1e-28 * n2:
                        continue
                    m = m2sq ** 0.5
                    W = hw[a, g] * hw[b, gg]
                    gval = (m ** q) / (n2 ** q) / q
                    total += W * Ax * Ap * gval
                    if want_grad:
                        base = W * Ax * Ap
                        cm = m ** (q - 2.0) / (n2 ** q)
                        cn = -2.0 * (m ** q) / (n2 ** (q + 1.0))
                        # d gval / du = cm * (t_hat x m_vec) + cn * u
                        d0 = cm * (t1 * m2 - t2 * m1) + cn * u0
                        d1 = cm * (t2 * m0 - t0 * m2) + cn * u1
                        d2 = cm * (t0 * m1 - t1 * m0) + cn * u2
                        gP[a, g, 0] += base * d0
                        gP[a, g, 1] += base * d1
                        gP[a, g, 2] += base * d2
                        gP[b, gg, 0] -= base * d0
                        gP[b, gg, 1] -= base * d1
                        gP[b, gg, 2] -= base * d2
                        # through the arclength weight at the evaluation point
                        cx = W * Ap * gval / Ax
                        gV[a, g, 0] += cx * vx0
                        gV[a, g, 1] += cx * vx1
                        gV[a, g, 2] += cx * vx2
                        # through weight and tangent at the tangency point
                        e0 = cm * (m1 * u2 - m2 * u1)
                        e1 = cm * (m2 * u0 - m0 * u2)
                        e2 = cm * (m0 * u1 - m1 * u0)
                        tdot = e0 * t0 + e1 * t1 + e2 * t2
                        e0 -= tdot * t0
                        e1 -= tdot * t1
                        e2 -= tdot * t2
                        cp = W * Ax * gval / Ap
                        gV[b, gg, 0] += cp * vp0 + W * Ax * e0
                        gV[b, gg, 1] += cp * vp1 + W * Ax * e1
                        gV[b, gg, 2] += cp * vp2 + W * Ax * e2
    return total, -1


def tp_energy_gradient(curve: HermiteCurve, mesh: Mesh1D, params: TangentPointParams,
                       ng: int = 3, want_grad: bool = True):
    """Tangent-point energy and (optionally) its gradient over curve dofs."""
    pi, pj = _kept_pairs(mesh, params.cutoff)
    P, V, hw = _gauss_geometry(curve, mesh, ng)
    gP = np.zeros_like(P) if want_grad else np.zeros((1, 1, 3))
    gV = np.zeros_like(V) if want_grad else np.zeros((1, 1, 3))
    total, bad = _tp_kernel(P, V, hw, pi, pj, float(params.q), want_grad, gP, gV)
    if bad >= 0:
        raise FloatingPointError(
            f"tangent-point energy non-finite at element pair ({pi[bad]}, {pj[bad]}): coincident points"
        )
    if not want_grad:
        return float(total), None
    B0, B1, _, _ = mesh.curve_basis(ng)
    elem = np.einsum("egk,egc->ekc", B0, gP) + np.einsum("egk,egc->ekc", B1, gV)
    grad = np.zeros(6 * mesh.n_curve_nodes)
    np.add.at(grad, mesh.curve_dof_index().ravel(), elem.reshape(mesh.n_elements, -1).ravel())
    return float(total), grad


def tp_energy(curve: HermiteCurve, mesh: Mesh1D, params: TangentPointParams, ng: int = 3) -> float:
    """Tangent-point energy of the curve with the diagonal strip removed."""
    return tp_energy_gradient(curve, mesh, params, ng=ng, want_grad=False)[0]


def tp_gradient(curve: HermiteCurve, mesh: Mesh1D, params: TangentPointParams, ng: int = 3) -> np.ndarray:
    """Gradient of tp_energy with respect to all Hermite dofs."""
    return tp_energy_gradient(curve, mesh, params, ng=ng, want_grad=True)[1]


@njit(cache=True)
def _min_dist_kernel(pos, z, L, periodic, cutoff):
    n = pos.shape[0]
    best = 1e300
    for i in range(n):
        for j in range(i + 1, n):
            gap = z[j] - z[i]
            if periodic:
                g2 = L - gap
                if g2 < gap:
                    gap = g2
            if gap < cutoff:
                continue
            d0 = pos[i, 0] - pos[j, 0]
            d1 = pos[i, 1] - pos[j, 1]
            d2 = pos[i, 2] - pos[j, 2]
            d = (d0 * d0 + d1 * d1 + d2 * d2) ** 0.5
            if d < best:
                best = d
    return best


def min_strand_distance(curve: HermiteCurve, mesh: Mesh1D, cutoff: float | None = None) -> float:
    """Smallest nodal distance between parameter-separated parts of the curve.

    Node pairs closer than `cutoff` along the curve (periodic gap) are
    ignored, mirroring the energy's diagonal strip; default cutoff 2 h_max.
    """
    if cutoff is None:
        cutoff = 2.0 * mesh.h_max
    z = mesh.nodes[: mesh.n_curve_nodes]
    return float(_min_dist_kernel(curve.positions, z, mesh.length, mesh.periodic, cutoff))
