"""Twist, writhe, linking number, and frame-uniformity diagnostics.

Total twist integrates the rotation rate of the normalized frame,

    beta = det(y', b, b') / (|y' x b| |b|),

elementwise by Gauss quadrature; normalizing makes the integral recover the
exact nodal frame angles on straight segments and keeps the value accurate
even though the interpolated director dips inside the unit sphere between
nodes.  Writhe and linking number are Gauss double integrals

    (1/4pi) int int det(ya(x) - yb(x~), ya'(x), yb'(x~)) / |ya - yb|^3,

evaluated with a 3x3 Gauss product rule per element pair.  For the writhe
of a single curve a diagonal strip of parameter half-width 2 h_max is
skipped (the interpolant is only C^1 there); for two disjoint curves, pairs
that are close relative to their size are subdivided recursively so the
near-contact peak of the kernel is resolved even when the curve offset is
below the mesh size.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from numba import njit

from . import mesh as msh
from .mesh import DirectorField, HermiteCurve, Mesh1D
from .model import RodState

__all__ = [
    "TopologyReport",
    "total_twist",
    "twist_rate_profile",
    "writhe",
    "linking_number",
    "gauss_link_integral",
    "calugareanu_residual",
    "uniformity_quotient",
    "topology_report",
]

_NG = 3


@dataclass(frozen=True)
class TopologyReport:
    total_twist: float
    writhe: float | None
    linking_number: float | None
    calugareanu_residual: float | None
    uniformity_quotient: float | None


def _twist_integrand_per_element(state: RodState):
    """(Ne, ng) normalized twist rate at the Gauss points, plus weights."""
    from .model import _curve_gauss

    mesh = state.mesh
    w = msh.gauss_rule(_NG)[1]
    yp = _curve_gauss(state)[0]
    v = state.director.values
    t, _ = msh.gauss_rule(_NG)
    b = v[:-1, None, :] * (1 - t)[None, :, None] + v[1:, None, :] * t[None, :, None]
    bp = (v[1:] - v[:-1]) / mesh.elem_lengths[:, None]
    c = np.empty_like(b)  # y' x b
    c[..., 0] = yp[..., 1] * b[..., 2] - yp[..., 2] * b[..., 1]
    c[..., 1] = yp[..., 2] * b[..., 0] - yp[..., 0] * b[..., 2]
    c[..., 2] = yp[..., 0] * b[..., 1] - yp[..., 1] * b[..., 0]
    det = np.einsum("egc,ec->eg", c, bp)
    denom = np.sqrt(np.einsum("egc,egc->eg", c, c) * np.einsum("egc,egc->eg", b, b))
    return det / np.maximum(denom, 1e-300), w


def total_twist(state: RodState) -> float:
    """(1/2pi) times the integral of the frame rotation rate."""
    beta, w = _twist_integrand_per_element(state)
    h = state.mesh.elem_lengths
    return float(np.einsum("g,eg,e->", w, beta, h)) / (2.0 * math.pi)


def twist_rate_profile(state: RodState) -> np.ndarray:
    """Element means of the twist rate; integrates exactly to 2 pi total_twist."""
    beta, w = _twist_integrand_per_element(state)
    return np.einsum("g,eg->e", w, beta)


def uniformity_quotient(state: RodState, theta: float = 1.0, twisting: float | None = None):
    """Ratio of the Cauchy-Schwarz lower bound (2 pi^2 / L) Tw^2 to the
    twisting energy; 1 exactly for constant twist rate."""
    if twisting is None:
        from .model import FlowConfig, energy_breakdown

        cfg = FlowConfig(kappa=2.0 * min(theta, 1.0), epsilon=1.0, tau=1.0)
        twisting = energy_breakdown(state, cfg).twisting
    if not twisting > 0.0:
        return None
    tw = total_twist(state)
    L = state.mesh.length
    return float(2.0 * math.pi**2 / L * tw * tw / twisting)


# ---------------------------------------------------------------------------
# Gauss double integrals

@njit(cache=True)
def _pair_quad(Pa, Va, Pb, Vb, wts):
    # product-rule value of the Gauss kernel on one element pair,
    # точки/velocities already weighted by element length outside
    total = 0.0
    ng = Pa.shape[0]
    for g in range(ng):
        for gg in range(ng):
            d0 = Pa[g, 0] - Pb[gg, 0]
            d1 = Pa[g, 1] - Pb[gg, 1]
            d2 = Pa[g, 2] - Pb[gg, 2]
            c0 = Va[g, 1] * Vb[gg, 2] - Va[g, 2] * Vb[gg, 1]
            c1 = Va[g, 2] * Vb[gg, 0] - Va[g, 0] * Vb[gg, 2]
            c2 = Va[g, 0] * Vb[gg, 1] - Va[g, 1] * Vb[gg, 0]
            num = d0 * c0 + d1 * c1 + d2 * c2
            r2 = d0 * d0 + d1 * d1 + d2 * d2
            total += wts[g] * wts[gg] * num / (r2 * math.sqrt(r2))
    return total


@njit(cache=True)
def _writhe_kernel(P, V, h, skip_mask, wts):
    ne = P.shape[0]
    total = 0.0
    for i in range(ne):
        for j in range(i + 1, ne):
            if skip_mask[i, j]:
                continue
            total += 2.0 * h[i] * h[j] * _pair_quad(P[i], V[i], P[j], V[j], wts)
    return total


def _gauss_geometry(curve, mesh, ng):
    B0, B1, _, w = mesh.curve_basis(ng)
    ed = curve.element_dofs(mesh)
    P = np.einsum("egk,ekc->egc", B0, ed)
    V = np.einsum("egk,ekc->egc", B1, ed)
    return P, V, w


def writhe(curve: HermiteCurve, mesh: Mesh1D, cutoff: float | None = None) -> float:
    """Gauss self-integral of a closed curve, diagonal strip excluded."""
    if not mesh.periodic:
        raise ValueError("writhe requires a closed (periodic) curve")
    if cutoff is None:
        cutoff = 2.0 * mesh.h_max
    pos = curve.positions
    z = mesh.nodes[: mesh.n_curve_nodes]
    from .selfavoid import _min_dist_kernel

    sep = _min_dist_kernel(pos, z, mesh.length, True, cutoff)
    if sep < 1e-6:
        warnings.warn(f"writhe of a nearly self-intersecting curve (separation {sep:.2e})")
    ne = mesh.n_elements
    zl = mesh.nodes[:-1]
    zr = mesh.nodes[1:]
    fwd = zl[None, :] - zr[:, None]  # gap from element i to later element j
    gap = np.where(fwd >= 0, fwd, np.inf)
    back = (mesh.length - zr[None, :]) + zl[:, None]
    gap = np.minimum(gap, np.where(back >= 0, back, np.inf))
    skip = (np.minimum(gap, gap.T) < cutoff) | np.eye(ne, dtype=bool)
    P, V, w = _gauss_geometry(curve, mesh, _NG)
    val = _writhe_kernel(P, V, mesh.elem_lengths, skip, w)
    return float(val) / (4.0 * math.pi)


@njit(cache=True)
def _link_pair_adaptive(da, db, max_depth, ha, hb, gx, gw):
    # Quadrature over one element pair with recursive 4-way subdivision of
    # pairs that are close relative to their extent (explicit DFS stack).
    cap = 4 * (max_depth + 2) * 3 + 8
    sa0 = np.empty(cap)
    sa1 = np.empty(cap)
    sb0 = np.empty(cap)
    sb1 = np.empty(cap)
    sd = np.empty(cap, dtype=np.int64)
    top = 0
    sa0[0] = 0.0
    sa1[0] = 1.0
    sb0[0] = 0.0
    sb1[0] = 1.0
    sd[0] = max_depth
    top = 1
    total = 0.0
    ng = gx.shape[0]
    while top > 0:
        top -= 1
        a0 = sa0[top]
        a1 = sa1[top]
        b0 = sb0[top]
        b1 = sb1[top]
        dep = sd[top]
        pa = _hermite_point(da, ha, 0.5 * (a0 + a1))
        pb = _hermite_point(db, hb, 0.5 * (b0 + b1))
        d0 = pa[0] - pb[0]
        d1 = pa[1] - pb[1]
        d2 = pa[2] - pb[2]
        dist = math.sqrt(d0 * d0 + d1 * d1 + d2 * d2)
        ext = max((a1 - a0) * ha, (b1 - b0) * hb) * 1.2  # generous arc bound
        if dep <= 0 or dist > 2.0 * ext:
            for g in range(ng):
                xa = a0 + (a1 - a0) * gx[g]
                qa = _hermite_point(da, ha, xa)
                va = _hermite_velocity(da, ha, xa)
                for gg in range(ng):
                    xb = b0 + (b1 - b0) * gx[gg]
                    qb = _hermite_point(db, hb, xb)
                    vb = _hermite_velocity(db, hb, xb)
                    e0 = qa[0] - qb[0]
                    e1 = qa[1] - qb[1]
                    e2 = qa[2] - qb[2]
                    c0 = va[1] * vb[2] - va[2] * vb[1]
                    c1 = va[2] * vb[0] - va[0] * vb[2]
                    c2 = va[0] * vb[1] - va[1] * vb[0]
                    num = e0 * c0 + e1 * c1 + e2 * c2
                    r2 = e0 * e0 + e1 * e1 + e2 * e2
                    if r2 < 1e-28:
                        return np.nan
                    total += gw[g] * gw[gg] * (a1 - a0) * (b1 - b0) * num / (r2 * math.sqrt(r2))
        else:
            ma = 0.5 * (a0 + a1)
            mb = 0.5 * (b0 + b1)
            for pa_ in range(2):
                for pb_ in range(2):
                    sa0[top] = a0 if pa_ == 0 else ma
                    sa1[top] = ma if pa_ == 0 else a1
                    sb0[top] = b0 if pb_ == 0 else mb
                    sb1[top] = mb if pb_ == 0 else b1
                    sd[top] = dep - 1
                    top += 1
    return total


@njit(cache=True, inline="always")
def _hermite_point(d, h, t):
    h00 = 1 - 3 * t * t + 2 * t * t * t
    h10 = h * (t - 2 * t * t + t * t * t)
    h01 = 3 * t * t - 2 * t * t * t
    h11 = h * (t * t * t - t * t)
    return np.array([
        h00 * d[0, 0] + h10 * d[1, 0] + h01 * d[2, 0] + h11 * d[3, 0],
        h00 * d[0, 1] + h10 * d[1, 1] + h01 * d[2, 1] + h11 * d[3, 1],
        h00 * d[0, 2] + h10 * d[1, 2] + h01 * d[2, 2] + h11 * d[3, 2],
    ])


@njit(cache=True, inline="always")
def _hermite_velocity(d, h, t):
    # d/dt of the element cubic; the 1/h of d/dx cancels the dt Jacobian in
    # the pair integrals, so no element-length factor appears there.
    g00 = 6 * (t * t - t)
    g10 = h * (1 - 4 * t + 3 * t * t)
    g01 = 6 * (t - t * t)
    g11 = h * (3 * t * t - 2 * t)
    return np.array([
        g00 * d[0, 0] + g10 * d[1, 0] + g01 * d[2, 0] + g11 * d[3, 0],
        g00 * d[0, 1] + g10 * d[1, 1] + g01 * d[2, 1] + g11 * d[3, 1],
        g00 * d[0, 2] + g10 * d[1, 2] + g01 * d[2, 2] + g11 * d[3, 2],
    ])


@njit(cache=True)
def _link_kernel(DA, HA, DB, HB, gx, gw, max_depth):
    total = 0.0
    for i in range(DA.shape[0]):
        for j in range(DB.shape[0]):
            v = _link_pair_adaptive(DA[i], DB[j], max_depth, HA[i], HB[j], gx, gw)
            if np.isnan(v):
                return np.nan
            total += v
    return total


def _element_dof_arrays(curve: HermiteCurve, mesh: Mesh1D):
    return np.ascontiguousarray(curve.element_dofs(mesh)), np.ascontiguousarray(mesh.elem_lengths)


def gauss_link_integral(curve_a: HermiteCurve, mesh_a: Mesh1D,
                        curve_b: HermiteCurve, mesh_b: Mesh1D,
                        max_depth: int = 10) -> float:
    """Gauss double integral of two disjoint curves (1/4pi normalized)."""
    DA, HA = _element_dof_arrays(curve_a, mesh_a)
    DB, HB = _element_dof_arrays(curve_b, mesh_b)
    gx, gw = msh.gauss_rule(_NG)
    val = _link_kernel(DA, HA, DB, HB, gx, gw, max_depth)
    if not np.isfinite(val):
        raise ValueError("linking integral hit coincident points; the curves are not disjoint")
    return float(val) / (4.0 * math.pi)


def _offset_curve_elements(curve: HermiteCurve, director: DirectorField, mesh: Mesh1D, offset: float):
    """Per-element dof arrays of y + offset*b, elementwise cubic but only C^0.

    The moved curve is represented element by element (positions plus the
    one-sided derivative of the affine director), which is all the pair
    quadrature needs.
    """
    en = mesh.element_nodes(folded=True)
    pos = curve.positions
    der = curve.derivatives
    v = director.values
    h = mesh.elem_lengths
    D = np.empty((mesh.n_elements, 4, 3))
    bp = (v[1:] - v[:-1]) / h[:, None]
    D[:, 0] = pos[en[:, 0]] + offset * v[:-1]
    D[:, 1] = der[en[:, 0]] + offset * bp
    D[:, 2] = pos[en[:, 1]] + offset * v[1:]
    D[:, 3] = der[en[:, 1]] + offset * bp
    return D


def linking_number(curve: HermiteCurve, director: DirectorField, mesh: Mesh1D,
                   offset: float | None = None) -> tuple[float, int]:
    """Gauss linking number of the curve with its director offset.

    Returns (raw integral value, nearest integer).  The offset defaults to
    0.05 times the smallest element length.
    """
    if not mesh.periodic:
        raise ValueError("linking number requires a closed curve")
    if offset is None:
        offset = 0.05 * float(mesh.elem_lengths.min())
    DA, HA = _element_dof_arrays(curve, mesh)
    DB = _offset_curve_elements(curve, director, mesh, offset)
    gx, gw = msh.gauss_rule(_NG)
    val = _link_kernel(DA, HA, DB, np.ascontiguousarray(mesh.elem_lengths), gx, gw, 12)
    if not np.isfinite(val):
        raise ValueError("offset curve touches the centerline; reduce the offset")
    val = float(val) / (4.0 * math.pi)
    return val, int(round(val))


def calugareanu_residual(state: RodState, offset: float | None = None) -> float:
    """Lk - Tw - Wr for a closed framed curve with closing frame."""
    lk, _ = linking_number(state.curve, state.director, state.mesh, offset)
    tw = total_twist(state)
    wr = writhe(state.curve, state.mesh)
    return lk - tw - wr


def topology_report(state: RodState, offset: float | None = None, theta: float = 1.0,
                    twisting: float | None = None) -> TopologyReport:
    """Bundle of the topological diagnostics; double integrals only when closed."""
    tw = total_twist(state)
    uq = uniformity_quotient(state, theta=theta, twisting=twisting)
    if state.mesh.periodic:
        wr = writhe(state.curve, state.mesh)
        lk, _ = linking_number(state.curve, state.director, state.mesh, offset)
        return TopologyReport(tw, wr, lk, lk - tw - wr, uq)
    return TopologyReport(tw, None, None, None, uq)
