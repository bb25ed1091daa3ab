"""Experiment registry: initial framed curves and parameter bundles.

Seven named setups cover the standard runs: relaxation of a nonuniform
twist rate on a clamped straight rod (uniframe), the twist instability of a
closed circle below/above the buckling threshold (michell), twist reduction
by self-penetration (overtwist), the planar figure-eight elastica (f8), an
open clamped cosine arc (clamped), and the two self-avoiding variants
(imper_a, imper_b).  All meshes are uniform, the step size is h/8, and the
penalty weight follows the row: tied to the mesh size for uniframe, f8 and
imper_a, absolute for the rest.

Initial data satisfy the nodal unit constraints to 1e-12 by construction,
and the boundary targets are read off the (possibly perturbed) initial
state, so every scenario starts exactly admissible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from . import elliptic as ell
from . import mesh as msh
from .mesh import DirectorField, HermiteCurve, Mesh1D
from .model import BoundaryCondition, FlowConfig, RodState

__all__ = [
    "Scenario",
    "SCENARIO_NAMES",
    "make_circle_rod",
    "make_straight_piecewise_twist",
    "make_figure_eight",
    "make_clamped_cosine",
    "perturb_out_of_plane",
    "build_scenario",
    "michell_sweep_values",
    "f8_sweep_values",
    "zajac_threshold",
]

SCENARIO_NAMES = ("uniframe", "michell", "overtwist", "f8", "clamped", "imper_a", "imper_b")

EZ = np.array([0.0, 0.0, 1.0])


@dataclass(eq=False)
class Scenario:
    name: str
    state: RodState
    config: FlowConfig
    bc: BoundaryCondition
    perturbation: tuple | None  # (amplitude, frequency) already applied
    params: dict


def zajac_threshold(kappa: float, L: float) -> float:
    """Twist rate 2 pi sqrt(3) kappa / L above which the circle buckles."""
    return 2.0 * math.pi * math.sqrt(3.0) * kappa / L


def make_circle_rod(L: float, N: int, beta: float) -> RodState:
    """Closed circle of length L framed with constant twist rate beta.

    y(s) = r (cos s/r, sin s/r, 0) and the director rotates at rate beta
    about the tangent starting from the inward normal, so the frame closes
    up exactly when beta L / 2 pi is an integer.
    """
    mesh = msh.build_mesh(L, N, periodic=True)
    r = L / (2.0 * math.pi)
    s = mesh.nodes
    a = s / r
    ca, sa = np.cos(a), np.sin(a)
    # the seam node is the same spatial point as node 0; reusing its values
    # keeps the nodal frame exactly orthonormal across the fold
    ca[-1], sa[-1] = ca[0], sa[0]
    zero = np.zeros_like(a)
    normal = np.stack([-ca, -sa, zero], axis=1)
    pos = np.stack([r * ca, r * sa, zero], axis=1)
    der = np.stack([-sa, ca, zero], axis=1)
    phi = beta * s
    b = np.cos(phi)[:, None] * normal + np.sin(phi)[:, None] * EZ
    ncn = mesh.n_curve_nodes
    return RodState(HermiteCurve(pos[:ncn], der[:ncn]), DirectorField(b), mesh)


def make_straight_piecewise_twist(L: float, N: int, rates) -> RodState:
    """Straight segment along x with a piecewise-constant twist rate.

    rates is a sequence of (start, end, rate) intervals partitioning [0, L];
    the director follows the continuous cumulative angle of the rate.
    """
    rates = [(float(a), float(b), float(r)) for a, b, r in rates]
    if abs(rates[0][0]) > 1e-14 or abs(rates[-1][1] - L) > 1e-12:
        raise ValueError("rate intervals must partition [0, L]")
    for (a0, b0, _), (a1, _, _) in zip(rates, rates[1:]):
        if abs(b0 - a1) > 1e-12:
            raise ValueError("rate intervals must be contiguous")
    mesh = msh.build_mesh(L, N, periodic=False)

    def phi(x):
        total = 0.0
        for a, b, r in rates:
            if x <= a:
                break
            total += r * (min(x, b) - a)
        return total

    s = mesh.nodes
    pos = np.stack([s, np.zeros_like(s), np.zeros_like(s)], axis=1)
    der = np.tile([1.0, 0.0, 0.0], (mesh.n_curve_nodes, 1))
    ang = np.array([phi(x) for x in s])
    b = np.stack([np.zeros_like(ang), np.cos(ang), np.sin(ang)], axis=1)
    return RodState(HermiteCurve(pos, der), DirectorField(b), mesh)


def make_figure_eight(N: int, kappa: float) -> Scenario:
    """Closed planar figure-eight elastica with a twist-free normal frame.

    Arclength parametrization over one period 4K(m) of the elliptic cosine
    with the closure parameter m (2E(m) = K(m)); signed curvature
    -2 sqrt(m) cn(s, m).
    """
    m8 = ell.figure_eight_modulus()
    K = ell.complete_K(m8)
    L = 4.0 * K
    mesh = msh.build_mesh(L, N, periodic=True)
    sq = math.sqrt(m8)
    ncn = mesh.n_curve_nodes
    pos = np.empty((ncn, 3))
    der = np.empty((ncn, 3))
    for i in range(ncn):
        s = float(mesh.nodes[i])
        am, sn, cn, dn = ell.jacobi_functions(s, m8)
        pos[i] = (2.0 * ell.incomplete_E(am, m8) - s, 2.0 * sq * cn, 0.0)
        der[i] = (2.0 * dn * dn - 1.0, -2.0 * sq * sn * dn, 0.0)
    b = np.tile(EZ, (mesh.n_director_nodes, 1))
    state = RodState(HermiteCurve(pos, der), DirectorField(b), mesh)
    h = mesh.h_max
    cfg = FlowConfig(kappa=kappa, epsilon=h, tau=h / 8.0)
    bc = BoundaryCondition.from_state("periodic", state)
    return Scenario("f8", state, cfg, bc, None,
                    {"L": L, "N": N, "kappa": kappa, "beta_ini": 0.0, "epsilon": h, "m": m8})


def make_clamped_cosine(N: int, beta_ini: float) -> Scenario:
    """Open planar cosine arc, resampled to arclength, ends fully clamped.

    The curve (s / sqrt 2, cos s - 1) for s in [0, 4 pi] has speed
    sqrt(1/2 + sin^2 s) and length 4 sqrt(2) E(pi/2, -2); nodes are placed
    uniformly in arclength and the director rotates about the tangent at
    rate beta_ini per original parameter, which makes the total twist
    2 beta_ini per winding of the parameter interval.
    """
    total_len = ell.incomplete_E(4.0 * math.pi, -2.0) / math.sqrt(2.0)
    mesh = msh.build_mesh(total_len, N, periodic=False)

    def arclen(s):
        return ell.incomplete_E(s, -2.0) / math.sqrt(2.0)

    nn = mesh.n_curve_nodes
    pos = np.empty((nn, 3))
    der = np.empty((nn, 3))
    bvals = np.empty((nn, 3))
    for i, x in enumerate(mesh.nodes):
        if i == 0:
            s = 0.0
        elif i == nn - 1:
            s = 4.0 * math.pi
        else:
            s = brentq(lambda t: arclen(t) - x, 0.0, 4.0 * math.pi, xtol=1e-14)
        speed = math.sqrt(0.5 + math.sin(s) ** 2)
        pos[i] = (s / math.sqrt(2.0), math.cos(s) - 1.0, 0.0)
        t = np.array([1.0 / math.sqrt(2.0), -math.sin(s), 0.0]) / speed
        der[i] = t
        phi = beta_ini * s
        d0 = np.cross(t, EZ)
        bvals[i] = math.cos(phi) * EZ + math.sin(phi) * d0
        bvals[i] /= np.linalg.norm(bvals[i])
    state = RodState(HermiteCurve(pos, der), DirectorField(bvals), mesh)
    cfg = FlowConfig(kappa=2.0, epsilon=1e-3, tau=mesh.h_max / 8.0)
    bc = BoundaryCondition.from_state("clamped_both", state)
    return Scenario("clamped", state, cfg, bc, None,
                    {"L": total_len, "N": N, "kappa": 2.0, "beta_ini": beta_ini, "epsilon": 1e-3})


def perturb_out_of_plane(state: RodState, amplitude: float, frequency: float) -> RodState:
    """Add amplitude sin(frequency 2 pi s / L) to the out-of-plane coordinate.

    The nodal derivatives are shifted consistently and renormalized, and the
    director is re-orthonormalized against the new tangents, so the nodal
    constraints hold exactly afterwards.  Requires a planar (z = const)
    state.
    """
    if amplitude == 0.0:
        return state.copy()
    pos = state.curve.positions
    if np.abs(pos[:, 2] - pos[0, 2]).max() > 1e-9 or np.abs(state.curve.derivatives[:, 2]).max() > 1e-9:
        raise ValueError("out-of-plane perturbation needs a planar state")
    mesh = state.mesh
    L = mesh.length
    s = mesh.nodes[: mesh.n_curve_nodes]
    wav = frequency * 2.0 * math.pi / L
    pos = pos.copy()
    der = state.curve.derivatives.copy()
    pos[:, 2] += amplitude * np.sin(wav * s)
    der[:, 2] += amplitude * wav * np.cos(wav * s)
    der /= np.linalg.norm(der, axis=1, keepdims=True)
    curve = HermiteCurve(pos, der)
    tan = der
    if mesh.periodic:
        tan = np.concatenate([der, der[:1]], axis=0)
    b = state.director.values.copy()
    b -= np.einsum("ij,ij->i", b, tan)[:, None] * tan
    b /= np.linalg.norm(b, axis=1, keepdims=True)
    return RodState(curve, DirectorField(b), mesh)


def michell_sweep_values():
    """Initial twist rates used in the threshold sweep (2.98 replaces the
    near-symmetric value beta* + 0.4)."""
    bstar = zajac_threshold(1.5, 2.0 * math.pi)
    vals = [bstar + 2.0**level / 10.0 for level in range(-1, 5)]
    vals[3] = 2.98
    return vals


def f8_sweep_values():
    """Bending/torsion ratios for the figure-eight stability sweep."""
    return [0.5 + 2.0**level / 10.0 for level in range(-2, 5)]


def _circle_scenario(name, N, kappa, beta, epsilon, rho=0.0, perturb=(1e-3, 7.0)):
    L = 2.0 * math.pi
    state = make_circle_rod(L, N, beta)
    if perturb is not None:
        state = perturb_out_of_plane(state, *perturb)
    mesh = state.mesh
    eps = mesh.h_max if epsilon == "h" else float(epsilon)
    cfg = FlowConfig(kappa=kappa, epsilon=eps, tau=mesh.h_max / 8.0, rho=rho)
    bc = BoundaryCondition.from_state("periodic", state)
    return Scenario(name, state, cfg, bc, perturb,
                    {"L": L, "N": N, "kappa": kappa, "beta_ini": beta, "epsilon": eps, "rho": rho})


def build_scenario(name: str, param: float | None = None, N: int | None = None) -> Scenario:
    """Construct a registry scenario, optionally at a different resolution.

    `param` is the twist rate for michell and the bending ratio for f8.
    Overriding N rescales the step size, and the penalty weight for the
    rows that tie it to the mesh size.
    """
    if name == "uniframe":
        N = 100 if N is None else N
        L = 2.0 * math.pi
        state = make_straight_piecewise_twist(L, N, [(0.0, math.pi / 2.0, 4.0), (math.pi / 2.0, L, 0.0)])
        h = state.mesh.h_max
        cfg = FlowConfig(kappa=2.0, epsilon=h, tau=h / 8.0)
        bc = BoundaryCondition.from_state("clamped_both", state)
        return Scenario(name, state, cfg, bc, None,
                        {"L": L, "N": N, "kappa": 2.0, "epsilon": h})
    if name == "michell":
        beta = 4.2 if param is None else float(param)
        return _circle_scenario(name, 400 if N is None else N, 1.5, beta, 1e-5)
    if name == "overtwist":
        return _circle_scenario(name, 400 if N is None else N, 2.0, 5.0, 1e-3)
    if name == "f8":
        kappa = 0.7 if param is None else float(param)
        sc = make_figure_eight(400 if N is None else N, kappa)
        L = sc.state.mesh.length
        state = perturb_out_of_plane(sc.state, 1e-3, 7.0)
        bc = BoundaryCondition.from_state("periodic", state)
        return Scenario("f8", state, sc.config, bc, (1e-3, 7.0), sc.params)
    if name == "clamped":
        return make_clamped_cosine(400 if N is None else N, 4.0)
    if name == "imper_a":
        return _circle_scenario(name, 800 if N is None else N, 2.0, 5.0, "h", rho=0.1, perturb=None)
    if name == "imper_b":
        sc = make_clamped_cosine(400 if N is None else N, 4.0)
        cfg = FlowConfig(kappa=2.0, epsilon=1e-3, tau=sc.state.mesh.h_max / 8.0, rho=0.1)
        params = dict(sc.params, rho=0.1)
        return Scenario("imper_b", sc.state, cfg, sc.bc, None, params)
    raise ValueError(f"unknown scenario {name!r}; known: {', '.join(SCENARIO_NAMES)}")
