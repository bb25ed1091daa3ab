"""Rod state, boundary data, and the discrete bending-torsion energy.

The energy of a framed rod (y, b), rescaled by the torsion rigidity so that
kappa is the bending/torsion ratio, is discretized as

    E[y, b] = kappa/2 |y''|^2  +  theta/2 |b'|^2  -  theta/2 |Qb . y''|^2
              +  1/(2 eps) <y'. b, y'. b>_h
              +  (1-theta)/2 |b' . (y' x Qb)|^2
              (+ rho * tangent-point energy when self-avoidance is on)

with theta = min(kappa/2, 1), Qb the elementwise director average, and
<.,.>_h the trapezoidal nodal pairing.  The split isolates the convex
quadratic parts from the separately concave coupling term and the residual
torsion term, which is what the semi-implicit flow in `flow` relies on.

Every integrand above is elementwise polynomial (degree at most 4), so the
fixed degree-5 Gauss rule used here integrates all of them exactly.

Unit-length tangents and directors are imposed at the nodes only; the
admissibility audit below checks those constraints and the boundary data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp

from . import mesh as msh
from .mesh import DirectorField, HermiteCurve, Mesh1D

__all__ = [
    "RodState",
    "BoundaryCondition",
    "FlowConfig",
    "EnergyBreakdown",
    "theta",
    "energy_breakdown",
    "assemble_curve_step",
    "assemble_director_step",
    "directional_derivative",
    "nodal_violation",
    "ENERGY_TERMS",
]

ENERGY_TERMS = ("bending", "coupling", "residual", "penalty", "tangent_point")

_NG = 3  # Gauss points per element, exact to polynomial degree 5


def theta(kappa: float) -> float:
    """Convexity split weight min(kappa/2, 1)."""
    if not kappa > 0.0:
        raise ValueError(f"kappa must be positive, got {kappa}")
    return min(0.5 * kappa, 1.0)


@dataclass(frozen=True)
class FlowConfig:
    """Parameters of the discrete energy and its gradient flow."""

    kappa: float
    epsilon: float
    tau: float
    rho: float = 0.0
    q: float = 4.0
    eps_stop: float = 1e-7
    max_steps: int = 200_000
    star_weights: tuple = (1.0, 1.0, 1.0)
    dagger_weights: tuple = (1.0, 1.0)

    def __post_init__(self):
        if not self.kappa > 0.0:
            raise ValueError("kappa must be positive")
        if not self.epsilon > 0.0:
            raise ValueError("epsilon must be positive")
        if not self.tau > 0.0:
            raise ValueError("tau must be positive")
        if self.rho < 0.0:
            raise ValueError("rho must be nonnegative")
        if not self.q > 2.0:
            raise ValueError("tangent-point exponent q must exceed 2")

    def theta(self) -> float:
        return theta(self.kappa)


@dataclass(eq=False)
class RodState:
    """Discrete framed rod: Hermite curve plus nodal directors on one mesh."""

    curve: HermiteCurve
    director: DirectorField
    mesh: Mesh1D

    def __post_init__(self):
        if self.curve.positions.shape[0] != self.mesh.n_curve_nodes:
            raise ValueError("curve dof count does not match mesh")
        if self.director.values.shape[0] != self.mesh.n_director_nodes:
            raise ValueError("director dof count does not match mesh")

    def copy(self) -> "RodState":
        return RodState(
            HermiteCurve(self.curve.positions.copy(), self.curve.derivatives.copy()),
            DirectorField(self.director.values.copy()),
            self.mesh,
        )

    def nodal_tangents(self) -> np.ndarray:
        """y'(z) at every director node (the last one folded when periodic)."""
        d = self.curve.derivatives
        if self.mesh.periodic:
            return np.concatenate([d, d[:1]], axis=0)
        return d


def nodal_violation(state: RodState):
    """Max nodal deviations (| |y'|^2 - 1 |_inf, | |b|^2 - 1 |_inf)."""
    ty = np.abs(np.einsum("ij,ij->i", state.curve.derivatives, state.curve.derivatives) - 1.0)
    tb = np.abs(np.einsum("ij,ij->i", state.director.values, state.director.values) - 1.0)
    return float(ty.max()), float(tb.max())


@dataclass(eq=False)
class BoundaryCondition:
    """Linear boundary data: curve either periodic or endpoint-clamped, director
    clamped to fixed end values in every case."""

    kind: str  # "periodic" | "clamped_both" | "clamped_director_only"
    director_ends: np.ndarray  # (2, 3)
    curve_pos: np.ndarray | None = None  # (2, 3) endpoint positions
    curve_deriv: np.ndarray | None = None  # (2, 3) endpoint derivatives

    def __post_init__(self):
        if self.kind not in ("periodic", "clamped_both", "clamped_director_only"):
            raise ValueError(f"unknown boundary kind {self.kind!r}")
        self.director_ends = np.asarray(self.director_ends, dtype=float).reshape(2, 3)
        nb = np.linalg.norm(self.director_ends, axis=1)
        if np.abs(nb - 1.0).max() > 1e-8:
            raise ValueError("director end targets must be unit vectors")
        if self.kind == "clamped_both":
            if self.curve_pos is None or self.curve_deriv is None:
                raise ValueError("clamped_both needs curve endpoint targets")
            self.curve_pos = np.asarray(self.curve_pos, dtype=float).reshape(2, 3)
            self.curve_deriv = np.asarray(self.curve_deriv, dtype=float).reshape(2, 3)
            if np.abs(np.linalg.norm(self.curve_deriv, axis=1) - 1.0).max() > 1e-8:
                raise ValueError("curve derivative targets must be unit vectors")
            dots = np.einsum("ij,ij->i", self.curve_deriv, self.director_ends)
            if np.abs(dots).max() > 1e-8:
                raise ValueError("end targets must satisfy y' perpendicular to b")

    @classmethod
    def from_state(cls, kind: str, state: RodState) -> "BoundaryCondition":
        """Clamp targets read off a state (the usual way scenarios fix them)."""
        b = state.director.values
        ends = np.stack([b[0], b[-1]])
        if kind == "clamped_both":
            p = state.curve.positions
            d = state.curve.derivatives
            return cls(kind, ends, np.stack([p[0], p[-1]]), np.stack([d[0], d[-1]]))
        return cls(kind, ends)

    def check(self, state: RodState, tol: float = 1e-10) -> float:
        """Largest mismatch between the state's boundary values and the targets."""
        b = state.director.values
        err = max(
            float(np.abs(b[0] - self.director_ends[0]).max()),
            float(np.abs(b[-1] - self.director_ends[1]).max()),
        )
        if self.kind == "clamped_both":
            p, d = state.curve.positions, state.curve.derivatives
            err = max(
                err,
                float(np.abs(p[0] - self.curve_pos[0]).max()),
                float(np.abs(p[-1] - self.curve_pos[1]).max()),
                float(np.abs(d[0] - self.curve_deriv[0]).max()),
                float(np.abs(d[-1] - self.curve_deriv[1]).max()),
            )
        if self.kind == "periodic" and not state.mesh.periodic:
            raise ValueError("periodic boundary condition on a non-periodic mesh")
        return err


@dataclass(frozen=True)
class EnergyBreakdown:
    bending: float
    twisting: float
    penalty: float
    tangent_point: float
    total: float


# ---------------------------------------------------------------------------
# elementwise evaluations shared by energies, variations, and step assembly

def _curve_gauss(state: RodState):
    """(yp, ypp) at the Gauss points, each (Ne, ng, 3); memoized per curve."""
    c = state.curve
    key = id(state.mesh)
    cached = getattr(c, "_gauss_cache", None)
    if cached is not None and cached[0] == key:
        return cached[1], cached[2]
    B0, B1, B2, w = state.mesh.curve_basis(_NG)
    ed = c.element_dofs(state.mesh)
    yp = np.einsum("egk,ekc->egc", B1, ed)
    ypp = np.einsum("egk,ekc->egc", B2, ed)
    c._gauss_cache = (key, yp, ypp)
    return yp, ypp


def _director_elementwise(state: RodState):
    """(qb, db) per element: mean director and its constant derivative."""
    d = state.director
    key = id(state.mesh)
    cached = getattr(d, "_elem_cache", None)
    if cached is not None and cached[0] == key:
        return cached[1], cached[2]
    v = d.values
    h = state.mesh.elem_lengths[:, None]
    qb = 0.5 * (v[:-1] + v[1:])
    db = (v[1:] - v[:-1]) / h
    d._elem_cache = (key, qb, db)
    return qb, db


def _cross_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    out = np.empty(np.broadcast(a, b).shape)
    out[..., 0] = a[..., 1] * b[..., 2] - a[..., 2] * b[..., 1]
    out[..., 1] = a[..., 2] * b[..., 0] - a[..., 0] * b[..., 2]
    out[..., 2] = a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]
    return out


def _nodal_penalty_data(curve: HermiteCurve, director: DirectorField, mesh: Mesh1D):
    """Nodal tangents, directors, weights, products, and curve node map.

    The products are materialized before summing so that exactly orthogonal
    nodal data gives an exactly zero penalty.
    """
    ndn = mesh.n_director_nodes
    ci = np.arange(ndn)
    if mesh.periodic:
        ci = ci % mesh.n_curve_nodes
    t = curve.derivatives[ci]
    b = director.values
    w = mesh.lumped_weights()
    dots = (t * b).sum(axis=1)
    return t, b, w, ci, dots


def standard_forms(mesh: Mesh1D, cfg: FlowConfig) -> dict:
    """Constant matrices used by energies and steps, cached on the mesh."""
    key = ("model_forms", cfg.star_weights, cfg.dagger_weights)
    if key not in mesh._cache:
        mesh._cache[key] = {
            "bending": msh.assemble_form(mesh, "bending").matrix,
            "h1": msh.assemble_form(mesh, "h1_stiffness").matrix,
            "star": msh.assemble_form(mesh, "star_metric", cfg.star_weights).matrix,
            "dagger": msh.assemble_form(mesh, "dagger_metric", cfg.dagger_weights).matrix,
        }
    return mesh._cache[key]


# ---------------------------------------------------------------------------
# energy

def energy_breakdown(state: RodState, cfg: FlowConfig, tp_value: float | None = None) -> EnergyBreakdown:
    """Termwise energy values; total includes rho times the tangent-point term.

    A precomputed tangent-point value can be passed to avoid the pair loop.
    """
    th = cfg.theta()
    h = state.mesh.elem_lengths
    w = msh.gauss_rule(_NG)[1]
    yp, ypp = _curve_gauss(state)
    qb, db = _director_elementwise(state)

    bend = 0.5 * cfg.kappa * float(np.einsum("g,egc,egc,e->", w, ypp, ypp, h))
    t1 = float(np.einsum("ec,ec,e->", db, db, h))
    s = np.einsum("ec,egc->eg", qb, ypp)
    t2 = float(np.einsum("g,eg,eg,e->", w, s, s, h))
    ce = _cross_rows(qb, db)
    r = np.einsum("ec,egc->eg", ce, yp)
    t3 = float(np.einsum("g,eg,eg,e->", w, r, r, h))
    twisting = 0.5 * th * (t1 - t2) + 0.5 * (1.0 - th) * t3

    t, b, wts, _, dots = _nodal_penalty_data(state.curve, state.director, state.mesh)
    penalty = float(wts @ dots**2) / (2.0 * cfg.epsilon)

    tp = 0.0
    if cfg.rho > 0.0:
        if tp_value is not None:
            tp = tp_value
        else:
            from .selfavoid import TangentPointParams, tp_energy

            tp = tp_energy(state.curve, state.mesh, TangentPointParams.for_mesh(state.mesh, q=cfg.q, rho=cfg.rho))
    total = bend + twisting + penalty + cfg.rho * tp
    return EnergyBreakdown(bend, twisting, penalty, tp, total)


# ---------------------------------------------------------------------------
# first variations (gradient vectors over the dof spaces)

def _grad_penalty_curve(state: RodState, cfg: FlowConfig, director=None) -> np.ndarray:
    """d/dy of the orthogonality penalty; optional director override."""
    director = state.director if director is None else director
    t, b, wts, ci, dots = _nodal_penalty_data(state.curve, director, state.mesh)
    contrib = (wts * dots)[:, None] * b / cfg.epsilon
    out = np.zeros(6 * state.mesh.n_curve_nodes)
    slots = (6 * ci)[:, None] + np.array([3, 4, 5])
    np.add.at(out, slots.ravel(), contrib.ravel())
    return out


def _grad_penalty_director(curve: HermiteCurve, director: DirectorField, mesh: Mesh1D, cfg: FlowConfig) -> np.ndarray:
    t, b, wts, _, dots = _nodal_penalty_data(curve, director, mesh)
    return ((wts * dots)[:, None] * t / cfg.epsilon).ravel()


def _scatter_curve(mesh: Mesh1D, elem_vec: np.ndarray) -> np.ndarray:
    out = np.zeros(6 * mesh.n_curve_nodes)
    np.add.at(out, mesh.curve_dof_index().ravel(), elem_vec.reshape(mesh.n_elements, -1).ravel())
    return out


def _grad_coupling_curve(state: RodState, cfg: FlowConfig) -> np.ndarray:
    """d/dy of theta/2 |Qb . y''|^2."""
    th = cfg.theta()
    B2 = state.mesh.curve_basis(_NG)[2]
    w = msh.gauss_rule(_NG)[1]
    h = state.mesh.elem_lengths
    _, ypp = _curve_gauss(state)
    qb, _ = _director_elementwise(state)
    s = np.einsum("ec,egc->eg", qb, ypp)
    elem = th * np.einsum("g,eg,egk,ec,e->ekc", w, s, B2, qb, h)
    return _scatter_curve(state.mesh, elem)


def _grad_coupling_director(state: RodState, cfg: FlowConfig, curve=None) -> np.ndarray:
    """d/db of theta/2 |Qb . y''|^2; optional curve override (the k-tilde rule)."""
    th = cfg.theta()
    use = state if curve is None else RodState(curve, state.director, state.mesh)
    _, ypp = _curve_gauss(use)
    qb, _ = _director_elementwise(state)
    w = msh.gauss_rule(_NG)[1]
    h = state.mesh.elem_lengths
    s = np.einsum("ec,egc->eg", qb, ypp)
    vec = th * np.einsum("g,eg,egc,e->ec", w, s, ypp, h)
    out = np.zeros((state.mesh.n_director_nodes, 3))
    np.add.at(out, np.arange(state.mesh.n_elements), 0.5 * vec)
    np.add.at(out, np.arange(1, state.mesh.n_elements + 1), 0.5 * vec)
    return out.ravel()


def _grad_residual_curve(state: RodState, cfg: FlowConfig) -> np.ndarray:
    """d/dy of (1-theta)/2 |b' . (y' x Qb)|^2."""
    th = cfg.theta()
    if th >= 1.0:
        return np.zeros(6 * state.mesh.n_curve_nodes)
    B1 = state.mesh.curve_basis(_NG)[1]
    w = msh.gauss_rule(_NG)[1]
    h = state.mesh.elem_lengths
    yp, _ = _curve_gauss(state)
    qb, db = _director_elementwise(state)
    ce = _cross_rows(qb, db)
    r = np.einsum("ec,egc->eg", ce, yp)
    elem = (1.0 - th) * np.einsum("g,eg,egk,ec,e->ekc", w, r, B1, ce, h)
    return _scatter_curve(state.mesh, elem)


def _grad_residual_director(state: RodState, cfg: FlowConfig) -> np.ndarray:
    th = cfg.theta()
    ndn = state.mesh.n_director_nodes
    if th >= 1.0:
        return np.zeros(3 * ndn)
    w = msh.gauss_rule(_NG)[1]
    h = state.mesh.elem_lengths
    yp, _ = _curve_gauss(state)
    qb, db = _director_elementwise(state)
    ce = _cross_rows(qb, db)
    r = np.einsum("ec,egc->eg", ce, yp)
    v1 = np.einsum("g,eg,egc,e->ec", w, r, _cross_rows(db[:, None, :], yp), h)
    v2 = np.einsum("g,eg,egc,e->ec", w, r, _cross_rows(yp, qb[:, None, :]), h)
    left = 0.5 * v1 - v2 / h[:, None]
    right = 0.5 * v1 + v2 / h[:, None]
    out = np.zeros((ndn, 3))
    np.add.at(out, np.arange(state.mesh.n_elements), (1.0 - th) * left)
    np.add.at(out, np.arange(1, state.mesh.n_elements + 1), (1.0 - th) * right)
    return out.ravel()


def directional_derivative(term: str, state: RodState, direction: np.ndarray,
                           which: str, cfg: FlowConfig) -> float:
    """Analytic first variation of one energy term along a dof direction.

    Terms: bending, coupling (the concave curvature-director product),
    residual (the (1-theta) torsion remainder), penalty, tangent_point.
    """
    if term not in ENERGY_TERMS:
        raise ValueError(f"unknown energy term {term!r}")
    if which not in ("curve", "director"):
        raise ValueError(f"which must be 'curve' or 'director', got {which!r}")
    direction = np.asarray(direction, dtype=float)
    if which == "curve":
        if term == "bending":
            forms = standard_forms(state.mesh, cfg)
            g = cfg.kappa * (forms["bending"] @ state.curve.dofs())
        elif term == "coupling":
            g = _grad_coupling_curve(state, cfg)
        elif term == "residual":
            g = _grad_residual_curve(state, cfg)
        elif term == "penalty":
            g = _grad_penalty_curve(state, cfg)
        else:
            from .selfavoid import TangentPointParams, tp_gradient

            g = tp_gradient(state.curve, state.mesh,
                            TangentPointParams.for_mesh(state.mesh, q=cfg.q, rho=cfg.rho))
        return float(g @ direction)
    if term == "bending" or term == "tangent_point":
        return 0.0
    if term == "coupling":
        g = _grad_coupling_director(state, cfg)
    elif term == "residual":
        g = _grad_residual_director(state, cfg)
    else:
        g = _grad_penalty_director(state.curve, state.director, state.mesh, cfg)
    return float(g @ direction)


# ---------------------------------------------------------------------------
# semi-implicit step systems

def penalty_blocks_curve(state: RodState) -> np.ndarray:
    """(n_curve_nodes, 3, 3) nodal blocks sum_i w_i b_i b_i^T (folded)."""
    t, b, wts, ci, _ = _nodal_penalty_data(state.curve, state.director, state.mesh)
    blocks = np.zeros((state.mesh.n_curve_nodes, 3, 3))
    np.add.at(blocks, ci, wts[:, None, None] * b[:, :, None] * b[:, None, :])
    return blocks


def penalty_blocks_director(curve_new: HermiteCurve, mesh: Mesh1D) -> np.ndarray:
    """(n_director_nodes, 3, 3) nodal blocks w_i t_i t_i^T with the new tangents."""
    ndn = mesh.n_director_nodes
    ci = np.arange(ndn) % mesh.n_curve_nodes if mesh.periodic else np.arange(ndn)
    t = curve_new.derivatives[ci]
    wts = mesh.lumped_weights()
    return wts[:, None, None] * t[:, :, None] * t[:, None, :]


def _blocks_to_sparse(blocks: np.ndarray, slot_offset: int, slot_stride: int, n: int) -> sp.csr_matrix:
    nn = blocks.shape[0]
    base = slot_stride * np.arange(nn) + slot_offset
    rows = (base[:, None, None] + np.arange(3)[None, :, None]).repeat(3, axis=2)
    cols = (base[:, None, None] + np.arange(3)[None, None, :]).repeat(3, axis=1)
    return sp.coo_matrix((blocks.ravel(), (rows.ravel(), cols.ravel())), shape=(n, n)).tocsr()


def curve_step_rhs(state: RodState, cfg: FlowConfig, tp_grad: np.ndarray | None = None) -> np.ndarray:
    """Right-hand side of the curve velocity equation at the previous state."""
    forms = standard_forms(state.mesh, cfg)
    rhs = -cfg.kappa * (forms["bending"] @ state.curve.dofs())
    rhs -= _grad_penalty_curve(state, cfg)
    rhs += _grad_coupling_curve(state, cfg)
    rhs -= _grad_residual_curve(state, cfg)
    if cfg.rho > 0.0:
        if tp_grad is None:
            from .selfavoid import TangentPointParams, tp_gradient

            tp_grad = tp_gradient(state.curve, state.mesh,
                                  TangentPointParams.for_mesh(state.mesh, q=cfg.q, rho=cfg.rho))
        rhs -= cfg.rho * tp_grad
    return rhs


def director_step_rhs(state_prev: RodState, curve_new: HermiteCurve, cfg: FlowConfig) -> np.ndarray:
    """Right-hand side of the director velocity equation.

    The curvature coupling is evaluated at the updated curve when theta = 1
    and at the previous curve otherwise; the penalty always sees the updated
    tangents, the residual term always the previous state.
    """
    th = cfg.theta()
    forms = standard_forms(state_prev.mesh, cfg)
    rhs = -th * (forms["h1"] @ state_prev.director.dofs())
    rhs -= _grad_penalty_director(curve_new, state_prev.director, state_prev.mesh, cfg)
    rhs += _grad_coupling_director(state_prev, cfg, curve=curve_new if th >= 1.0 else None)
    rhs -= _grad_residual_director(state_prev, cfg)
    return rhs


def assemble_curve_step(state_prev: RodState, cfg: FlowConfig):
    """System matrix and right-hand side for the curve velocity solve."""
    forms = standard_forms(state_prev.mesh, cfg)
    n = 6 * state_prev.mesh.n_curve_nodes
    pen = _blocks_to_sparse(penalty_blocks_curve(state_prev), 3, 6, n)
    A = (forms["star"] + cfg.tau * cfg.kappa * forms["bending"] + (cfg.tau / cfg.epsilon) * pen).tocsc()
    return A, curve_step_rhs(state_prev, cfg)


def assemble_director_step(state_prev: RodState, curve_new: HermiteCurve, cfg: FlowConfig):
    """System matrix and right-hand side for the director velocity solve."""
    th = cfg.theta()
    forms = standard_forms(state_prev.mesh, cfg)
    n = 3 * state_prev.mesh.n_director_nodes
    pen = _blocks_to_sparse(penalty_blocks_director(curve_new, state_prev.mesh), 0, 3, n)
    A = (forms["dagger"] + cfg.tau * th * forms["h1"] + (cfg.tau / cfg.epsilon) * pen).tocsc()
    return A, director_step_rhs(state_prev, curve_new, cfg)
