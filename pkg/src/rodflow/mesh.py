"""1-D mesh, cubic-Hermite / piecewise-linear spaces, and constant bilinear forms.

Curves are C^1 piecewise cubics with nodal value and derivative degrees of
freedom (shape functions with psi(z) = delta_j0, psi'(z) = delta_j1), director
fields are piecewise affine with nodal values.  On a periodic mesh the curve
dofs of the last node are folded onto node 0; director nodes are never folded
because the frame of a closed curve need not close up.

All element integrals of the constant forms are evaluated with fixed
Gauss-Legendre rules of sufficient exactness for the piecewise-polynomial
integrands, so no runtime quadrature choices are involved.

Curve dof layout, node-major: node n owns slots [6n .. 6n+5] ordered
(px, py, pz, dx, dy, dz).  Director: node n owns [3n .. 3n+2].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

__all__ = [
    "Mesh1D",
    "HermiteCurve",
    "DirectorField",
    "FormMatrix",
    "build_mesh",
    "eval_state",
    "qh_average",
    "interpolate_smooth",
    "assemble_form",
    "gauss_rule",
]

FORM_KINDS = ("bending", "h1_stiffness", "lumped_pairing", "star_metric", "dagger_metric")

# Gauss-Legendre nodes/weights on [0, 1]; rule with n points is exact to degree 2n-1.
_GAUSS = {}


def gauss_rule(n: int):
    """Nodes and weights of the n-point Gauss-Legendre rule on [0, 1]."""
    if n not in _GAUSS:
        x, w = np.polynomial.legendre.leggauss(n)
        _GAUSS[n] = (0.5 * (x + 1.0), 0.5 * w)
    return _GAUSS[n]


@dataclass(eq=False)
class Mesh1D:
    """Partition 0 = z_0 < ... < z_N = L with optional periodic identification."""

    nodes: np.ndarray
    periodic: bool

    def __post_init__(self):
        self.nodes = np.ascontiguousarray(self.nodes, dtype=float)
        if self.nodes.ndim != 1 or self.nodes.size < 2:
            raise ValueError("mesh needs at least two nodes")
        if self.nodes[0] != 0.0:
            raise ValueError("mesh must start at 0")
        if np.any(np.diff(self.nodes) <= 0.0):
            raise ValueError("mesh nodes must be strictly increasing")
        self._cache = {}

    @property
    def length(self) -> float:
        return float(self.nodes[-1])

    @property
    def n_elements(self) -> int:
        return self.nodes.size - 1

    @property
    def elem_lengths(self) -> np.ndarray:
        return np.diff(self.nodes)

    @property
    def h_max(self) -> float:
        return float(self.elem_lengths.max())

    @property
    def n_curve_nodes(self) -> int:
        return self.n_elements if self.periodic else self.n_elements + 1

    @property
    def n_director_nodes(self) -> int:
        return self.n_elements + 1

    def element_nodes(self, folded: bool) -> np.ndarray:
        """(Ne, 2) node indices per element; folded wraps the last curve node."""
        key = ("en", folded)
        if key not in self._cache:
            ne = self.n_elements
            left = np.arange(ne)
            right = left + 1
            if folded and self.periodic:
                right = right % ne
            self._cache[key] = np.stack([left, right], axis=1)
        return self._cache[key]

    def curve_dof_index(self) -> np.ndarray:
        """(Ne, 12) global curve dof indices per element."""
        if "cdof" not in self._cache:
            en = self.element_nodes(folded=True)
            base = np.concatenate([6 * en[:, :1] + np.arange(6), 6 * en[:, 1:] + np.arange(6)], axis=1)
            self._cache["cdof"] = base
        return self._cache["cdof"]

    def director_dof_index(self) -> np.ndarray:
        """(Ne, 6) global director dof indices per element."""
        if "ddof" not in self._cache:
            en = self.element_nodes(folded=False)
            self._cache["ddof"] = np.concatenate(
                [3 * en[:, :1] + np.arange(3), 3 * en[:, 1:] + np.arange(3)], axis=1
            )
        return self._cache["ddof"]

    def lumped_weights(self) -> np.ndarray:
        """Trapezoidal nodal weights of the lumped pairing, one per director node."""
        if "lw" not in self._cache:
            h = self.elem_lengths
            w = np.zeros(self.n_elements + 1)
            w[:-1] += 0.5 * h
            w[1:] += 0.5 * h
            self._cache["lw"] = w
        return self._cache["lw"]

    def curve_basis(self, ng: int):
        """Hermite basis values/derivatives at Gauss points, (Ne, ng, 4) each.

        The h-scaling of derivative dofs is folded in, so contraction with the
        element dof matrix (Ne, 4, 3) gives y, y', y'' at the Gauss points.
        """
        key = ("cb", ng)
        if key not in self._cache:
            t, w = gauss_rule(ng)
            h = self.elem_lengths[:, None]
            t = t[None, :]
            one = np.ones_like(h * t)
            B0 = np.stack([1 - 3 * t**2 + 2 * t**3 + 0 * h, h * (t - 2 * t**2 + t**3),
                           3 * t**2 - 2 * t**3 + 0 * h, h * (t**3 - t**2)], axis=2)
            B1 = np.stack([6 * (t**2 - t) / h, 1 - 4 * t + 3 * t**2 + 0 * h,
                           6 * (t - t**2) / h, (3 * t**2 - 2 * t) * one], axis=2)
            B2 = np.stack([(12 * t - 6) / h**2, (6 * t - 4) / h,
                           (6 - 12 * t) / h**2, (6 * t - 2) / h], axis=2)
            self._cache[key] = (B0, B1, B2, w)
        return self._cache[key]


@dataclass(eq=False)
class HermiteCurve:
    """Nodal positions and parameter derivatives of a piecewise-cubic curve."""

    positions: np.ndarray  # (n_curve_nodes, 3)
    derivatives: np.ndarray  # (n_curve_nodes, 3)

    def __post_init__(self):
        self.positions = np.ascontiguousarray(self.positions, dtype=float)
        self.derivatives = np.ascontiguousarray(self.derivatives, dtype=float)
        if self.positions.shape != self.derivatives.shape or self.positions.shape[1] != 3:
            raise ValueError("positions and derivatives must both be (n, 3)")

    def dofs(self) -> np.ndarray:
        """Flat dof vector, node-major (px, py, pz, dx, dy, dz)."""
        return np.concatenate([self.positions, self.derivatives], axis=1).ravel()

    @classmethod
    def from_dofs(cls, dofs: np.ndarray) -> "HermiteCurve":
        a = dofs.reshape(-1, 6)
        return cls(a[:, :3].copy(), a[:, 3:].copy())

    def element_dofs(self, mesh: Mesh1D) -> np.ndarray:
        """(Ne, 4, 3) per-element dof matrix (p0, d0, p1, d1); memoized."""
        cached = getattr(self, "_edof_cache", None)
        if cached is not None and cached[0] == id(mesh):
            return cached[1]
        en = mesh.element_nodes(folded=True)
        out = np.empty((mesh.n_elements, 4, 3))
        out[:, 0] = self.positions[en[:, 0]]
        out[:, 1] = self.derivatives[en[:, 0]]
        out[:, 2] = self.positions[en[:, 1]]
        out[:, 3] = self.derivatives[en[:, 1]]
        self._edof_cache = (id(mesh), out)
        return out


@dataclass(eq=False)
class DirectorField:
    """Nodal values of a piecewise-affine vector field (never folded)."""

    values: np.ndarray  # (n_director_nodes, 3)

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[1] != 3:
            raise ValueError("director values must be (n, 3)")

    def dofs(self) -> np.ndarray:
        return self.values.ravel()

    @classmethod
    def from_dofs(cls, dofs: np.ndarray) -> "DirectorField":
        return cls(dofs.reshape(-1, 3).copy())


@dataclass(eq=False)
class FormMatrix:
    """Assembled symmetric form over curve or director dofs."""

    kind: str
    matrix: sp.csr_matrix

    def quadratic(self, x: np.ndarray) -> float:
        return float(x @ (self.matrix @ x))


def build_mesh(L: float, N: int, periodic: bool) -> Mesh1D:
    """Uniform partition of [0, L] into N elements."""
    if not L > 0.0:
        raise ValueError(f"L must be positive, got {L}")
    if N < 3:
        raise ValueError(f"need at least 3 elements, got {N}")
    nodes = np.linspace(0.0, L, N + 1)
    nodes[0] = 0.0
    nodes[-1] = L
    return Mesh1D(nodes, periodic)


def _locate(mesh: Mesh1D, x: float):
    L = mesh.length
    if mesh.periodic:
        x = x % L
    elif x < -1e-12 or x > L + 1e-12:
        raise ValueError(f"x = {x} outside [0, {L}]")
    x = min(max(x, 0.0), L)
    e = int(np.searchsorted(mesh.nodes, x, side="right")) - 1
    e = min(max(e, 0), mesh.n_elements - 1)
    h = mesh.nodes[e + 1] - mesh.nodes[e]
    t = (x - mesh.nodes[e]) / h
    return e, t, h


def eval_state(curve: HermiteCurve, director: DirectorField, mesh: Mesh1D, x: float):
    """Evaluate (y, y', y'', b, b') at parameter x.

    At interior nodes b' is the one-sided limit from the right; at x = L it
    is the limit from the left.
    """
    e, t, h = _locate(mesh, x)
    en = mesh.element_nodes(folded=True)[e]
    p0, p1 = curve.positions[en[0]], curve.positions[en[1]]
    d0, d1 = curve.derivatives[en[0]], curve.derivatives[en[1]]
    H0 = np.array([1 - 3 * t**2 + 2 * t**3, h * (t - 2 * t**2 + t**3),
                   3 * t**2 - 2 * t**3, h * (t**3 - t**2)])
    H1 = np.array([6 * (t**2 - t) / h, 1 - 4 * t + 3 * t**2,
                   6 * (t - t**2) / h, 3 * t**2 - 2 * t])
    H2 = np.array([(12 * t - 6) / h**2, (6 * t - 4) / h,
                   (6 - 12 * t) / h**2, (6 * t - 2) / h])
    dmat = np.stack([p0, d0, p1, d1])
    y = H0 @ dmat
    yp = H1 @ dmat
    ypp = H2 @ dmat
    b0, b1 = director.values[e], director.values[e + 1]
    b = (1 - t) * b0 + t * b1
    bp = (b1 - b0) / h
    return y, yp, ypp, b, bp


def qh_average(director: DirectorField, mesh: Mesh1D, element: int) -> np.ndarray:
    """Elementwise mean of the affine director, the midpoint of its end values."""
    if not 0 <= element < mesh.n_elements:
        raise IndexError(f"element {element} out of range")
    return 0.5 * (director.values[element] + director.values[element + 1])


def qh_all(director: DirectorField, mesh: Mesh1D) -> np.ndarray:
    """(Ne, 3) element means of the director."""
    v = director.values
    return 0.5 * (v[:-1] + v[1:])


def interpolate_smooth(curve_fn, director_fn, mesh: Mesh1D):
    """Nodal interpolation of a smooth framed curve onto the mesh.

    curve_fn(x) must return (position, first derivative); director_fn(x) the
    director value.  Nodal constraints of the smooth data carry over exactly.
    Returns a RodState.
    """
    from .model import RodState

    nn = mesh.n_curve_nodes
    pos = np.empty((nn, 3))
    der = np.empty((nn, 3))
    for i in range(nn):
        p, d = curve_fn(float(mesh.nodes[i]))
        pos[i] = p
        der[i] = d
    nb = mesh.n_director_nodes
    bv = np.empty((nb, 3))
    for i in range(nb):
        bv[i] = director_fn(float(mesh.nodes[i]))
    return RodState(HermiteCurve(pos, der), DirectorField(bv), mesh)


def _curve_element_matrices(mesh: Mesh1D, order: int, ng: int) -> np.ndarray:
    """(Ne, 4, 4) Gram matrices of the scalar Hermite basis derivative `order`."""
    B = mesh.curve_basis(ng)[order]
    w = gauss_rule(ng)[1]
    h = mesh.elem_lengths
    return np.einsum("g,egi,egj,e->eij", w, B, B, h)


def _scatter(rows, cols, vals, n) -> sp.csr_matrix:
    m = sp.coo_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=(n, n))
    return m.tocsr()


def _vector_assembly(elem_mats: np.ndarray, dof_index: np.ndarray, n: int) -> sp.csr_matrix:
    # elem_mats: (Ne, k, k) scalar blocks acting identically on each component;
    # dof_index rows list the element's component-0 slots at stride 3.
    ne, k, _ = elem_mats.shape
    base = dof_index[:, ::3]
    comp = np.arange(3)
    rows = np.broadcast_to(base[:, :, None, None], (ne, k, k, 3)) + comp
    cols = np.broadcast_to(base[:, None, :, None], (ne, k, k, 3)) + comp
    vals = np.broadcast_to(elem_mats[:, :, :, None], (ne, k, k, 3))
    return _scatter(rows, cols, vals, n)


def assemble_form(mesh: Mesh1D, kind: str, weights=None) -> FormMatrix:
    """Assemble one of the constant forms.

    bending         exact Gram of curve second derivatives
    h1_stiffness    exact Gram of director first derivatives
    lumped_pairing  diagonal nodal weights realizing the interpolated product
    star_metric     weights (a0, a1, a2): a0 mass + a1 grad + a2 curvature Gram, curve space
    dagger_metric   weights (b0, b1): b0 mass + b1 grad, director space
    """
    if kind not in FORM_KINDS:
        raise ValueError(f"unknown form kind {kind!r}")
    ncd = 6 * mesh.n_curve_nodes
    ndd = 3 * mesh.n_director_nodes
    if kind == "bending":
        mats = _curve_element_matrices(mesh, 2, 2)
        return FormMatrix(kind, _vector_assembly(mats, mesh.curve_dof_index(), ncd))
    if kind == "star_metric":
        a0, a1, a2 = (1.0, 1.0, 1.0) if weights is None else weights
        mats = (a0 * _curve_element_matrices(mesh, 0, 4)
                + a1 * _curve_element_matrices(mesh, 1, 3)
                + a2 * _curve_element_matrices(mesh, 2, 2))
        return FormMatrix(kind, _vector_assembly(mats, mesh.curve_dof_index(), ncd))
    if kind == "h1_stiffness":
        h = mesh.elem_lengths
        mats = np.einsum("e,ij->eij", 1.0 / h, np.array([[1.0, -1.0], [-1.0, 1.0]]))
        return FormMatrix(kind, _vector_assembly(mats, mesh.director_dof_index(), ndd))
    if kind == "dagger_metric":
        b0, b1 = (1.0, 1.0) if weights is None else weights
        h = mesh.elem_lengths
        mass = np.einsum("e,ij->eij", h, np.array([[1.0 / 3, 1.0 / 6], [1.0 / 6, 1.0 / 3]]))
        stiff = np.einsum("e,ij->eij", 1.0 / h, np.array([[1.0, -1.0], [-1.0, 1.0]]))
        return FormMatrix(kind, _vector_assembly(b0 * mass + b1 * stiff, mesh.director_dof_index(), ndd))
    # lumped_pairing
    w = np.repeat(mesh.lumped_weights(), 3)
    return FormMatrix(kind, sp.diags(w).tocsr())
