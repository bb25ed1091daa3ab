import numpy as np
import pytest

from rodflow import DirectorField, HermiteCurve, Mesh1D, RodState, build_mesh, make_circle_rod


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_admissible_state(seed=0, N=12, periodic=False, L=1.0, orthogonal_ends=False):
    """Random rod satisfying the nodal unit constraints only (no orthogonality).

    orthogonal_ends additionally projects the endpoint directors against the
    endpoint tangents, which clamped boundary targets require.
    """
    r = np.random.default_rng(seed)
    mesh = build_mesh(L, N, periodic)
    ncn = mesh.n_curve_nodes
    pos = np.cumsum(r.standard_normal((ncn, 3)) * 0.08, axis=0)
    der = r.standard_normal((ncn, 3))
    der /= np.linalg.norm(der, axis=1, keepdims=True)
    b = r.standard_normal((mesh.n_director_nodes, 3))
    b /= np.linalg.norm(b, axis=1, keepdims=True)
    if orthogonal_ends:
        for i, ci in ((0, 0), (-1, -1)):
            b[i] -= (b[i] @ der[ci]) * der[ci]
            b[i] /= np.linalg.norm(b[i])
    return RodState(HermiteCurve(pos, der), DirectorField(b), mesh)


def circle_state(N=100, beta=0.0, L=None):
    import math

    return make_circle_rod(2.0 * math.pi if L is None else L, N, beta)
