import math

import numpy as np
import pytest

from rodflow import (
    HermiteCurve,
    TangentPointParams,
    build_mesh,
    eval_state,
    make_circle_rod,
    make_straight_piecewise_twist,
    min_strand_distance,
    tp_energy,
    tp_gradient,
    tp_radius,
)
from rodflow.selfavoid import _kept_pairs, tp_energy_gradient


def test_tp_radius_circle_points():
    # any chord of a circle against its tangent recovers the radius
    R = 2.5
    p = np.array([R, 0.0, 0.0])
    tangent = np.array([0.0, 1.0, 0.0])
    for ang in (0.2, 1.1, 2.0, math.pi):
        x = np.array([R * math.cos(ang), R * math.sin(ang), 0.0])
        assert tp_radius(p, tangent, x) == pytest.approx(R, abs=1e-10)


def test_tp_radius_collinear_infinite():
    assert math.isinf(tp_radius(np.zeros(3), np.array([1.0, 0, 0]), np.array([2.0, 0, 0])))


def test_tp_radius_half():
    r = tp_radius(np.zeros(3), np.array([1.0, 0, 0]), np.array([0.0, 1.0, 0]))
    assert r == pytest.approx(0.5, abs=1e-14)


def test_tp_radius_coincident_rejected():
    with pytest.raises(ValueError):
        tp_radius(np.zeros(3), np.array([1.0, 0, 0]), np.zeros(3))


def test_params_validation():
    with pytest.raises(ValueError):
        TangentPointParams(q=2.0, rho=0.1, cutoff=0.1)
    with pytest.raises(ValueError):
        TangentPointParams(q=4.0, rho=-0.1, cutoff=0.1)


def _riemann_oracle(curve, mesh, params, ns=10):
    """Dense double Riemann sum over the same element-pair domain."""
    from rodflow import DirectorField

    dummy = DirectorField(np.zeros((mesh.n_director_nodes, 3)))
    pi_, pj_ = _kept_pairs(mesh, params.cutoff)
    tloc = (np.arange(ns) + 0.5) / ns
    total = 0.0
    for i, j in zip(pi_, pj_):
        for a, b in ((i, j), (j, i)):
            ha = mesh.nodes[a + 1] - mesh.nodes[a]
            hb = mesh.nodes[b + 1] - mesh.nodes[b]
            for ta in tloc:
                ya, va = eval_state(curve, dummy, mesh, mesh.nodes[a] + ta * ha)[:2]
                for tb in tloc:
                    yb, vb = eval_state(curve, dummy, mesh, mesh.nodes[b] + tb * hb)[:2]
                    r = tp_radius(yb, vb / np.linalg.norm(vb), ya)
                    total += (np.linalg.norm(va) * np.linalg.norm(vb) / r**params.q
                              * (ha / ns) * (hb / ns))
    return total / (2.0**params.q * params.q)


def test_tp_energy_circle_matches_brute_force():
    state = make_circle_rod(2 * math.pi, 48, 0.0)
    params = TangentPointParams.for_mesh(state.mesh, q=4.0)
    val = tp_energy(state.curve, state.mesh, params)
    oracle = _riemann_oracle(state.curve, state.mesh, params)
    assert val == pytest.approx(oracle, rel=5e-3)


def test_tp_energy_straight_segment_zero():
    state = make_straight_piecewise_twist(1.0, 20, [(0.0, 1.0, 0.0)])
    params = TangentPointParams.for_mesh(state.mesh, q=4.0)
    assert tp_energy(state.curve, state.mesh, params) == pytest.approx(0.0, abs=1e-30)


def _two_loops(separation, N=40):
    a = make_circle_rod(2 * math.pi, N, 0.0)
    mesh = build_mesh(2 * 2 * math.pi, 2 * N, periodic=True)
    pos = np.concatenate([a.curve.positions,
                          a.curve.positions + np.array([0.0, 0.0, separation])])
    der = np.concatenate([a.curve.derivatives, a.curve.derivatives])
    return HermiteCurve(pos, der), mesh


def test_tp_energy_monotone_under_approach():
    # two stacked rings: closer means strictly larger energy
    vals = []
    for sep in (0.4, 0.2, 0.1):
        curve, mesh = _two_loops(sep)
        params = TangentPointParams.for_mesh(mesh, q=4.0)
        vals.append(tp_energy(curve, mesh, params))
    assert vals[0] < vals[1] < vals[2]


def test_tp_energy_rigid_motion_invariance(rng):
    state = make_circle_rod(2 * math.pi, 36, 0.0)
    params = TangentPointParams.for_mesh(state.mesh, q=4.0)
    e0 = tp_energy(state.curve, state.mesh, params)
    A = np.linalg.qr(rng.standard_normal((3, 3)))[0]
    moved = HermiteCurve(state.curve.positions @ A.T + 3.0, state.curve.derivatives @ A.T)
    e1 = tp_energy(moved, state.mesh, params)
    assert e1 == pytest.approx(e0, rel=1e-12)


def test_tp_energy_index_rotation_invariance():
    state = make_circle_rod(2 * math.pi, 36, 0.0)
    params = TangentPointParams.for_mesh(state.mesh, q=4.0)
    e0 = tp_energy(state.curve, state.mesh, params)
    rolled = HermiteCurve(np.roll(state.curve.positions, -7, axis=0),
                          np.roll(state.curve.derivatives, -7, axis=0))
    assert tp_energy(rolled, state.mesh, params) == pytest.approx(e0, rel=1e-12)


def test_tp_quadrature_refinement_stability():
    state = make_circle_rod(2 * math.pi, 64, 0.0)
    params = TangentPointParams.for_mesh(state.mesh, q=4.0)
    v3 = tp_energy(state.curve, state.mesh, params, ng=3)
    v6 = tp_energy(state.curve, state.mesh, params, ng=6)
    assert abs(v6 - v3) / v3 < 1e-3


def test_tp_gradient_matches_finite_differences(rng):
    state = make_circle_rod(2 * math.pi, 28, 0.0)
    pos = state.curve.positions + 0.03 * rng.standard_normal((28, 3))
    der = state.curve.derivatives + 0.03 * rng.standard_normal((28, 3))
    curve = HermiteCurve(pos, der)
    params = TangentPointParams.for_mesh(state.mesh, q=4.0)
    e, g = tp_energy_gradient(curve, state.mesh, params)
    delta = 1e-5
    for _ in range(4):
        d = rng.standard_normal(g.size)
        d /= np.linalg.norm(d)
        x0 = curve.dofs()
        ep = tp_energy(HermiteCurve.from_dofs(x0 + delta * d), state.mesh, params)
        em = tp_energy(HermiteCurve.from_dofs(x0 - delta * d), state.mesh, params)
        fd = (ep - em) / (2 * delta)
        assert abs(fd - g @ d) / max(abs(fd), 1e-10) < 1e-6


def test_tp_gradient_circle_symmetry():
    state = make_circle_rod(2 * math.pi, 40, 0.0)
    params = TangentPointParams.for_mesh(state.mesh, q=4.0)
    g = tp_gradient(state.curve, state.mesh, params).reshape(-1, 6)
    pos_part = g[:, :3]
    norms = np.linalg.norm(pos_part, axis=1)
    assert norms.max() - norms.min() < 1e-8
    tangential = np.einsum("ij,ij->i", pos_part, state.curve.derivatives)
    assert np.abs(tangential).max() < 1e-8


def test_tp_gradient_translation_invariance():
    state = make_circle_rod(2 * math.pi, 40, 0.0)
    params = TangentPointParams.for_mesh(state.mesh, q=4.0)
    g = tp_gradient(state.curve, state.mesh, params)
    for comp in range(3):
        d = np.zeros_like(g).reshape(-1, 6)
        d[:, comp] = 1.0
        assert abs(g @ d.ravel()) < 1e-10


def test_tp_energy_coincident_points_error():
    curve, mesh = _two_loops(0.0)  # two identical rings on top of each other
    params = TangentPointParams.for_mesh(mesh, q=4.0)
    with pytest.raises(FloatingPointError, match="element pair"):
        tp_energy(curve, mesh, params)


def test_min_strand_distance():
    curve, mesh = _two_loops(0.25)
    assert min_strand_distance(curve, mesh) == pytest.approx(0.25, abs=1e-12)
