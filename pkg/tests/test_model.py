import math

import numpy as np
import pytest

from rodflow import (
    BoundaryCondition,
    DirectorField,
    FlowConfig,
    HermiteCurve,
    RodState,
    build_mesh,
    directional_derivative,
    energy_breakdown,
    make_circle_rod,
    make_straight_piecewise_twist,
    theta,
)
from rodflow import model as mdl
from rodflow import mesh as msh

from conftest import random_admissible_state


@pytest.mark.parametrize("kappa,expected", [(2.0, 1.0), (1.5, 0.75), (0.7, 0.35), (5.0, 1.0)])
def test_theta_values(kappa, expected):
    assert theta(kappa) == pytest.approx(expected, abs=1e-15)


def test_theta_rejects_nonpositive():
    with pytest.raises(ValueError):
        theta(0.0)
    with pytest.raises(ValueError):
        theta(-1.0)


def test_energy_twisted_circle_reference_values():
    state = make_circle_rod(2 * math.pi, 400, 5.0)
    eb = energy_breakdown(state, FlowConfig(kappa=2.0, epsilon=1e-3, tau=1.0))
    assert eb.bending == pytest.approx(2 * math.pi, rel=5e-3)
    assert eb.twisting == pytest.approx(25 * math.pi, rel=5e-3)


def test_energy_straight_parallel_frame_zero():
    state = make_straight_piecewise_twist(2 * math.pi, 50, [(0.0, 2 * math.pi, 0.0)])
    eb = energy_breakdown(state, FlowConfig(kappa=2.0, epsilon=1e-3, tau=1.0))
    assert eb.bending == pytest.approx(0.0, abs=1e-25)
    assert eb.twisting == pytest.approx(0.0, abs=1e-25)
    assert eb.penalty == 0.0
    assert eb.total == pytest.approx(0.0, abs=1e-25)


def test_energy_nonuniform_twist_rate_value():
    state = make_straight_piecewise_twist(
        2 * math.pi, 100, [(0.0, math.pi / 2, 4.0), (math.pi / 2, 2 * math.pi, 0.0)]
    )
    eb = energy_breakdown(state, FlowConfig(kappa=2.0, epsilon=0.0628, tau=1.0))
    assert eb.twisting == pytest.approx(4 * math.pi, rel=2e-2)


def test_uniform_twist_energy_refinement():
    # (theta/2 + (1-theta)/2) L beta^2 / ... -> (1/2) L beta^2 with O(h^2) error
    beta, L = 3.0, 2 * math.pi
    target = 0.5 * L * beta**2
    errs = []
    for N in (50, 100, 200):
        state = make_circle_rod(L, N, beta)
        eb = energy_breakdown(state, FlowConfig(kappa=1.5, epsilon=1.0, tau=1.0))
        errs.append(abs(eb.twisting - target))
    assert errs[0] / errs[1] > 3.0
    assert errs[1] / errs[2] > 3.0


def test_energy_two_evaluation_paths_agree():
    # term sums versus assembled quadratic forms
    for seed in range(4):
        state = random_admissible_state(seed=seed, N=9)
        cfg = FlowConfig(kappa=1.7, epsilon=0.02, tau=1.0)
        eb = energy_breakdown(state, cfg)
        forms = mdl.standard_forms(state.mesh, cfg)
        Y = state.curve.dofs()
        B = state.director.dofs()
        bend2 = 0.5 * cfg.kappa * float(Y @ (forms["bending"] @ Y))
        t1_2 = float(B @ (forms["h1"] @ B))
        # coupling and residual matrices assembled densely from element data
        th = cfg.theta()
        yp, ypp = mdl._curve_gauss(state)
        qb, db = mdl._director_elementwise(state)
        w = msh.gauss_rule(3)[1]
        h = state.mesh.elem_lengths
        s = np.einsum("ec,egc->eg", qb, ypp)
        t2_2 = float(np.einsum("g,eg,eg,e->", w, s, s, h))
        ce = np.cross(qb, db)
        r = np.einsum("ec,egc->eg", ce, yp)
        t3_2 = float(np.einsum("g,eg,eg,e->", w, r, r, h))
        twisting2 = 0.5 * th * (t1_2 - t2_2) + 0.5 * (1 - th) * t3_2
        wts = state.mesh.lumped_weights()
        tvec = state.nodal_tangents()
        dots = (tvec * state.director.values).sum(axis=1)
        pen2 = float(wts @ dots**2) / (2 * cfg.epsilon)
        total2 = bend2 + twisting2 + pen2
        assert eb.bending == pytest.approx(bend2, rel=1e-12, abs=1e-14)
        assert eb.twisting == pytest.approx(twisting2, rel=1e-12, abs=1e-14)
        assert eb.penalty == pytest.approx(pen2, rel=1e-12, abs=1e-14)
        assert eb.total == pytest.approx(total2, rel=1e-12, abs=1e-14)


def _term_value(state, cfg, term):
    th = cfg.theta()
    h = state.mesh.elem_lengths
    w = msh.gauss_rule(3)[1]
    yp, ypp = mdl._curve_gauss(state)
    qb, db = mdl._director_elementwise(state)
    if term == "bending":
        return 0.5 * cfg.kappa * float(np.einsum("g,egc,egc,e->", w, ypp, ypp, h))
    if term == "coupling":
        s = np.einsum("ec,egc->eg", qb, ypp)
        return 0.5 * th * float(np.einsum("g,eg,eg,e->", w, s, s, h))
    if term == "residual":
        ce = np.cross(qb, db)
        r = np.einsum("ec,egc->eg", ce, yp)
        return 0.5 * (1 - th) * float(np.einsum("g,eg,eg,e->", w, r, r, h))
    if term == "penalty":
        wts = state.mesh.lumped_weights()
        dots = (state.nodal_tangents() * state.director.values).sum(axis=1)
        return float(wts @ dots**2) / (2 * cfg.epsilon)
    raise AssertionError(term)


def _shift(state, which, direction, a):
    if which == "curve":
        return RodState(HermiteCurve.from_dofs(state.curve.dofs() + a * direction),
                        state.director, state.mesh)
    return RodState(state.curve,
                    DirectorField.from_dofs(state.director.dofs() + a * direction), state.mesh)


@pytest.mark.parametrize("term", ["bending", "coupling", "residual", "penalty"])
@pytest.mark.parametrize("which", ["curve", "director"])
def test_first_variations_match_central_differences(term, which):
    cfg = FlowConfig(kappa=1.5, epsilon=0.01, tau=1.0)  # theta = 0.75, all terms active
    rng = np.random.default_rng(99)
    delta = 1e-5
    for seed in range(10):
        state = random_admissible_state(seed=seed)
        n = 6 * state.mesh.n_curve_nodes if which == "curve" else 3 * state.mesh.n_director_nodes
        d = rng.standard_normal(n)
        d /= np.linalg.norm(d)
        analytic = directional_derivative(term, state, d, which, cfg)
        fd = (_term_value(_shift(state, which, d, delta), cfg, term)
              - _term_value(_shift(state, which, d, -delta), cfg, term)) / (2 * delta)
        scale = max(abs(fd), abs(analytic), 1e-8)
        assert abs(fd - analytic) / scale < 1e-6


def test_residual_vanishes_identically_for_theta_one():
    state = random_admissible_state(seed=3)
    cfg = FlowConfig(kappa=2.0, epsilon=0.01, tau=1.0)
    rng = np.random.default_rng(0)
    d = rng.standard_normal(6 * state.mesh.n_curve_nodes)
    assert directional_derivative("residual", state, d, "curve", cfg) == 0.0
    db = rng.standard_normal(3 * state.mesh.n_director_nodes)
    assert directional_derivative("residual", state, db, "director", cfg) == 0.0


def test_bending_variation_zero_at_straight_line():
    state = make_straight_piecewise_twist(1.0, 8, [(0.0, 1.0, 2.0)])
    cfg = FlowConfig(kappa=2.0, epsilon=0.01, tau=1.0)
    rng = np.random.default_rng(5)
    d = rng.standard_normal(6 * state.mesh.n_curve_nodes)
    assert directional_derivative("bending", state, d, "curve", cfg) == pytest.approx(0.0, abs=1e-11)


def test_unknown_term_rejected():
    state = random_admissible_state()
    cfg = FlowConfig(kappa=2.0, epsilon=0.01, tau=1.0)
    with pytest.raises(ValueError):
        directional_derivative("nope", state, np.zeros(6 * state.mesh.n_curve_nodes), "curve", cfg)
    with pytest.raises(ValueError):
        directional_derivative("bending", state, np.zeros(3), "nope", cfg)


@pytest.mark.parametrize("term", ["coupling", "penalty"])
@pytest.mark.parametrize("which", ["curve", "director"])
def test_separate_convexity_midpoint_inequality(term, which, rng):
    # fixed other variable, midpoint value below the chord average
    cfg = FlowConfig(kappa=1.3, epsilon=0.05, tau=1.0)
    for seed in range(6):
        s1 = random_admissible_state(seed=seed)
        s2 = random_admissible_state(seed=seed + 50)
        if which == "curve":
            s2 = RodState(s2.curve, s1.director, s1.mesh)
            mid = RodState(HermiteCurve.from_dofs(0.5 * (s1.curve.dofs() + s2.curve.dofs())),
                           s1.director, s1.mesh)
        else:
            s2 = RodState(s1.curve, s2.director, s1.mesh)
            mid = RodState(s1.curve,
                           DirectorField.from_dofs(0.5 * (s1.director.dofs() + s2.director.dofs())),
                           s1.mesh)
        vm = _term_value(mid, cfg, term)
        va = 0.5 * (_term_value(s1, cfg, term) + _term_value(s2, cfg, term))
        assert vm <= va + 1e-12 * (1 + abs(va))


def test_director_step_uses_new_curve_only_for_theta_one():
    # the curvature coupling on the director right-hand side follows the
    # k-tilde rule: new curve when theta = 1, previous curve when theta < 1
    state = random_admissible_state(seed=8)
    rng = np.random.default_rng(2)
    new_curve = HermiteCurve.from_dofs(state.curve.dofs() + 0.1 * rng.standard_normal(6 * state.mesh.n_curve_nodes))

    def coupling_rhs(cfg, curve_for_coupling):
        return mdl._grad_coupling_director(RodState(state.curve, state.director, state.mesh),
                                           cfg, curve=curve_for_coupling)

    for kappa, expect_new in ((2.0, True), (1.5, False)):
        cfg = FlowConfig(kappa=kappa, epsilon=1e5, tau=1.0)  # huge eps kills the penalty part
        rhs = mdl.director_step_rhs(state, new_curve, cfg)
        th = cfg.theta()
        forms = mdl.standard_forms(state.mesh, cfg)
        base = -th * (forms["h1"] @ state.director.dofs())
        base -= mdl._grad_penalty_director(new_curve, state.director, state.mesh, cfg)
        base -= mdl._grad_residual_director(state, cfg)
        with_new = base + coupling_rhs(cfg, new_curve)
        with_old = base + coupling_rhs(cfg, None)
        if expect_new:
            assert np.allclose(rhs, with_new, atol=1e-13)
            assert not np.allclose(rhs, with_old, atol=1e-9)
        else:
            assert np.allclose(rhs, with_old, atol=1e-13)
            assert not np.allclose(rhs, with_new, atol=1e-9)


def test_boundary_condition_validation():
    with pytest.raises(ValueError):
        BoundaryCondition("weird", np.array([[1, 0, 0], [1, 0, 0]], float))
    with pytest.raises(ValueError):
        BoundaryCondition("periodic", np.array([[2, 0, 0], [1, 0, 0]], float))
    with pytest.raises(ValueError):
        # curve derivative not perpendicular to director target
        BoundaryCondition("clamped_both", np.array([[1, 0, 0], [0, 1, 0]], float),
                          curve_pos=np.zeros((2, 3)),
                          curve_deriv=np.array([[1, 0, 0], [0, 1, 0]], float))


def test_flow_config_validation():
    with pytest.raises(ValueError):
        FlowConfig(kappa=-1.0, epsilon=0.1, tau=0.1)
    with pytest.raises(ValueError):
        FlowConfig(kappa=1.0, epsilon=0.1, tau=0.1, q=2.0)
    with pytest.raises(ValueError):
        FlowConfig(kappa=1.0, epsilon=0.1, tau=0.1, rho=-0.1)
