"""投影牛頓法與基準求解器"""

import logging

import numpy as np
import pytest
from scipy.optimize import lsq_linear

from src.netmodel import build_linear_model, compute_c, network_from_document
from src.pnm import (
    BENCH_CONVERGENCE_TOL,
    ControllerConfig,
    ControllerState,
    VarLimits,
    armijo_step,
    build_scaling,
    check_kkt,
    compute_active_set,
    compute_w,
    diagonal_state,
    dsgp_solve,
    gp_solve,
    gradient,
    objective,
    pnm_solve,
    prepare_state,
    project_box,
    projection_arc_step,
    solve,
)
from src.utils import ConfigError, DimensionError
from tests.conftest import single_phase_doc


def _nominal_problem(net, model, load_scale=1.0):
    p, qc = net.nominal_loads()
    c = compute_c(model, 1.0, load_scale * p, load_scale * qc)
    return c, VarLimits.symmetric(net.der_capacity())


def _model_grad(model, qg, c, v_ref=1.0):
    return gradient(model, model.m_matrix @ qg + c, v_ref)


def _oracle(model, c, limits, v_ref=1.0):
    """以有界最小平方法求解，固定索引併入右手邊"""
    free = limits.upper > limits.lower
    rhs = v_ref - c - model.m_matrix[:, ~free] @ limits.lower[~free]
    qg = limits.lower.copy()
    if free.any():
        res = lsq_linear(
            model.m_matrix[:, free], rhs,
            bounds=(limits.lower[free], limits.upper[free]),
            method="bvls", tol=1e-14,
        )
        qg[free] = res.x
    return qg


# --------------------------------
# 目標函數與梯度
# --------------------------------
def test_two_bus_objective_and_gradient(two_bus_model):
    assert objective(two_bus_model, [0.5], [1.0], 1.0) == pytest.approx(0.005)
    np.testing.assert_allclose(_model_grad(two_bus_model, np.array([0.5]), np.array([1.0])), [0.02])


@pytest.mark.parametrize("seed", range(10))
def test_gradient_matches_finite_differences(feeder_factory, seed):
    net, model = feeder_factory(12, seed=seed)
    c, _ = _nominal_problem(net, model)
    rng = np.random.default_rng(seed)
    tau = 1e-6
    for _ in range(50):
        qg = rng.uniform(-0.5, 0.5, net.m)
        g = _model_grad(model, qg, c)
        fd = np.empty(net.m)
        for i in range(net.m):
            e = np.zeros(net.m)
            e[i] = tau
            fd[i] = (objective(model, qg + e, c, 1.0) - objective(model, qg - e, c, 1.0)) / (2 * tau)
        assert np.max(np.abs(fd - g)) <= 1e-6 * np.max(np.abs(g)) + 1e-9


def test_gradient_uses_transpose(mixed_model):
    rng = np.random.default_rng(1)
    v = rng.uniform(0.9, 1.1, mixed_model.m)
    np.testing.assert_allclose(gradient(mixed_model, v, 1.0), mixed_model.m_matrix.T @ (v - 1.0))


# --------------------------------
# 投影、w 與主動集合
# --------------------------------
def test_project_box():
    limits = VarLimits(lower=[-1.0, -1.0, 0.0], upper=[1.0, 1.0, 0.0])
    np.testing.assert_array_equal(project_box([2.0, -3.0, 5.0], limits), [1.0, -1.0, 0.0])
    np.testing.assert_array_equal(project_box([0.5, 0.2, 0.0], limits), [0.5, 0.2, 0.0])
    with pytest.raises(DimensionError):
        project_box([0.0], limits)


def test_compute_w():
    limits = VarLimits.symmetric([0.5, 0.5])
    w = compute_w([0.0, 0.5], [1.0, -1.0], ControllerConfig(), limits)
    np.testing.assert_allclose(w, [0.5, 0.0])


def test_active_set():
    cfg = ControllerConfig(epsilon=1e-3)
    limits = VarLimits.symmetric(np.full(5, 0.5))
    qg = np.array([-0.5, -0.5, 0.0, 0.5 - 2e-4, 0.5 - 2e-3])
    grad = np.array([1.0, -1.0, 1.0, -1e-4, -1.0])
    w = compute_w(qg, grad, cfg, limits)
    # 0: 位於下限且梯度朝外；1: 梯度朝內；2: 內點；3: w 小於距離；4: 距離大於 ε
    np.testing.assert_array_equal(compute_active_set(qg, grad, w, cfg, limits), [0])

    qg[3] = 0.5
    grad[3] = -1.0
    w = compute_w(qg, grad, cfg, limits)
    np.testing.assert_array_equal(compute_active_set(qg, grad, w, cfg, limits), [0, 3])


def test_fixed_bounds_are_active_when_gradient_nonzero():
    limits = VarLimits(lower=[0.0, 0.0], upper=[0.0, 0.0])
    cfg = ControllerConfig()
    qg = np.zeros(2)
    grad = np.array([0.3, -0.2])
    w = compute_w(qg, grad, cfg, limits)
    np.testing.assert_array_equal(compute_active_set(qg, grad, w, cfg, limits), [0, 1])


# --------------------------------
# 縮放矩陣
# --------------------------------
def test_build_scaling_examples():
    h = np.array([[2.0, 1.0], [1.0, 2.0]])
    np.testing.assert_allclose(build_scaling(h, [1]), np.diag([0.5, 0.5]))
    np.testing.assert_allclose(build_scaling(h, []), np.array([[2.0, -1.0], [-1.0, 2.0]]) / 3)
    np.testing.assert_allclose(build_scaling(h, [0, 1]), np.diag([0.5, 0.5]))


@pytest.mark.parametrize("seed", range(3))
def test_scaling_structure_along_pnm_run(feeder_factory, seed):
    net, model = feeder_factory(15, seed=seed)
    c, limits = _nominal_problem(net, model, load_scale=1.5)
    rng = np.random.default_rng(seed)
    seen = []

    def check(iteration, state, step):
        d = state.scaling
        assert np.max(np.abs(d - d.T)) <= 1e-12 * max(1.0, np.max(np.abs(d)))
        for _ in range(20):
            x = rng.normal(size=net.m)
            assert x @ d @ x > 0
        active = state.active_mask
        off = d - np.diag(np.diag(d))
        assert not off[active, :].any()
        assert not off[:, active].any()
        seen.append(state.active_set.size)

    result = pnm_solve(model, c, 1.0, limits, callback=check)
    assert result.converged
    assert len(seen) == result.iterations
    assert max(seen) > 0


# --------------------------------
# 線搜尋
# --------------------------------
def test_armijo_at_optimum_keeps_point(two_bus_model):
    limits = VarLimits.symmetric([1.0])
    cfg = ControllerConfig()
    c = np.array([0.9])
    qg = np.array([0.5])  # M qg + c = 1
    state = prepare_state(two_bus_model, qg, _model_grad(two_bus_model, qg, c), limits, cfg)
    step = armijo_step(state, two_bus_model, c, 1.0, limits, cfg)
    assert not step.exhausted
    assert step.backtracks == 0
    np.testing.assert_array_equal(step.qg, qg)


def test_armijo_unconstrained_takes_damped_newton_step(mixed_model):
    limits = VarLimits.symmetric(np.full(mixed_model.m, 10.0))
    cfg = ControllerConfig()
    c = np.full(mixed_model.m, 0.9)
    qg = np.zeros(mixed_model.m)
    grad = _model_grad(mixed_model, qg, c)
    state = prepare_state(mixed_model, qg, grad, limits, cfg)
    assert state.active_set.size == 0
    step = armijo_step(state, mixed_model, c, 1.0, limits, cfg)
    assert step.backtracks == 1
    assert step.alpha == pytest.approx(cfg.beta)
    np.testing.assert_allclose(step.qg, -cfg.beta * np.linalg.solve(mixed_model.hessian, grad), atol=1e-10)


def test_armijo_exhaustion_returns_current_point(mixed_model, caplog):
    limits = VarLimits.symmetric(np.full(mixed_model.m, 10.0))
    cfg = ControllerConfig(max_armijo_backtracks=5)
    c = np.full(mixed_model.m, 0.9)
    qg = np.zeros(mixed_model.m)
    state = prepare_state(mixed_model, qg, _model_grad(mixed_model, qg, c), limits, cfg)
    h = objective(mixed_model, qg, c, 1.0)
    with caplog.at_level(logging.WARNING):
        step = armijo_step(state, mixed_model, c, 1.0, limits, cfg, h_current=h - 1.0)
    assert step.exhausted
    assert step.backtracks == 5
    np.testing.assert_array_equal(step.qg, qg)
    assert any(r.levelno == logging.WARNING for r in caplog.records)


def test_clipped_coordinate_needs_projection_arc_test(chain_net):
    # 節點 0 在上限且梯度朝外；節點 1 自由但梯度很小
    model = build_linear_model(chain_net)
    g_target = np.array([-0.01, -0.001])
    c = 1.0 + np.linalg.solve(model.m_matrix.T, g_target)
    qg = np.zeros(2)
    limits = VarLimits(lower=[-0.1, -0.1], upper=[0.0, 0.1])
    cfg = ControllerConfig(max_armijo_backtracks=20)
    grad = _model_grad(model, qg, c)
    np.testing.assert_allclose(grad, g_target, atol=1e-12)
    state = diagonal_state(model, qg, grad)
    h = objective(model, qg, c, 1.0)

    # 空主動集合下的 Armijo 條件把截斷座標的 ∇h_i u_i 計入右手邊，永遠無法滿足
    plain = armijo_step(state, model, c, 1.0, limits, cfg, h_current=h)
    assert plain.exhausted
    np.testing.assert_array_equal(plain.qg, qg)

    arc = projection_arc_step(state, model, c, 1.0, limits, cfg, h_current=h)
    assert not arc.exhausted
    assert arc.backtracks == 1
    assert arc.qg[0] == 0.0
    assert arc.qg[1] > 0.0
    assert arc.objective < h


@pytest.mark.parametrize("seed", range(2))
def test_every_accepted_step_descends(feeder_factory, seed):
    net, model = feeder_factory(12, seed=seed)
    c, limits = _nominal_problem(net, model)
    cfg = ControllerConfig()
    rng = np.random.default_rng(seed)
    for _ in range(50):
        qg = rng.uniform(limits.lower, limits.upper)
        grad = _model_grad(model, qg, c)
        h = objective(model, qg, c, 1.0)
        state = prepare_state(model, qg, grad, limits, cfg)
        step = armijo_step(state, model, c, 1.0, limits, cfg, h_current=h)
        assert not step.exhausted
        if not check_kkt(qg, grad, limits).passed:
            assert step.objective < h


# --------------------------------
# 離線求解
# --------------------------------
def test_start_at_optimum_converges_in_one_iteration(two_bus_model):
    limits = VarLimits.symmetric([1.0])
    result = pnm_solve(two_bus_model, [0.9], 1.0, limits, qg0=[0.5])
    assert result.converged
    assert result.iterations == 1
    np.testing.assert_allclose(result.qg, [0.5])


@pytest.mark.parametrize("seed", range(4))
def test_pnm_matches_bounded_least_squares(feeder_factory, seed):
    net, model = feeder_factory(6 + seed, seed=seed)
    c, limits = _nominal_problem(net, model, load_scale=1.5)
    result = pnm_solve(model, c, 1.0, limits)
    assert result.converged
    assert limits.contains(result.qg)
    assert all(b <= a + 1e-15 for a, b in zip(result.trace, result.trace[1:]))
    assert check_kkt(result.qg, _model_grad(model, result.qg, c), limits).passed

    reference = _oracle(model, c, limits)
    h_ref = objective(model, reference, c, 1.0)
    assert result.objective <= h_ref + 1e-8 * max(1.0, h_ref)
    assert result.objective == pytest.approx(h_ref, rel=1e-6, abs=1e-10)


def test_all_methods_agree_on_small_instance(mixed_net, mixed_model):
    c, limits = _nominal_problem(mixed_net, mixed_model, load_scale=3.0)
    cfg = ControllerConfig(max_iterations=200_000)
    results = {m: solve(m, mixed_model, c, 1.0, limits, cfg) for m in ("pnm", "dsgp", "gp")}
    for result in results.values():
        assert result.converged
        assert limits.contains(result.qg)
    best = results["pnm"].objective
    for result in results.values():
        assert result.objective == pytest.approx(best, rel=1e-5, abs=1e-10)


def test_diagonal_hessian_dsgp_matches_pnm():
    # 星狀單相網路：M 為對角，H 亦為對角
    doc = single_phase_doc({1: 0, 2: 0, 3: 0}, x={1: 0.1, 2: 0.2, 3: 0.05}, der_buses=(1, 2, 3))
    net = network_from_document(doc)
    model = build_linear_model(net)
    assert not (model.hessian - np.diag(np.diag(model.hessian))).any()
    limits = VarLimits.symmetric(np.full(3, 10.0))
    c = np.array([0.95, 0.9, 0.97])
    pnm_iterates, dsgp_iterates = [], []
    pnm = pnm_solve(model, c, 1.0, limits, callback=lambda i, s, a: pnm_iterates.append(a.qg))
    dsgp = dsgp_solve(model, c, 1.0, limits, callback=lambda i, s, a: dsgp_iterates.append(a.qg))
    assert pnm.iterations == dsgp.iterations
    np.testing.assert_allclose(np.array(pnm_iterates), np.array(dsgp_iterates), atol=1e-14)


def test_gp_trace_is_monotone(mixed_net, mixed_model):
    c, limits = _nominal_problem(mixed_net, mixed_model, load_scale=2.0)
    result = gp_solve(mixed_model, c, 1.0, limits)
    assert all(b <= a + 1e-15 for a, b in zip(result.trace, result.trace[1:]))


@pytest.mark.parametrize("seed", [100, 101, 102])
def test_iterations_order_pnm_dsgp_gp(feeder_factory, seed):
    net, model = feeder_factory(10 + 3 * (seed - 100), seed=seed)
    c, limits = _nominal_problem(net, model)
    cfg = ControllerConfig(convergence_tol=BENCH_CONVERGENCE_TOL, max_iterations=100_000)
    iterations = {m: solve(m, model, c, 1.0, limits, cfg).iterations for m in ("pnm", "dsgp", "gp")}
    assert iterations["pnm"] < iterations["dsgp"] < iterations["gp"]


@pytest.mark.parametrize("beta", [0.3, 0.5, 0.9])
def test_kkt_point_is_fixed(feeder_factory, beta):
    net, model = feeder_factory(10, seed=5)
    c, limits = _nominal_problem(net, model, load_scale=1.5)
    optimum = pnm_solve(model, c, 1.0, limits, ControllerConfig(convergence_tol=1e-12)).qg
    cfg = ControllerConfig(beta=beta)
    grad = _model_grad(model, optimum, c)
    assert check_kkt(optimum, grad, limits).passed
    state = prepare_state(model, optimum, grad, limits, cfg)
    step = armijo_step(state, model, c, 1.0, limits, cfg)
    np.testing.assert_allclose(step.qg, optimum, atol=1e-8)


# --------------------------------
# KKT 與設定
# --------------------------------
def test_check_kkt_examples():
    limits = VarLimits(lower=[-1.0, -1.0, -1.0, 0.0], upper=[1.0, 1.0, 1.0, 0.0])
    report = check_kkt([0.0, -1.0, 1.0, 0.0], [0.0, 0.5, -0.5, 3.0], limits)
    assert report.passed and report.residual == 0.0

    report = check_kkt([-1.0, 0.0, 0.0, 0.0], [-0.25, 0.0, 0.0, 0.0], limits)
    assert not report.passed
    assert report.residual == pytest.approx(0.25)


def test_controller_config_validation():
    with pytest.raises(ConfigError):
        ControllerConfig(beta=1.0)
    with pytest.raises(ConfigError):
        ControllerConfig(delta=0.5)
    with pytest.raises(ConfigError):
        ControllerConfig(epsilon=0.0)
    with pytest.raises(ConfigError):
        ControllerConfig(c_matrix=np.array([[1.0, 0.1], [0.1, 1.0]]))
    cfg = ControllerConfig(c_matrix=np.diag([1.0, 2.0]))
    np.testing.assert_array_equal(cfg.c_vector(2), [1.0, 2.0])
    assert cfg.replace(beta=None, delta=0.2).delta == 0.2


def test_var_limits_validation():
    with pytest.raises(ConfigError):
        VarLimits(lower=[1.0], upper=[0.0])
    with pytest.raises(DimensionError):
        VarLimits(lower=[0.0, 0.0], upper=[1.0])
    limits = VarLimits(lower=[-np.inf], upper=[np.inf])
    assert limits.contains([1e9])


def test_unknown_method(two_bus_model):
    with pytest.raises(ConfigError):
        solve("newton", two_bus_model, [1.0], 1.0, VarLimits.symmetric([1.0]))


def test_limits_must_match_model(two_bus_model):
    with pytest.raises(DimensionError):
        pnm_solve(two_bus_model, [1.0], 1.0, VarLimits.symmetric([1.0, 1.0]))


def test_state_active_mask():
    state = ControllerState(
        qg=np.zeros(3), gradient=np.zeros(3), active_set=np.array([2]), scaling=np.eye(3)
    )
    np.testing.assert_array_equal(state.active_mask, [False, False, True])
