#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
箱型限制下的電壓偏差最小化求解器
- 投影牛頓法（PNM）：主動集合上取對角、自由集合上取 Hessian 子區塊的反矩陣
- 基準方法：梯度投影（GP）與對角縮放梯度投影（DSGP）
- 一階最適條件（KKT）檢查
"""

import dataclasses
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np
import scipy.linalg

from .netmodel import LinearSensitivityModel
from .utils import setup_logger, VoltVarError, ConfigError, DimensionError, as_vector

logger = setup_logger(__name__)

# 預設參數（C = I, ε = 0.001, β = 0.5, δ = 0.1）
DEFAULT_EPSILON = 1e-3
DEFAULT_BETA = 0.5
DEFAULT_DELTA = 0.1
DEFAULT_MAX_BACKTRACKS = 50
DEFAULT_CONVERGENCE_TOL = 1e-8
DEFAULT_MAX_ITERATIONS = 10000

# 基準比較時使用的停止門檻
BENCH_CONVERGENCE_TOL = 1e-6

METHODS = ("pnm", "dsgp", "gp")


class ScalingError(VoltVarError):
    """自由區塊無法 Cholesky 分解（Hessian 正定時不應發生）"""
    pass


# --------------------------------
# 數據結構
# --------------------------------
@dataclass(frozen=True, eq=False)
class ControllerConfig:
    """
    求解器參數

    c_matrix 可為對角向量或對角方陣，None 代表單位矩陣；
    gp_step 為 GP 的固定步長，None 代表 1/λ_max(H)
    """
    epsilon: float = DEFAULT_EPSILON
    beta: float = DEFAULT_BETA
    delta: float = DEFAULT_DELTA
    c_matrix: Optional[np.ndarray] = None
    max_armijo_backtracks: int = DEFAULT_MAX_BACKTRACKS
    convergence_tol: float = DEFAULT_CONVERGENCE_TOL
    max_iterations: int = DEFAULT_MAX_ITERATIONS
    gp_step: Optional[float] = None

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ConfigError(f"epsilon 必須為正: {self.epsilon}")
        if not 0 < self.beta < 1:
            raise ConfigError(f"beta 必須在 (0, 1): {self.beta}")
        if not 0 < self.delta < 0.5:
            raise ConfigError(f"delta 必須在 (0, 0.5): {self.delta}")
        if self.max_armijo_backtracks < 1:
            raise ConfigError("max_armijo_backtracks 必須 ≥ 1")
        if not self.convergence_tol > 0:
            raise ConfigError(f"convergence_tol 必須為正: {self.convergence_tol}")
        if self.max_iterations < 1:
            raise ConfigError("max_iterations 必須 ≥ 1")
        if self.gp_step is not None and not self.gp_step > 0:
            raise ConfigError(f"gp_step 必須為正: {self.gp_step}")
        if self.c_matrix is not None:
            c = np.asarray(self.c_matrix, dtype=float)
            if c.ndim == 2:
                if c.shape[0] != c.shape[1] or np.any(c - np.diag(np.diag(c))):
                    raise ConfigError("c_matrix 必須為對角矩陣")
                c = np.diag(c).copy()
            if c.ndim != 1 or np.any(c <= 0) or not np.all(np.isfinite(c)):
                raise ConfigError("c_matrix 對角元素必須為正")
            object.__setattr__(self, "c_matrix", c)

    def c_vector(self, m: int) -> np.ndarray:
        """C 的對角元素 (m,)"""
        if self.c_matrix is None:
            return np.ones(m)
        return as_vector(self.c_matrix, m, "c_matrix")

    def replace(self, **changes) -> "ControllerConfig":
        """以覆寫值建立新設定（None 值忽略）"""
        return dataclasses.replace(self, **{k: v for k, v in changes.items() if v is not None})


@dataclass(frozen=True, eq=False)
class VarLimits:
    """DER 無效功上下限；非 DER 節點兩者皆為 0"""
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lower.shape != upper.shape or lower.ndim != 1:
            raise DimensionError(f"上下限維度不符: {lower.shape} vs {upper.shape}")
        if np.any(np.isnan(lower)) or np.any(np.isnan(upper)):
            raise ConfigError("上下限含 NaN")
        if np.any(lower > upper):
            raise ConfigError("下限不可大於上限")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def size(self) -> int:
        return self.lower.shape[0]

    @classmethod
    def symmetric(cls, bound) -> "VarLimits":
        bound = np.atleast_1d(np.asarray(bound, dtype=float))
        return cls(lower=-bound, upper=bound.copy())

    def contains(self, x, tol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))


@dataclass(frozen=True, eq=False)
class ControllerState:
    """單次迭代的控制器狀態"""
    qg: np.ndarray
    gradient: np.ndarray
    active_set: np.ndarray
    scaling: np.ndarray
    last_step: float = 0.0
    last_objective: float = float("nan")

    @property
    def active_mask(self) -> np.ndarray:
        mask = np.zeros(self.qg.shape[0], dtype=bool)
        mask[self.active_set] = True
        return mask


@dataclass(frozen=True, eq=False)
class ArmijoResult:
    """線搜尋結果"""
    qg: np.ndarray
    alpha: float
    backtracks: int
    objective: float
    exhausted: bool = False


@dataclass(eq=False)
class SolveResult:
    """離線求解結果"""
    method: str
    qg: np.ndarray
    iterations: int
    converged: bool
    objective: float
    trace: List[float] = field(default_factory=list)
    backtracks: List[int] = field(default_factory=list)
    active_set_sizes: List[int] = field(default_factory=list)
    exhausted: bool = False

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "qg": self.qg.tolist(),
            "iterations": self.iterations,
            "converged": self.converged,
            "objective": self.objective,
            "trace": list(self.trace),
            "backtracks": list(self.backtracks),
            "active_set_sizes": list(self.active_set_sizes),
            "exhausted": self.exhausted,
        }


@dataclass(frozen=True)
class KktReport:
    residual: float
    passed: bool


IterationCallback = Callable[[int, ControllerState, ArmijoResult], None]


# --------------------------------
# 目標函數與梯度
# --------------------------------
def objective(model: LinearSensitivityModel, qg, c, v_ref) -> float:
    """
    h(qg) = ½‖M qg + c − v_ref‖²

    Args:
        model: 線性模型
        qg: DER 無效功 (m,)
        c: 偏移向量 (m,)
        v_ref: 參考電壓平方（純量或 (m,)）

    Returns:
        目標值
    """
    qg = as_vector(qg, model.m, "qg")
    c = as_vector(c, model.m, "c")
    v_ref = as_vector(v_ref, model.m, "v_ref", broadcast=True)
    residual = model.m_matrix @ qg + c - v_ref
    return 0.5 * float(residual @ residual)


def gradient(model: LinearSensitivityModel, v, v_ref) -> np.ndarray:
    """
    ∇h = Mᵀ(v − v_ref)

    使用 Mᵀ：不平衡網路中 M 非對稱，Mᵀ 才是目標函數的真實梯度，並與 H = MᵀM 一致
    """
    v = as_vector(v, model.m, "v")
    v_ref = as_vector(v_ref, model.m, "v_ref", broadcast=True)
    return model.m_matrix.T @ (v - v_ref)


def _model_gradient(model: LinearSensitivityModel, qg, c, v_ref) -> np.ndarray:
    return gradient(model, model.m_matrix @ qg + c, v_ref)


def project_box(x, limits: VarLimits) -> np.ndarray:
    """逐元素投影到 [lower, upper]"""
    x = as_vector(x, limits.size, "x")
    return np.clip(x, limits.lower, limits.upper)


# --------------------------------
# 主動集合與縮放矩陣
# --------------------------------
def compute_w(qg, grad, cfg: ControllerConfig, limits: VarLimits) -> np.ndarray:
    """w = |qg − [qg − C∇h]|"""
    qg = as_vector(qg, limits.size, "qg")
    grad = as_vector(grad, limits.size, "gradient")
    step = qg - cfg.c_vector(limits.size) * grad
    return np.abs(qg - project_box(step, limits))


def compute_active_set(qg, grad, w, cfg: ControllerConfig, limits: VarLimits) -> np.ndarray:
    """
    主動集合 I(t)：靠近邊界且梯度朝外的索引

    ε(t)_i = min(ε, w_i)；梯度比較採嚴格不等式

    Returns:
        排序後的索引陣列
    """
    qg = as_vector(qg, limits.size, "qg")
    grad = as_vector(grad, limits.size, "gradient")
    w = as_vector(w, limits.size, "w")
    eps = np.minimum(cfg.epsilon, w)
    near_lower = (qg >= limits.lower) & (qg <= limits.lower + eps) & (grad > 0)
    near_upper = (qg <= limits.upper) & (qg >= limits.upper - eps) & (grad < 0)
    return np.flatnonzero(near_lower | near_upper)


def build_scaling(hessian: np.ndarray, active_set) -> np.ndarray:
    """
    建立縮放矩陣 D(t)

    自由索引的主子區塊取 H 對應子區塊的反矩陣；主動索引只保留對角 1/|H_ii|

    Args:
        hessian: 對稱正定 H (m, m)
        active_set: 主動索引

    Returns:
        D (m, m)
    """
    m = hessian.shape[0]
    active = np.zeros(m, dtype=bool)
    active[np.asarray(active_set, dtype=int)] = True
    free = np.flatnonzero(~active)

    scaling = np.zeros((m, m))
    if free.size:
        block = hessian[np.ix_(free, free)]
        try:
            factor = scipy.linalg.cho_factor(block)
        except np.linalg.LinAlgError as e:
            raise ScalingError(f"自由區塊 ({free.size}×{free.size}) 無法分解: {e}") from e
        inverse = scipy.linalg.cho_solve(factor, np.eye(free.size))
        scaling[np.ix_(free, free)] = 0.5 * (inverse + inverse.T)
    idx = np.flatnonzero(active)
    scaling[idx, idx] = 1.0 / np.abs(np.diag(hessian)[idx])
    return scaling


def prepare_state(
    model: LinearSensitivityModel,
    qg: np.ndarray,
    grad: np.ndarray,
    limits: VarLimits,
    cfg: ControllerConfig,
    last_objective: float = float("nan"),
) -> ControllerState:
    """依目前的梯度計算 w、I(t) 與 D(t)"""
    w = compute_w(qg, grad, cfg, limits)
    active = compute_active_set(qg, grad, w, cfg, limits)
    return ControllerState(
        qg=qg,
        gradient=grad,
        active_set=active,
        scaling=build_scaling(model.hessian, active),
        last_objective=last_objective,
    )


def diagonal_state(
    model: LinearSensitivityModel,
    qg: np.ndarray,
    grad: np.ndarray,
    last_objective: float = float("nan"),
) -> ControllerState:
    """DSGP 狀態：空主動集合，D = diag(1/H_ii)"""
    return ControllerState(
        qg=qg,
        gradient=grad,
        active_set=np.array([], dtype=int),
        scaling=np.diag(1.0 / np.abs(model.hessian_diag)),
        last_objective=last_objective,
    )


# --------------------------------
# 線搜尋
# --------------------------------
def _backtrack(qg, direction, h_current, trial_objective, sufficient_decrease, limits, cfg) -> ArmijoResult:
    # 梯度為零：已是穩定點
    if not np.any(direction):
        return ArmijoResult(qg=qg.copy(), alpha=0.0, backtracks=0, objective=h_current)

    alpha = 1.0
    for tau in range(1, cfg.max_armijo_backtracks + 1):
        alpha = cfg.beta ** tau
        trial = project_box(qg - alpha * direction, limits)
        h_trial = trial_objective(trial)
        if h_current - h_trial >= sufficient_decrease(alpha, trial):
            return ArmijoResult(qg=trial, alpha=alpha, backtracks=tau, objective=h_trial)

    logger.warning(
        f"⚠️ Armijo 線搜尋在 {cfg.max_armijo_backtracks} 次回溯後仍未滿足，維持目前解"
    )
    return ArmijoResult(
        qg=qg.copy(), alpha=alpha, backtracks=cfg.max_armijo_backtracks,
        objective=h_current, exhausted=True,
    )


def armijo_step(
    state: ControllerState,
    model: LinearSensitivityModel,
    c,
    v_ref,
    limits: VarLimits,
    cfg: ControllerConfig,
    h_current: Optional[float] = None,
) -> ArmijoResult:
    """
    PNM 線搜尋

    試探點 qg⁺ = [qg − α D∇h]，α = β^τ 且 τ 由 1 起算；充分下降條件為
    h(qg) − h(qg⁺) ≥ δ(β^τ Σ_{i∉I} ∇h_i u_i + Σ_{i∈I} ∇h_i (qg_i − qg⁺_i))

    Args:
        state: 含 qg、梯度、I(t)、D(t) 的狀態
        model, c, v_ref: 決定模型目標 ĥ
        limits: 無效功上下限
        cfg: 求解器參數
        h_current: 目前目標值；線上控制時傳入量測值，None 時以模型計算

    Returns:
        ArmijoResult
    """
    qg = state.qg
    grad = state.gradient
    direction = state.scaling @ grad
    active = state.active_mask
    free = ~active
    free_term = float(grad[free] @ direction[free])
    if h_current is None:
        h_current = objective(model, qg, c, v_ref)

    def decrease(alpha, trial):
        active_term = float(grad[active] @ (qg[active] - trial[active]))
        return cfg.delta * (alpha * free_term + active_term)

    return _backtrack(
        qg, direction, h_current,
        lambda trial: objective(model, trial, c, v_ref),
        decrease, limits, cfg,
    )


def projection_arc_step(
    state: ControllerState,
    model: LinearSensitivityModel,
    c,
    v_ref,
    limits: VarLimits,
    cfg: ControllerConfig,
    h_current: Optional[float] = None,
) -> ArmijoResult:
    """
    DSGP 線搜尋：沿投影弧的 Armijo 條件 h(qg) − h(qg⁺) ≥ δ ∇hᵀ(qg − qg⁺)

    沒有座標被截斷時即為 δ β^τ ∇hᵀ D ∇h
    """
    qg = state.qg
    grad = state.gradient
    direction = state.scaling @ grad
    if h_current is None:
        h_current = objective(model, qg, c, v_ref)
    return _backtrack(
        qg, direction, h_current,
        lambda trial: objective(model, trial, c, v_ref),
        lambda alpha, trial: cfg.delta * float(grad @ (qg - trial)),
        limits, cfg,
    )


def gp_step_size(model: LinearSensitivityModel, cfg: ControllerConfig) -> float:
    """GP 固定步長（預設 1/λ_max(H)）"""
    if cfg.gp_step is not None:
        return cfg.gp_step
    return 1.0 / model.lambda_max


# --------------------------------
# 離線求解
# --------------------------------
def _start_point(model: LinearSensitivityModel, limits: VarLimits, qg0) -> np.ndarray:
    if limits.size != model.m:
        raise DimensionError(f"上下限維度 {limits.size} 與模型 m={model.m} 不符")
    if qg0 is None:
        return project_box(np.zeros(model.m), limits)
    return project_box(qg0, limits)


def _iterate(
    method: str,
    model: LinearSensitivityModel,
    c,
    v_ref,
    limits: VarLimits,
    cfg: ControllerConfig,
    qg0,
    step: Callable[[int, np.ndarray, float], tuple],
) -> SolveResult:
    c = as_vector(c, model.m, "c")
    v_ref = as_vector(v_ref, model.m, "v_ref", broadcast=True)
    qg = _start_point(model, limits, qg0)
    h = objective(model, qg, c, v_ref)
    result = SolveResult(method=method, qg=qg, iterations=0, converged=False, objective=h, trace=[h])

    for iteration in range(1, cfg.max_iterations + 1):
        accepted, active_size = step(iteration, qg, h)
        change = float(np.max(np.abs(accepted.qg - qg))) if model.m else 0.0
        qg, h = accepted.qg, accepted.objective
        result.iterations = iteration
        result.trace.append(h)
        result.backtracks.append(accepted.backtracks)
        result.active_set_sizes.append(active_size)
        if accepted.exhausted:
            result.exhausted = True
            result.converged = True
            break
        if change < cfg.convergence_tol:
            result.converged = True
            break
        logger.debug(f"[{method}] iter {iteration}: h={h:.6e}, Δq={change:.2e}, α={accepted.alpha:g}")

    if not result.converged:
        logger.warning(f"⚠️ [{method}] 達到迭代上限 {cfg.max_iterations}，回傳目前最佳解")
    result.qg = qg
    result.objective = h
    return result


def pnm_solve(
    model: LinearSensitivityModel,
    c,
    v_ref,
    limits: VarLimits,
    cfg: Optional[ControllerConfig] = None,
    qg0=None,
    callback: Optional[IterationCallback] = None,
) -> SolveResult:
    """
    離線投影牛頓法

    Args:
        model: 線性模型
        c: 偏移向量 (m,)
        v_ref: 參考電壓平方
        limits: 無效功上下限
        cfg: 求解器參數
        qg0: 起始點（會先投影到上下限內），None 代表 0
        callback: 每次迭代後呼叫 callback(iteration, state, step)

    Returns:
        SolveResult（收斂條件 ‖Δqg‖∞ < convergence_tol）
    """
    cfg = cfg or ControllerConfig()
    c_vec = as_vector(c, model.m, "c")
    v_ref_vec = as_vector(v_ref, model.m, "v_ref", broadcast=True)

    def step(iteration, qg, h):
        grad = _model_gradient(model, qg, c_vec, v_ref_vec)
        state = prepare_state(model, qg, grad, limits, cfg, last_objective=h)
        accepted = armijo_step(state, model, c_vec, v_ref_vec, limits, cfg, h_current=h)
        if callback is not None:
            callback(iteration, state, accepted)
        return accepted, int(state.active_set.size)

    return _iterate("pnm", model, c_vec, v_ref_vec, limits, cfg, qg0, step)


def dsgp_solve(
    model: LinearSensitivityModel,
    c,
    v_ref,
    limits: VarLimits,
    cfg: Optional[ControllerConfig] = None,
    qg0=None,
    callback: Optional[IterationCallback] = None,
) -> SolveResult:
    """對角縮放梯度投影：D = diag(1/H_ii)，沿投影弧回溯"""
    cfg = cfg or ControllerConfig()
    c_vec = as_vector(c, model.m, "c")
    v_ref_vec = as_vector(v_ref, model.m, "v_ref", broadcast=True)

    def step(iteration, qg, h):
        grad = _model_gradient(model, qg, c_vec, v_ref_vec)
        state = diagonal_state(model, qg, grad, last_objective=h)
        accepted = projection_arc_step(state, model, c_vec, v_ref_vec, limits, cfg, h_current=h)
        if callback is not None:
            callback(iteration, state, accepted)
        return accepted, 0

    return _iterate("dsgp", model, c_vec, v_ref_vec, limits, cfg, qg0, step)


def gp_solve(
    model: LinearSensitivityModel,
    c,
    v_ref,
    limits: VarLimits,
    cfg: Optional[ControllerConfig] = None,
    qg0=None,
    callback: Optional[IterationCallback] = None,
) -> SolveResult:
    """梯度投影 qg⁺ = [qg − s∇h]，固定步長 s"""
    cfg = cfg or ControllerConfig()
    c_vec = as_vector(c, model.m, "c")
    v_ref_vec = as_vector(v_ref, model.m, "v_ref", broadcast=True)
    size = gp_step_size(model, cfg)

    def step(iteration, qg, h):
        grad = _model_gradient(model, qg, c_vec, v_ref_vec)
        trial = project_box(qg - size * grad, limits)
        accepted = ArmijoResult(
            qg=trial, alpha=size, backtracks=0,
            objective=objective(model, trial, c_vec, v_ref_vec),
        )
        if callback is not None:
            callback(iteration, diagonal_state(model, qg, grad, last_objective=h), accepted)
        return accepted, 0

    return _iterate("gp", model, c_vec, v_ref_vec, limits, cfg, qg0, step)


SOLVERS = {
    "pnm": pnm_solve,
    "dsgp": dsgp_solve,
    "gp": gp_solve,
}


def solve(method: str, *args, **kwargs) -> SolveResult:
    """依名稱呼叫求解器"""
    if method not in SOLVERS:
        raise ConfigError(f"未知的求解方法: {method}（可用: {', '.join(METHODS)}）")
    return SOLVERS[method](*args, **kwargs)


# --------------------------------
# 最適條件
# --------------------------------
def check_kkt(qg, grad, limits: VarLimits, tol: float = 1e-6, bound_tol: float = 1e-12) -> KktReport:
    """
    箱型限制的一階最適條件

    內點取 |∇h_i|，位於下限取 max(0, −∇h_i)，位於上限取 max(0, ∇h_i)；
    上下限相等的索引不計入

    Returns:
        KktReport(residual, passed)
    """
    qg = as_vector(qg, limits.size, "qg")
    grad = as_vector(grad, limits.size, "gradient")
    scale = bound_tol * np.maximum(1.0, np.abs(qg))
    at_lower = qg - limits.lower <= scale
    at_upper = limits.upper - qg <= scale
    fixed = limits.upper - limits.lower <= scale

    violation = np.abs(grad)
    violation = np.where(at_lower, np.maximum(0.0, -grad), violation)
    violation = np.where(at_upper, np.maximum(0.0, grad), violation)
    violation = np.where(fixed, 0.0, violation)
    residual = float(np.max(violation)) if violation.size else 0.0
    return KktReport(residual=residual, passed=residual <= tol)
