#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
慢時間尺度的離散設備排程（OLTC 分接頭與電容器組）
以滾動時域 MPC 描述，並在小規模下以完整列舉求解：
每個離散狀態的連續子問題（DER 無效功）交由 PNM 以加權目標求解
"""

import dataclasses
import itertools
from dataclasses import dataclass
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from .netmodel import NetworkModel, LinearSensitivityModel, compute_c
from .pnm import ControllerConfig, VarLimits, pnm_solve, objective
from .scenario import ScenarioSeries
from .online import estimate_var_limits
from .utils import setup_logger, ConfigError, DataError, as_vector

logger = setup_logger(__name__)

DEFAULT_TAP_STEP = 0.00625
DEFAULT_ENUMERATION_CAP = 200_000
DEFAULT_WEIGHTS = {"v": 1.0, "tap": 1e-4, "cb": 1e-4}

# 連續子問題需要比線上控制更嚴格的收斂門檻
INNER_CONTROLLER = ControllerConfig(convergence_tol=1e-11)


class EnumerationCapError(ConfigError):
    """離散決策空間超過列舉上限"""
    pass


class DeviceRangeError(DataError):
    """設備狀態超出允許範圍"""
    pass


# --------------------------------
# 數據結構
# --------------------------------
@dataclass(frozen=True, eq=False)
class DiscreteDeviceConfig:
    """
    離散設備參數

    分接頭相關欄位長度為 n0（首端相數），電容器相關欄位長度為 m；
    cb_max 為 0 的節點沒有電容器
    """
    tap_step: np.ndarray
    tap_min: np.ndarray
    tap_max: np.ndarray
    tap_change_limit: int
    cb_unit_var: np.ndarray
    cb_max: np.ndarray
    cb_switch_limit: int
    weight_v: np.ndarray
    weight_tap: np.ndarray
    weight_cb: np.ndarray
    initial_tap: Optional[np.ndarray] = None
    initial_cb: Optional[np.ndarray] = None

    def __post_init__(self):
        tap_step = np.atleast_1d(np.asarray(self.tap_step, dtype=float))
        n0 = tap_step.shape[0]
        tap_min = np.atleast_1d(np.asarray(self.tap_min)).astype(int)
        tap_max = np.atleast_1d(np.asarray(self.tap_max)).astype(int)
        if tap_min.shape != (n0,) or tap_max.shape != (n0,):
            raise ConfigError("分接頭範圍維度需與 tap_step 相同")
        if np.any(tap_min > tap_max):
            raise ConfigError("分接頭範圍為空")
        if np.any(tap_step <= 0):
            raise ConfigError("tap_step 必須為正")

        cb_unit = np.atleast_1d(np.asarray(self.cb_unit_var, dtype=float))
        m = cb_unit.shape[0]
        cb_max = np.atleast_1d(np.asarray(self.cb_max)).astype(int)
        if cb_max.shape != (m,):
            raise ConfigError("cb_max 維度需與 cb_unit_var 相同")
        if np.any(cb_max < 0) or np.any(cb_unit < 0):
            raise ConfigError("電容器組數與單位容量不可為負")
        if self.tap_change_limit < 0 or self.cb_switch_limit < 0:
            raise ConfigError("切換次數上限不可為負")

        weight_v = as_vector(self.weight_v, m, "weight_v", broadcast=True)
        weight_tap = as_vector(self.weight_tap, n0, "weight_tap", broadcast=True)
        weight_cb = as_vector(self.weight_cb, m, "weight_cb", broadcast=True)
        if np.any(weight_v <= 0) or np.any(weight_tap <= 0) or np.any(weight_cb <= 0):
            raise ConfigError("權重必須為正")

        initial_tap = np.zeros(n0, dtype=int) if self.initial_tap is None \
            else np.atleast_1d(np.asarray(self.initial_tap)).astype(int)
        initial_cb = np.zeros(m, dtype=int) if self.initial_cb is None \
            else np.atleast_1d(np.asarray(self.initial_cb)).astype(int)
        if initial_tap.shape != (n0,) or initial_cb.shape != (m,):
            raise ConfigError("初始設備狀態維度錯誤")

        for name, value in (
            ("tap_step", tap_step), ("tap_min", tap_min), ("tap_max", tap_max),
            ("cb_unit_var", cb_unit), ("cb_max", cb_max),
            ("weight_v", weight_v), ("weight_tap", weight_tap), ("weight_cb", weight_cb),
            ("initial_tap", initial_tap), ("initial_cb", initial_cb),
        ):
            object.__setattr__(self, name, value)

    @property
    def n0(self) -> int:
        return self.tap_step.shape[0]

    @property
    def m(self) -> int:
        return self.cb_unit_var.shape[0]

    @property
    def cb_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.cb_max > 0)

    def tap_states(self) -> List[Tuple[int, ...]]:
        return list(itertools.product(*[range(lo, hi + 1) for lo, hi in zip(self.tap_min, self.tap_max)]))

    def cb_states(self) -> List[Tuple[int, ...]]:
        return list(itertools.product(*[range(0, int(self.cb_max[i]) + 1) for i in self.cb_nodes]))


@dataclass(frozen=True)
class MpcSettings:
    enumeration_cap: int = DEFAULT_ENUMERATION_CAP
    tie_tol: float = 1e-12
    controller: ControllerConfig = INNER_CONTROLLER
    show_progress: bool = False

    def __post_init__(self):
        if self.enumeration_cap < 1:
            raise ConfigError("enumeration_cap 必須 ≥ 1")


@dataclass(frozen=True, eq=False)
class MpcForecast:
    """單一時域步的預測：實功、無效功負載與 DER 上下限"""
    p: np.ndarray
    ql: np.ndarray
    limits: VarLimits


@dataclass(frozen=True, eq=False)
class MpcProblem:
    horizon_steps: int
    period_s: float
    forecasts: Tuple[MpcForecast, ...]
    initial_tap: np.ndarray
    initial_cb: np.ndarray
    v_ref: float = 1.0

    def __post_init__(self):
        if self.horizon_steps < 1:
            raise ConfigError("horizon_steps 必須 ≥ 1")
        if len(self.forecasts) != self.horizon_steps:
            raise ConfigError(f"預測長度 {len(self.forecasts)} 與時域 {self.horizon_steps} 不符")
        object.__setattr__(self, "forecasts", tuple(self.forecasts))
        object.__setattr__(self, "initial_tap", np.atleast_1d(np.asarray(self.initial_tap)).astype(int))
        object.__setattr__(self, "initial_cb", np.atleast_1d(np.asarray(self.initial_cb)).astype(int))


@dataclass(eq=False)
class DiscreteSchedule:
    """MPC 排程結果"""
    n_tap: np.ndarray
    n_cb: np.ndarray
    qg: np.ndarray
    objective: float
    voltage_cost: float = 0.0
    switching_cost: float = 0.0
    movements: int = 0
    trajectories_evaluated: int = 0

    @property
    def horizon_steps(self) -> int:
        return self.n_tap.shape[0]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "n_tap": self.n_tap.tolist(),
            "n_cb": self.n_cb.tolist(),
            "qg": self.qg.tolist(),
            "objective": self.objective,
            "voltage_cost": self.voltage_cost,
            "switching_cost": self.switching_cost,
            "movements": self.movements,
            "trajectories_evaluated": self.trajectories_evaluated,
        }


@dataclass(frozen=True, eq=False)
class DeviceCommand:
    n_tap: np.ndarray
    n_cb: np.ndarray


# --------------------------------
# 設備模型
# --------------------------------
def oltc_squared_voltage(n_tap, tap_step, exact: bool = False) -> np.ndarray:
    """
    首端電壓平方

    線性形式 1 + 2 n Δtap；exact=True 時回傳 (1 + n Δtap)²

    Args:
        n_tap: 各相分接頭位置
        tap_step: 各相 Δtap
    """
    n_tap = np.atleast_1d(np.asarray(n_tap, dtype=float))
    tap_step = np.broadcast_to(np.asarray(tap_step, dtype=float), n_tap.shape)
    ratio = n_tap * tap_step
    if exact:
        return (1.0 + ratio) ** 2
    return 1.0 + 2.0 * ratio


def oltc_linearization_error(n_tap, tap_step) -> np.ndarray:
    """線性化誤差 (n Δtap)²"""
    return oltc_squared_voltage(n_tap, tap_step, exact=True) - oltc_squared_voltage(n_tap, tap_step)


def cb_reactive(n_cb, unit, cb_max=None) -> np.ndarray:
    """
    電容器組無效功 q^cb = diag(n_cb) Δq^cb

    Args:
        n_cb: 各節點投入組數
        unit: 各節點單位容量
        cb_max: 各節點組數上限（None 不檢查上限）
    """
    n_cb = np.atleast_1d(np.asarray(n_cb))
    unit = np.atleast_1d(np.asarray(unit, dtype=float))
    if n_cb.shape != unit.shape:
        raise DeviceRangeError(f"n_cb 維度 {n_cb.shape} 與單位容量 {unit.shape} 不符")
    if np.any(n_cb < 0):
        raise DeviceRangeError("電容器組數不可為負")
    if cb_max is not None and np.any(n_cb > np.asarray(cb_max)):
        raise DeviceRangeError("電容器組數超過上限")
    return n_cb.astype(float) * unit


def weighted_model(model: LinearSensitivityModel, weight_v) -> LinearSensitivityModel:
    """
    以 C_v^{1/2} 縮放模型，使 ½‖v − v_ref‖²_{C_v} 成為一般的最小平方目標

    縮放後梯度為 Mᵀ C_v (v − v_ref)，Hessian 為 Mᵀ C_v M
    """
    scale = np.sqrt(as_vector(weight_v, model.m, "weight_v", broadcast=True))
    m_matrix = scale[:, None] * model.m_matrix
    hessian = m_matrix.T @ m_matrix
    return dataclasses.replace(model, m_matrix=m_matrix, hessian=0.5 * (hessian + hessian.T))


def _as_int_vector(value, size: int, name: str) -> np.ndarray:
    arr = np.asarray(value)
    if arr.ndim == 0:
        return np.full(size, int(arr))
    arr = arr.reshape(-1).astype(int)
    if arr.shape != (size,):
        raise DeviceRangeError(f"{name} 需為純量或長度 {size}")
    return arr


def devices_from_network(
    net: NetworkModel,
    weights: Optional[Mapping[str, Any]] = None,
) -> DiscreteDeviceConfig:
    """
    由網路文件的 oltc / capacitor_banks 區段建立設備參數

    沒有 oltc 區段時分接頭固定在 0；權重預設為 DEFAULT_WEIGHTS
    """
    weights = {**DEFAULT_WEIGHTS, **(weights or {})}
    n0, m = net.n0, net.m
    oltc = net.oltc or {}
    try:
        tap_step = np.broadcast_to(np.asarray(oltc.get("tap_step", DEFAULT_TAP_STEP), dtype=float), (n0,)).copy()
        tap_min = _as_int_vector(oltc.get("tap_min", 0), n0, "tap_min")
        tap_max = _as_int_vector(oltc.get("tap_max", 0), n0, "tap_max")
        initial_tap = _as_int_vector(oltc.get("initial_tap", 0), n0, "initial_tap")
        tap_limit = int(oltc.get("tap_change_limit", 1))
    except (TypeError, ValueError) as e:
        raise DeviceRangeError(f"oltc 區段格式錯誤: {e}") from e

    cb_unit = np.zeros(m)
    cb_max = np.zeros(m, dtype=int)
    initial_cb = np.zeros(m, dtype=int)
    switch_limits = []
    for bank in net.capacitor_banks:
        try:
            bus = int(bank["bus"])
            phases = bank.get("phases") or "".join(net.bus_by_id[bus].phases)
            unit = float(bank["unit_var_pu"])
            units = int(bank["max_units"])
            initial = int(bank.get("initial_units", 0))
            switch_limits.append(int(bank.get("switch_limit", 1)))
        except (KeyError, TypeError, ValueError) as e:
            raise DeviceRangeError(f"capacitor_banks 項目格式錯誤: {bank!r}") from e
        for phase in phases:
            idx = net.phase_node_index.get((bus, phase))
            if idx is None:
                raise DeviceRangeError(f"電容器組位於不存在的相節點 {bus}.{phase}")
            cb_unit[idx] = unit
            cb_max[idx] = units
            initial_cb[idx] = initial

    if np.any(initial_tap < tap_min) or np.any(initial_tap > tap_max):
        raise DeviceRangeError("初始分接頭位置超出範圍")
    if np.any(initial_cb > cb_max) or np.any(initial_cb < 0):
        raise DeviceRangeError("初始電容器組數超出範圍")

    return DiscreteDeviceConfig(
        tap_step=tap_step,
        tap_min=tap_min,
        tap_max=tap_max,
        tap_change_limit=tap_limit,
        cb_unit_var=cb_unit,
        cb_max=cb_max,
        cb_switch_limit=min(switch_limits) if switch_limits else 1,
        weight_v=weights["v"],
        weight_tap=weights["tap"],
        weight_cb=weights["cb"],
        initial_tap=initial_tap,
        initial_cb=initial_cb,
    )


def problem_from_scenario(
    scenario: ScenarioSeries,
    devices: DiscreteDeviceConfig,
    horizon_steps: int,
    period_s: float,
    start_s: float = 0.0,
    initial_tap=None,
    initial_cb=None,
    v_ref: float = 1.0,
) -> MpcProblem:
    """以情境資料（零階保持）作為 MPC 預測"""
    forecasts = []
    for k in range(horizon_steps):
        data = scenario.at(start_s + k * period_s)
        forecasts.append(MpcForecast(
            p=data.p.copy(),
            ql=data.qc.copy(),
            limits=estimate_var_limits(scenario.inverter_capacity, data.pv_real),
        ))
    return MpcProblem(
        horizon_steps=horizon_steps,
        period_s=period_s,
        forecasts=tuple(forecasts),
        initial_tap=devices.initial_tap if initial_tap is None else initial_tap,
        initial_cb=devices.initial_cb if initial_cb is None else initial_cb,
        v_ref=v_ref,
    )


# --------------------------------
# 列舉求解
# --------------------------------
def _switching_cost(prev_tap, tap, prev_cb, cb, devices: DiscreteDeviceConfig) -> Tuple[float, int]:
    d_tap = tap - prev_tap
    d_cb = cb - prev_cb
    cost = 0.5 * float(d_tap @ (devices.weight_tap * d_tap)) + 0.5 * float(d_cb @ (devices.weight_cb * d_cb))
    return cost, int(np.abs(d_tap).sum() + np.abs(d_cb).sum())


def _feasible_move(prev_tap, tap, prev_cb, cb, devices: DiscreteDeviceConfig) -> bool:
    return bool(
        np.all(np.abs(tap - prev_tap) <= devices.tap_change_limit)
        and np.all(np.abs(cb - prev_cb) <= devices.cb_switch_limit)
    )


def solve_mpc(
    model: LinearSensitivityModel,
    problem: MpcProblem,
    devices: DiscreteDeviceConfig,
    settings: Optional[MpcSettings] = None,
) -> DiscreteSchedule:
    """
    列舉所有可行的離散軌跡，回傳全域最小者

    每個 (時域步, 離散狀態) 的連續子問題只求解一次並快取；
    同分時選擇設備動作較少者，再依列舉順序（字典序）

    Args:
        model: 線性模型
        problem: 時域與預測
        devices: 設備參數
        settings: 列舉上限與子問題求解設定

    Returns:
        DiscreteSchedule
    """
    settings = settings or MpcSettings()
    if devices.m != model.m or devices.n0 != model.n0:
        raise DataError("設備參數維度與模型不符")

    taps = [np.array(t, dtype=int) for t in devices.tap_states()]
    cb_nodes = devices.cb_nodes
    cbs = []
    for combo in devices.cb_states():
        full = np.zeros(devices.m, dtype=int)
        full[cb_nodes] = combo
        cbs.append(full)
    states = [(tap, cb) for tap in taps for cb in cbs]
    total = len(states) ** problem.horizon_steps
    if total > settings.enumeration_cap:
        raise EnumerationCapError(
            f"離散決策空間 {len(states)}^{problem.horizon_steps} = {total} 超過上限 {settings.enumeration_cap}"
        )

    wmodel = weighted_model(model, devices.weight_v)
    scale = np.sqrt(devices.weight_v)
    v_ref = as_vector(problem.v_ref, model.m, "v_ref", broadcast=True)
    stage_cache: Dict[Tuple[int, int], Tuple[float, np.ndarray]] = {}

    def stage(k: int, s: int) -> Tuple[float, np.ndarray]:
        key = (k, s)
        if key not in stage_cache:
            tap, cb = states[s]
            forecast = problem.forecasts[k]
            v0 = oltc_squared_voltage(tap, devices.tap_step)
            qc = forecast.ql - cb_reactive(cb, devices.cb_unit_var, devices.cb_max)
            c = compute_c(model, v0, forecast.p, qc)
            result = pnm_solve(wmodel, scale * c, scale * v_ref, forecast.limits, settings.controller)
            stage_cache[key] = (result.objective, result.qg)
        return stage_cache[key]

    best = None
    evaluated = 0
    iterator = tqdm(
        itertools.product(range(len(states)), repeat=problem.horizon_steps),
        total=total, desc="MPC 列舉", disable=not settings.show_progress,
    )
    for trajectory in iterator:
        prev_tap, prev_cb = problem.initial_tap, problem.initial_cb
        switching, moves, feasible = 0.0, 0, True
        for s in trajectory:
            tap, cb = states[s]
            if not _feasible_move(prev_tap, tap, prev_cb, cb, devices):
                feasible = False
                break
            cost, count = _switching_cost(prev_tap, tap, prev_cb, cb, devices)
            switching += cost
            moves += count
            prev_tap, prev_cb = tap, cb
        if not feasible:
            continue
        evaluated += 1
        voltage = sum(stage(k, s)[0] for k, s in enumerate(trajectory))
        total_cost = voltage + switching
        if best is None:
            better = True
        else:
            gap = total_cost - best[0]
            tol = settings.tie_tol * max(1.0, abs(best[0]))
            better = gap < -tol or (abs(gap) <= tol and moves < best[3])
        if better:
            best = (total_cost, voltage, switching, moves, trajectory)

    if best is None:
        raise DeviceRangeError("沒有任何可行的離散軌跡（請檢查初始狀態與切換上限）")

    total_cost, voltage, switching, moves, trajectory = best
    schedule = DiscreteSchedule(
        n_tap=np.array([states[s][0] for s in trajectory]),
        n_cb=np.array([states[s][1] for s in trajectory]),
        qg=np.array([stage(k, s)[1] for k, s in enumerate(trajectory)]),
        objective=float(total_cost),
        voltage_cost=float(voltage),
        switching_cost=float(switching),
        movements=int(moves),
        trajectories_evaluated=evaluated,
    )
    logger.info(
        f"✅ MPC 完成: 評估 {evaluated}/{total} 條軌跡, 目標 {schedule.objective:.6g}, "
        f"首步分接頭 {schedule.n_tap[0].tolist()}"
    )
    return schedule


def apply_receding_horizon(schedule: DiscreteSchedule) -> DeviceCommand:
    """只執行第一步的設備命令"""
    return DeviceCommand(n_tap=schedule.n_tap[0].copy(), n_cb=schedule.n_cb[0].copy())


def schedule_violations(
    problem: MpcProblem,
    devices: DiscreteDeviceConfig,
    schedule: DiscreteSchedule,
    tol: float = 1e-9,
) -> List[str]:
    """
    逐項檢查排程是否滿足 DER 上下限、分接頭與電容器組的範圍及切換限制

    Returns:
        違反項目的描述（空列表代表全部滿足）
    """
    problems: List[str] = []
    if schedule.horizon_steps != problem.horizon_steps:
        problems.append("排程長度與時域不符")
        return problems
    prev_tap, prev_cb = problem.initial_tap, problem.initial_cb
    for k in range(problem.horizon_steps):
        tap, cb, qg = schedule.n_tap[k], schedule.n_cb[k], schedule.qg[k]
        limits = problem.forecasts[k].limits
        if not limits.contains(qg, tol):
            problems.append(f"step {k}: qg 超出上下限")
        if np.any(tap < devices.tap_min) or np.any(tap > devices.tap_max):
            problems.append(f"step {k}: 分接頭超出範圍")
        if np.any(np.abs(tap - prev_tap) > devices.tap_change_limit):
            problems.append(f"step {k}: 分接頭變動超過上限")
        if np.any(cb < 0) or np.any(cb > devices.cb_max):
            problems.append(f"step {k}: 電容器組數超出範圍")
        if np.any(np.abs(cb - prev_cb) > devices.cb_switch_limit):
            problems.append(f"step {k}: 電容器組切換超過上限")
        prev_tap, prev_cb = tap, cb
    return problems


def schedule_objective(
    model: LinearSensitivityModel,
    problem: MpcProblem,
    devices: DiscreteDeviceConfig,
    n_tap: Sequence,
    n_cb: Sequence,
    qg: Sequence,
) -> float:
    """依給定的設備軌跡與 qg 計算加權目標（供獨立驗證使用）"""
    wmodel = weighted_model(model, devices.weight_v)
    scale = np.sqrt(devices.weight_v)
    v_ref = as_vector(problem.v_ref, model.m, "v_ref", broadcast=True)
    total = 0.0
    prev_tap, prev_cb = problem.initial_tap, problem.initial_cb
    for k, forecast in enumerate(problem.forecasts):
        tap = np.asarray(n_tap[k], dtype=int)
        cb = np.asarray(n_cb[k], dtype=int)
        v0 = oltc_squared_voltage(tap, devices.tap_step)
        c = compute_c(model, v0, forecast.p, forecast.ql - cb_reactive(cb, devices.cb_unit_var))
        total += objective(wmodel, qg[k], scale * c, scale * v_ref)
        total += _switching_cost(prev_tap, tap, prev_cb, cb, devices)[0]
        prev_tap, prev_cb = tap, cb
    return total


def run_receding_horizon(
    model: LinearSensitivityModel,
    scenario: ScenarioSeries,
    devices: DiscreteDeviceConfig,
    horizon_steps: int,
    period_s: float,
    periods: int,
    settings: Optional[MpcSettings] = None,
) -> List[Tuple[DiscreteSchedule, DeviceCommand]]:
    """
    滾動時域：每個週期以實際執行後的設備狀態重新求解，時間窗向前平移一個週期

    Returns:
        每個週期的 (排程, 執行的命令)
    """
    results = []
    tap, cb = devices.initial_tap, devices.initial_cb
    for k in range(periods):
        problem = problem_from_scenario(
            scenario, devices, horizon_steps, period_s,
            start_s=k * period_s, initial_tap=tap, initial_cb=cb,
        )
        schedule = solve_mpc(model, problem, devices, settings)
        command = apply_receding_horizon(schedule)
        results.append((schedule, command))
        tap, cb = command.n_tap, command.n_cb
    return results
