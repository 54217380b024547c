#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
線上回授電壓控制
每個控制週期：量測電壓 → 更新無效功上下限與 c(t) → 以量測梯度執行一次 PNM（或 DSGP / GP）迭代
"""

import json
from dataclasses import dataclass, field, asdict, replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from tqdm import tqdm

from .netmodel import NetworkModel, LinearSensitivityModel, compute_c
from .linflow import OperatingPoint
from .plant import PlantConfig, solve_nonlinear, measure_squared_voltages
from .pnm import (
    ControllerConfig,
    VarLimits,
    ArmijoResult,
    gradient,
    objective,
    project_box,
    prepare_state,
    diagonal_state,
    armijo_step,
    projection_arc_step,
    gp_step_size,
)
from .scenario import ScenarioSeries, ScenarioError, StepData
from .utils import setup_logger, ConfigError, ConvergenceError, as_vector

logger = setup_logger(__name__)

CONTROLLERS = ("pnm", "dsgp", "gp", "none")
DEFAULT_V_LOW = 0.95
DEFAULT_V_HIGH = 1.05


# --------------------------------
# 數據結構
# --------------------------------
@dataclass(frozen=True)
class SimulationConfig:
    """閉迴路模擬設定；noise_std 為 None 時使用情境設定"""
    controller: str = "pnm"
    controller_config: ControllerConfig = field(default_factory=ControllerConfig)
    plant: PlantConfig = field(default_factory=PlantConfig)
    v_ref: float = 1.0
    noise_std: Optional[float] = None
    stale_c: bool = False
    seed: int = 0
    show_progress: bool = False
    v_low: float = DEFAULT_V_LOW
    v_high: float = DEFAULT_V_HIGH

    def __post_init__(self):
        if self.controller not in CONTROLLERS:
            raise ConfigError(f"未知的控制器: {self.controller}（可用: {', '.join(CONTROLLERS)}）")
        if self.noise_std is not None and self.noise_std < 0:
            raise ConfigError("noise_std 不可為負")
        if not 0 < self.v_low < self.v_high:
            raise ConfigError("電壓上下限設定錯誤")


@dataclass(frozen=True, eq=False)
class StepInput:
    """單一控制週期的輸入：情境資料與量測"""
    time_s: float
    v0: np.ndarray
    p: np.ndarray
    qc: np.ndarray
    pv_real: np.ndarray
    capacity: np.ndarray
    v_measured: np.ndarray

    @classmethod
    def from_step(cls, data: StepData, capacity: np.ndarray, v_measured: np.ndarray) -> "StepInput":
        return cls(
            time_s=data.time_s, v0=data.v0, p=data.p, qc=data.qc, pv_real=data.pv_real,
            capacity=capacity, v_measured=v_measured,
        )


@dataclass(frozen=True, eq=False)
class StepRecord:
    """單一控制週期的紀錄"""
    time_s: float
    qg: np.ndarray
    v_measured: np.ndarray
    objective: float
    predicted_objective: float
    backtracks: int
    active_set_size: int
    lower: np.ndarray
    upper: np.ndarray
    exhausted: bool = False


@dataclass
class SimulationSummary:
    """模擬摘要指標"""
    controller: str
    steps: int
    time_average_objective: float
    v_min: float
    v_max: float
    steps_below: int
    steps_above: int
    violation_steps: int
    exhausted_steps: int
    plant_failures: int
    mean_backtracks: float

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass(eq=False)
class SimulationTrace:
    """
    閉迴路模擬軌跡（每列一個控制週期）

    qg 為該週期送出的命令（滿足該週期的上下限）；applied_qg 為量測當下生效的命令；
    v_true 為無雜訊的電壓平方，用於越限統計
    """
    controller: str
    node_labels: Tuple[str, ...]
    times: np.ndarray
    qg: np.ndarray
    applied_qg: np.ndarray
    v_measured: np.ndarray
    v_true: np.ndarray
    objective: np.ndarray
    predicted_objective: np.ndarray
    backtracks: np.ndarray
    active_set_size: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    exhausted: np.ndarray
    plant_ok: np.ndarray
    baseline: Optional["SimulationTrace"] = None

    @property
    def steps(self) -> int:
        return int(self.times.shape[0])

    @property
    def failed(self) -> bool:
        return bool(np.any(~self.plant_ok))

    def voltage_magnitudes(self) -> np.ndarray:
        return np.sqrt(np.clip(self.v_true, 0.0, None))

    def summary(self, v_low: float = DEFAULT_V_LOW, v_high: float = DEFAULT_V_HIGH) -> SimulationSummary:
        ok = self.plant_ok
        mags = self.voltage_magnitudes()[ok]
        below = np.any(mags < v_low, axis=1) if mags.size else np.zeros(0, dtype=bool)
        above = np.any(mags > v_high, axis=1) if mags.size else np.zeros(0, dtype=bool)
        return SimulationSummary(
            controller=self.controller,
            steps=self.steps,
            time_average_objective=float(np.mean(self.objective[ok])) if ok.any() else float("nan"),
            v_min=float(mags.min()) if mags.size else float("nan"),
            v_max=float(mags.max()) if mags.size else float("nan"),
            steps_below=int(below.sum()),
            steps_above=int(above.sum()),
            violation_steps=int((below | above).sum()),
            exhausted_steps=int(self.exhausted.sum()),
            plant_failures=int((~ok).sum()),
            mean_backtracks=float(np.mean(self.backtracks[ok])) if ok.any() else 0.0,
        )

    def to_frame(self) -> pd.DataFrame:
        """轉為欄位式表格"""
        mags = self.voltage_magnitudes()
        head = pd.DataFrame({
            "time_s": self.times,
            "objective": self.objective,
            "predicted_objective": self.predicted_objective,
            "backtracks": self.backtracks,
            "active_set_size": self.active_set_size,
            "v_min": mags.min(axis=1) if mags.size else np.full(self.steps, np.nan),
            "v_max": mags.max(axis=1) if mags.size else np.full(self.steps, np.nan),
            "exhausted": self.exhausted,
            "plant_ok": self.plant_ok,
        })
        blocks = [head]
        for prefix, values in (
            ("qg_", self.qg),
            ("v_", self.v_measured),
            ("q_lower_", self.lower),
            ("q_upper_", self.upper),
        ):
            blocks.append(pd.DataFrame(values, columns=[f"{prefix}{label}" for label in self.node_labels]))
        return pd.concat(blocks, axis=1)


# --------------------------------
# 線上控制
# --------------------------------
def estimate_var_limits(capacity, pv_real, tol: float = 1e-9) -> VarLimits:
    """
    由逆變器容量與 PV 實功估計無效功上下限 ±sqrt(S² − P²)

    Args:
        capacity: 逆變器容量 (m,)，非 DER 節點為 0
        pv_real: PV 實功 (m,)

    Returns:
        VarLimits
    """
    capacity = np.atleast_1d(np.asarray(capacity, dtype=float))
    pv_real = as_vector(pv_real, capacity.shape[0], "pv_real")
    if np.any(pv_real < -tol):
        raise ScenarioError("PV 實功不可為負")
    if np.any(pv_real > capacity + tol):
        idx = int(np.argmax(pv_real - capacity))
        raise ScenarioError(f"PV 實功 {pv_real[idx]:.4f} 超過容量 {capacity[idx]:.4f} (node {idx})")
    pv_real = np.clip(pv_real, 0.0, capacity)
    upper = np.sqrt(np.clip(capacity ** 2 - pv_real ** 2, 0.0, None))
    return VarLimits(lower=-upper, upper=upper)


def feedback_gradient(model: LinearSensitivityModel, v_measured, v_ref) -> np.ndarray:
    """以量測電壓取代模型電壓的梯度 Mᵀ(v^m − v_ref)"""
    return gradient(model, v_measured, v_ref)


def anchored_offset(model: LinearSensitivityModel, qg, v_measured) -> np.ndarray:
    """
    以量測修正的偏移向量 v^m − M·qg

    代入 ĥ 後，模型在 qg 的電壓等於量測值，線搜尋的起點目標與梯度皆與量測一致；
    c(t) 與量測的差即為線性化誤差
    """
    qg = as_vector(qg, model.m, "qg")
    return as_vector(v_measured, model.m, "v_measured") - model.m_matrix @ qg


def online_step(
    qg,
    model: LinearSensitivityModel,
    step: StepInput,
    cfg: SimulationConfig,
    c: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, StepRecord]:
    """
    執行一個控制週期

    1. 由目前 (v0, p, qc) 計算 c(t)（或使用傳入的 c）
    2. 更新上下限；若上下限縮小，先將目前命令投影進去
    3. 以量測電壓計算梯度、主動集合與縮放矩陣
    4. 線搜尋使用以量測為錨的模型（anchored_offset），起點目標即量測的 h
    5. 紀錄中的 predicted_objective 為以 c(t) 預測的 ĥ(qg⁺)

    Args:
        qg: 目前生效的命令 (m,)
        model: 線性模型
        step: 情境資料與量測
        cfg: 模擬設定
        c: 指定的偏移向量（None 時由 step 計算）

    Returns:
        (下一個命令, StepRecord)
    """
    m = model.m
    ccfg = cfg.controller_config
    if c is None:
        c = compute_c(model, step.v0, step.p, step.qc)
    c = as_vector(c, m, "c")
    v_ref = as_vector(cfg.v_ref, m, "v_ref", broadcast=True)
    v_measured = as_vector(step.v_measured, m, "v_measured")

    limits = estimate_var_limits(step.capacity, step.pv_real)
    current = project_box(qg, limits)
    residual = v_measured - v_ref
    h_measured = 0.5 * float(residual @ residual)
    grad = feedback_gradient(model, v_measured, v_ref)

    # 線搜尋模型以量測點為錨：ĥ(current) = h 且 ∇ĥ(current) = Mᵀ(v^m − v_ref)
    c_anchor = anchored_offset(model, current, v_measured)

    active_size = 0
    if cfg.controller == "none":
        accepted = ArmijoResult(
            qg=project_box(np.zeros(m), limits), alpha=0.0, backtracks=0, objective=h_measured,
        )
    elif cfg.controller == "pnm":
        state = prepare_state(model, current, grad, limits, ccfg, last_objective=h_measured)
        accepted = armijo_step(state, model, c_anchor, v_ref, limits, ccfg, h_current=h_measured)
        active_size = int(state.active_set.size)
    elif cfg.controller == "dsgp":
        state = diagonal_state(model, current, grad, last_objective=h_measured)
        accepted = projection_arc_step(state, model, c_anchor, v_ref, limits, ccfg, h_current=h_measured)
    else:
        size = gp_step_size(model, ccfg)
        trial = project_box(current - size * grad, limits)
        accepted = ArmijoResult(qg=trial, alpha=size, backtracks=0, objective=h_measured)

    record = StepRecord(
        time_s=step.time_s,
        qg=accepted.qg,
        v_measured=v_measured,
        objective=h_measured,
        predicted_objective=objective(model, accepted.qg, c, v_ref),
        backtracks=accepted.backtracks,
        active_set_size=active_size,
        lower=limits.lower,
        upper=limits.upper,
        exhausted=accepted.exhausted,
    )
    return accepted.qg, record


def run_simulation(
    net: NetworkModel,
    model: LinearSensitivityModel,
    scenario: ScenarioSeries,
    cfg: Optional[SimulationConfig] = None,
    with_baseline: bool = False,
) -> SimulationTrace:
    """
    閉迴路模擬：每個控制週期先以目前命令求解非線性潮流、量測，再執行 online_step

    Args:
        net: 網路
        model: 線性模型
        scenario: 情境
        cfg: 模擬設定
        with_baseline: 是否同時計算 qg ≡ 0 的無控制基準

    Returns:
        SimulationTrace（潮流失敗的週期保留原命令並標記 plant_ok=False）
    """
    cfg = cfg or SimulationConfig()
    scenario.check_network(net)
    noise_std = scenario.measurement_noise_std if cfg.noise_std is None else cfg.noise_std
    rng = np.random.default_rng(cfg.seed)
    m = net.m
    times = scenario.control_times()
    n_steps = times.shape[0]

    qg = np.zeros(m)
    previous: Optional[StepData] = None
    records: List[Optional[StepRecord]] = []
    applied = np.zeros((n_steps, m))
    v_true = np.full((n_steps, m), np.nan)
    plant_ok = np.ones(n_steps, dtype=bool)

    iterator = tqdm(
        enumerate(times), total=n_steps, desc=f"模擬 [{cfg.controller}]",
        disable=not cfg.show_progress,
    )
    for k, t in iterator:
        data = scenario.at(t)
        applied[k] = qg
        point = OperatingPoint(v0=data.v0, p=data.p, qc=data.qc)
        try:
            solution = solve_nonlinear(net, point, qg, cfg.plant)
        except ConvergenceError as e:
            logger.warning(f"⚠️ t={t:.1f}s 潮流失敗，維持原命令: {e}")
            plant_ok[k] = False
            records.append(None)
            previous = data
            continue

        v_true[k] = solution.squared_magnitudes
        v_measured = measure_squared_voltages(solution, noise_std, rng)
        c = None
        if cfg.stale_c and previous is not None:
            c = compute_c(model, previous.v0, previous.p, previous.qc)
        step = StepInput.from_step(data, scenario.inverter_capacity, v_measured)
        qg, record = online_step(qg, model, step, cfg, c=c)
        records.append(record)
        previous = data

    trace = _assemble_trace(cfg.controller, net.node_labels, times, records, applied, v_true, plant_ok)
    summary = trace.summary(cfg.v_low, cfg.v_high)
    logger.info(
        f"✅ 模擬完成 [{cfg.controller}]: {n_steps} 週期, 平均目標 {summary.time_average_objective:.6g}, "
        f"越限 {summary.violation_steps} 步"
    )
    if trace.failed:
        logger.warning(f"⚠️ {summary.plant_failures} 個週期潮流失敗")

    if with_baseline and cfg.controller != "none":
        trace.baseline = run_simulation(net, model, scenario, replace(cfg, controller="none"))
    return trace


def _assemble_trace(controller, labels, times, records, applied, v_true, plant_ok) -> SimulationTrace:
    n_steps = len(records)
    m = applied.shape[1]
    qg = np.array(applied, copy=True)
    v_measured = np.full((n_steps, m), np.nan)
    lower = np.full((n_steps, m), np.nan)
    upper = np.full((n_steps, m), np.nan)
    obj = np.full(n_steps, np.nan)
    predicted = np.full(n_steps, np.nan)
    backtracks = np.zeros(n_steps, dtype=int)
    active = np.zeros(n_steps, dtype=int)
    exhausted = np.zeros(n_steps, dtype=bool)
    for k, record in enumerate(records):
        if record is None:
            continue
        qg[k] = record.qg
        v_measured[k] = record.v_measured
        lower[k] = record.lower
        upper[k] = record.upper
        obj[k] = record.objective
        predicted[k] = record.predicted_objective
        backtracks[k] = record.backtracks
        active[k] = record.active_set_size
        exhausted[k] = record.exhausted
    return SimulationTrace(
        controller=controller,
        node_labels=tuple(labels),
        times=np.asarray(times, dtype=float),
        qg=qg,
        applied_qg=applied,
        v_measured=v_measured,
        v_true=v_true,
        objective=obj,
        predicted_objective=predicted,
        backtracks=backtracks,
        active_set_size=active,
        lower=lower,
        upper=upper,
        exhausted=exhausted,
        plant_ok=np.asarray(plant_ok, dtype=bool),
    )


# --------------------------------
# 輸出
# --------------------------------
def write_trace(
    trace: SimulationTrace,
    out_dir: Union[str, Path],
    v_low: float = DEFAULT_V_LOW,
    v_high: float = DEFAULT_V_HIGH,
) -> Dict[str, Path]:
    """
    寫出 trace.csv 與 summary.json（含基準時另寫 baseline_trace.csv）

    Returns:
        {名稱: 路徑}
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {"trace": out_dir / "trace.csv", "summary": out_dir / "summary.json"}
    trace.to_frame().to_csv(paths["trace"], index=False)

    summary = {"controlled": trace.summary(v_low, v_high).to_dict()}
    if trace.baseline is not None:
        paths["baseline"] = out_dir / "baseline_trace.csv"
        trace.baseline.to_frame().to_csv(paths["baseline"], index=False)
        summary["baseline"] = trace.baseline.summary(v_low, v_high).to_dict()
    paths["summary"].write_text(json.dumps(summary, ensure_ascii=False, indent=2), encoding="utf-8")
    logger.info(f"💾 軌跡已儲存至: {out_dir}")
    return paths
