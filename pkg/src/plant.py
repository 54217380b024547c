#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
非線性多相潮流（電流式前推回代）
在閉迴路模擬中扮演實際電網，提供回授用的電壓量測
"""

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .netmodel import NetworkModel, ROTATION, PHASE_INDEX
from .linflow import OperatingPoint
from .utils import setup_logger, ConfigError, ConvergenceError, as_vector

logger = setup_logger(__name__)

DEFAULT_TOLERANCE = 1e-8
DEFAULT_MAX_ITERATIONS = 200

# 電壓幅值低於此值視為崩潰
COLLAPSE_VOLTAGE = 1e-6


class PlantConvergenceError(ConvergenceError):
    """前推回代在迭代上限內未收斂（通常代表負載不可行）"""
    pass


class VoltageCollapseError(ConvergenceError):
    """迭代中出現零電壓"""
    pass


@dataclass(frozen=True)
class PlantConfig:
    """非線性潮流設定"""
    tolerance: float = DEFAULT_TOLERANCE
    max_iterations: int = DEFAULT_MAX_ITERATIONS
    noise_std: float = 0.0

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ConfigError(f"tolerance 必須為正: {self.tolerance}")
        if self.max_iterations < 1:
            raise ConfigError(f"max_iterations 必須 ≥ 1: {self.max_iterations}")
        if self.noise_std < 0:
            raise ConfigError(f"noise_std 不可為負: {self.noise_std}")


@dataclass(eq=False)
class PlantSolution:
    """潮流解"""
    complex_voltages: np.ndarray
    squared_magnitudes: np.ndarray
    iterations: int
    residual: float
    residual_history: List[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "squared_magnitudes": self.squared_magnitudes.tolist(),
            "magnitudes": np.abs(self.complex_voltages).tolist(),
            "angles_deg": np.degrees(np.angle(self.complex_voltages)).tolist(),
            "iterations": self.iterations,
            "residual": self.residual,
        }


def root_phasors(net: NetworkModel, v0) -> np.ndarray:
    """首端各相電壓相量 sqrt(v0)·(0°, −120°, +120°)"""
    v0 = as_vector(v0, net.n0, "v0", broadcast=True)
    angles = ROTATION[[PHASE_INDEX[ph] for ph in net.root_phases]]
    return np.sqrt(v0) * angles


def solve_nonlinear(
    net: NetworkModel,
    point: OperatingPoint,
    qg,
    cfg: Optional[PlantConfig] = None,
) -> PlantSolution:
    """
    以前推回代求解定功率負載的非線性潮流

    回推：由葉往根累加注入電流；前推：由根往葉更新 V_j = V_i − Z_ij J_ij

    Args:
        net: 網路
        point: 首端電壓與負載
        qg: DER 無效功 (m,)；淨無效功消耗為 qc − qg
        cfg: 容差與迭代上限

    Returns:
        PlantSolution
    """
    cfg = cfg or PlantConfig()
    qg = as_vector(qg, net.m, "qg")
    p = as_vector(point.p, net.m, "p")
    qc = as_vector(point.qc, net.m, "qc")
    demand = p + 1j * (qc - qg)

    head = root_phasors(net, point.v0)
    root_row = {phase: k for k, phase in enumerate(net.root_phases)}

    # 每個線段的 (下游索引, 上游索引, 是否接在首端, 阻抗)
    order = []
    for seg in net.bfs_segments:
        child = np.array([net.phase_node_index[(seg.to_bus, ph)] for ph in seg.phases])
        if seg.from_bus == 0:
            parent = np.array([root_row[ph] for ph in seg.phases])
        else:
            parent = np.array([net.phase_node_index[(seg.from_bus, ph)] for ph in seg.phases])
        order.append((child, parent, seg.from_bus == 0, seg.impedance))

    # 平啟動
    voltages = np.empty(net.m, dtype=complex)
    for (bus_id, phase), idx in net.phase_node_index.items():
        voltages[idx] = head[root_row[phase]]

    history: List[float] = []
    for iteration in range(1, cfg.max_iterations + 1):
        if np.any(np.abs(voltages) < COLLAPSE_VOLTAGE):
            raise VoltageCollapseError(f"第 {iteration} 次迭代出現零電壓，負載可能超出可行範圍")

        branch = np.conj(demand / voltages)
        for child, parent, from_root, _ in reversed(order):
            if not from_root:
                branch[parent] += branch[child]

        updated = np.empty_like(voltages)
        for child, parent, from_root, z in order:
            upstream = head[parent] if from_root else updated[parent]
            updated[child] = upstream - z @ branch[child]

        if not np.all(np.isfinite(updated)):
            raise VoltageCollapseError(f"第 {iteration} 次迭代電壓發散")

        change = float(np.max(np.abs(updated - voltages))) if net.m else 0.0
        voltages = updated
        history.append(change)
        if change < cfg.tolerance:
            logger.debug(f"潮流收斂: {iteration} 次迭代, ΔV={change:.2e}")
            return PlantSolution(
                complex_voltages=voltages,
                squared_magnitudes=np.abs(voltages) ** 2,
                iterations=iteration,
                residual=change,
                residual_history=history,
            )

    raise PlantConvergenceError(
        f"潮流在 {cfg.max_iterations} 次迭代內未收斂 (ΔV={history[-1]:.2e})"
    )


def measure_squared_voltages(
    sol: PlantSolution,
    noise_std: float = 0.0,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """
    取得電壓平方量測值

    Args:
        sol: 已收斂的潮流解
        noise_std: 量測雜訊標準差（per-unit²），0 代表無雜訊
        rng: 亂數產生器（未提供時新建）

    Returns:
        (m,) 量測值
    """
    measured = np.array(sol.squared_magnitudes, dtype=float)
    if noise_std > 0:
        rng = rng if rng is not None else np.random.default_rng()
        measured = measured + rng.normal(0.0, noise_std, size=measured.shape)
    return measured
