#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
時間序列情境
- ScenarioSeries：逐步的負載、PV 實功、首端電壓與逆變器容量
- 情境文件（JSON）與欄位式 CSV 的讀取
- 靜態情境與日負載曲線情境的產生
"""

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .netmodel import NetworkModel
from .utils import setup_logger, DataError, as_vector

logger = setup_logger(__name__)

DEFAULT_RESOLUTION_S = 10.0
DEFAULT_CONTROL_PERIOD_S = 2.0
DEFAULT_PV_PEAK_PU = 0.2

# pv_real 超過容量的容許誤差
CAPACITY_TOL = 1e-9


class ScenarioError(DataError):
    """情境資料錯誤"""
    pass


# --------------------------------
# 數據結構
# --------------------------------
@dataclass(frozen=True, eq=False)
class StepData:
    """某一控制時刻（零階保持後）的情境資料"""
    index: int
    time_s: float
    v0: np.ndarray
    p: np.ndarray
    qc: np.ndarray
    pv_real: np.ndarray


@dataclass(frozen=True, eq=False)
class ScenarioSeries:
    """
    等間隔的情境時間序列

    p / qc / pv_real 為 (T, m)，v0 為 (T, n0)，inverter_capacity 為 (m,)
    """
    p: np.ndarray
    qc: np.ndarray
    pv_real: np.ndarray
    v0: np.ndarray
    inverter_capacity: np.ndarray
    resolution_s: float = 1.0
    control_period_s: float = 1.0
    measurement_noise_std: float = 0.0
    node_labels: Tuple[str, ...] = ()

    def __post_init__(self):
        arrays = {}
        for name in ("p", "qc", "pv_real", "v0"):
            values = np.asarray(getattr(self, name), dtype=float)
            if values.ndim == 1:
                values = values.reshape(1, -1)
            if values.ndim != 2:
                raise ScenarioError(f"{name} 必須為 (steps, n) 陣列")
            if not np.all(np.isfinite(values)):
                raise ScenarioError(f"{name} 含非有限值")
            arrays[name] = values

        steps = arrays["p"].shape[0]
        m = arrays["p"].shape[1]
        if steps < 1:
            raise ScenarioError("情境至少需要一個時間步")
        for name in ("qc", "pv_real"):
            if arrays[name].shape != (steps, m):
                raise ScenarioError(f"{name} 維度 {arrays[name].shape} 與 p {(steps, m)} 不符")
        if arrays["v0"].shape[0] != steps:
            raise ScenarioError("v0 與 p 的時間長度不符")
        if np.any(arrays["v0"] <= 0):
            raise ScenarioError("v0 必須為正")

        capacity = np.asarray(self.inverter_capacity, dtype=float).reshape(-1)
        if capacity.shape != (m,):
            raise ScenarioError(f"inverter_capacity 維度 {capacity.shape} 與 m={m} 不符")
        if np.any(capacity < 0):
            raise ScenarioError("逆變器容量不可為負")
        pv = arrays["pv_real"]
        if np.any(pv < -CAPACITY_TOL):
            raise ScenarioError("PV 實功不可為負")
        excess = pv - capacity[None, :]
        if np.any(excess > CAPACITY_TOL):
            step, node = np.unravel_index(int(np.argmax(excess)), excess.shape)
            raise ScenarioError(
                f"PV 實功超過逆變器容量 (step {step}, node {node}: "
                f"{pv[step, node]:.4f} > {capacity[node]:.4f})"
            )
        arrays["pv_real"] = np.clip(pv, 0.0, capacity[None, :])

        if not self.resolution_s > 0 or not self.control_period_s > 0:
            raise ScenarioError("resolution_s 與 control_period_s 必須為正")
        if self.control_period_s < self.resolution_s:
            ratio = self.resolution_s / self.control_period_s
            if abs(ratio - round(ratio)) > 1e-9:
                raise ScenarioError(
                    f"控制週期 {self.control_period_s}s 必須整除資料解析度 {self.resolution_s}s"
                )
        if self.measurement_noise_std < 0:
            raise ScenarioError("measurement_noise_std 不可為負")
        if self.node_labels and len(self.node_labels) != m:
            raise ScenarioError("node_labels 數量與 m 不符")

        for name, values in arrays.items():
            object.__setattr__(self, name, values)
        object.__setattr__(self, "inverter_capacity", capacity)
        object.__setattr__(self, "node_labels", tuple(self.node_labels))

    @property
    def steps(self) -> int:
        return self.p.shape[0]

    @property
    def m(self) -> int:
        return self.p.shape[1]

    @property
    def n0(self) -> int:
        return self.v0.shape[1]

    @property
    def timestamps(self) -> np.ndarray:
        return np.arange(self.steps) * self.resolution_s

    @property
    def duration_s(self) -> float:
        return self.steps * self.resolution_s

    @property
    def control_steps(self) -> int:
        return max(1, math.ceil(self.duration_s / self.control_period_s - 1e-9))

    def control_times(self) -> np.ndarray:
        return np.arange(self.control_steps) * self.control_period_s

    def index_at(self, time_s: float) -> int:
        """零階保持：min(floor(t / resolution), T − 1)"""
        return min(int(math.floor(time_s / self.resolution_s + 1e-9)), self.steps - 1)

    def at(self, time_s: float) -> StepData:
        idx = self.index_at(time_s)
        return StepData(
            index=idx,
            time_s=float(time_s),
            v0=self.v0[idx],
            p=self.p[idx],
            qc=self.qc[idx],
            pv_real=self.pv_real[idx],
        )

    def check_network(self, net: NetworkModel) -> None:
        """確認情境維度與網路相符"""
        if self.m != net.m or self.n0 != net.n0:
            raise ScenarioError(
                f"情境維度 (m={self.m}, n0={self.n0}) 與網路 (m={net.m}, n0={net.n0}) 不符"
            )


# --------------------------------
# 曲線
# --------------------------------
def resample_profile(values, steps: int, name: str = "profile") -> np.ndarray:
    """
    將純量或任意長度的曲線以零階保持展開為 steps 點

    Args:
        values: 純量或序列
        steps: 目標長度
        name: 名稱（錯誤訊息用）

    Returns:
        (steps,) 陣列
    """
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 0:
        return np.full(steps, float(arr))
    arr = arr.reshape(-1)
    if arr.size == 0:
        raise ScenarioError(f"{name} 不可為空序列")
    if not np.all(np.isfinite(arr)):
        raise ScenarioError(f"{name} 含非有限值")
    if arr.size == steps:
        return arr.copy()
    idx = np.minimum((np.arange(steps) * arr.size) // steps, arr.size - 1)
    return arr[idx]


def day_profiles(steps: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    一日形狀的負載與 PV 曲線（標幺化，峰值約 1）

    負載：清晨與傍晚兩個尖峰；PV：6 時到 18 時的正弦
    """
    hours = np.arange(steps) * 24.0 / max(steps, 1)
    load = (
        0.55
        + 0.25 * np.exp(-((hours - 8.0) / 2.0) ** 2)
        + 0.45 * np.exp(-((hours - 19.0) / 2.5) ** 2)
    )
    pv = np.clip(np.sin(np.pi * (hours - 6.0) / 12.0), 0.0, None)
    pv[(hours < 6.0) | (hours > 18.0)] = 0.0
    return load, pv


# --------------------------------
# 情境產生
# --------------------------------
def _pv_matrix(net: NetworkModel, shape: np.ndarray, pv_peak_pu: float) -> np.ndarray:
    capacity = net.der_capacity()
    peak = np.where(capacity > 0, np.minimum(pv_peak_pu, capacity), 0.0)
    return np.outer(shape, peak)


def static_scenario(
    net: NetworkModel,
    steps: int = 1,
    load_scale: float = 1.0,
    pv_pu: float = 0.0,
    v0=1.0,
    resolution_s: float = 1.0,
    control_period_s: float = 1.0,
    noise_std: float = 0.0,
) -> ScenarioSeries:
    """
    固定不變的情境（使用網路文件中的標稱負載）

    Args:
        net: 網路
        steps: 時間步數
        load_scale: 標稱負載倍率
        pv_pu: DER 節點的 PV 實功（不超過容量）
        v0: 首端電壓平方
    """
    p_nom, q_nom = net.nominal_loads()
    ones = np.ones(steps)
    return ScenarioSeries(
        p=np.outer(ones, p_nom * load_scale),
        qc=np.outer(ones, q_nom * load_scale),
        pv_real=_pv_matrix(net, ones, pv_pu),
        v0=np.tile(as_vector(v0, net.n0, "v0", broadcast=True), (steps, 1)),
        inverter_capacity=net.der_capacity(),
        resolution_s=resolution_s,
        control_period_s=control_period_s,
        measurement_noise_std=noise_std,
        node_labels=net.node_labels,
    )


def dynamic_scenario(
    net: NetworkModel,
    steps: int,
    seed: int = 0,
    load_scale: float = 1.0,
    pv_peak_pu: float = DEFAULT_PV_PEAK_PU,
    v0=1.0,
    resolution_s: float = DEFAULT_RESOLUTION_S,
    control_period_s: float = DEFAULT_CONTROL_PERIOD_S,
    noise_std: float = 0.0,
    jitter: float = 0.05,
) -> ScenarioSeries:
    """
    日負載曲線情境：每個節點的負載乘上日曲線與隨機擾動

    Args:
        net: 網路
        steps: 資料點數
        seed: 亂數種子
        load_scale: 標稱負載倍率
        pv_peak_pu: PV 正午峰值（per-unit）
        jitter: 每點乘性擾動的標準差
    """
    rng = np.random.default_rng(seed)
    load_shape, pv_shape = day_profiles(steps)
    p_nom, q_nom = net.nominal_loads()
    noise = np.clip(1.0 + jitter * rng.standard_normal((steps, net.m)), 0.0, None)
    scale = load_shape[:, None] * noise * load_scale
    pv_noise = np.clip(1.0 + jitter * rng.standard_normal((steps, net.m)), 0.0, 1.0)
    capacity = net.der_capacity()
    pv = np.minimum(_pv_matrix(net, pv_shape, pv_peak_pu) * pv_noise, capacity[None, :])
    return ScenarioSeries(
        p=scale * p_nom[None, :],
        qc=scale * q_nom[None, :],
        pv_real=pv,
        v0=np.tile(as_vector(v0, net.n0, "v0", broadcast=True), (steps, 1)),
        inverter_capacity=capacity,
        resolution_s=resolution_s,
        control_period_s=control_period_s,
        measurement_noise_std=noise_std,
        node_labels=net.node_labels,
    )


def nominal_scenario_document(
    network_file: str,
    steps: int = 360,
    load_scale: float = 1.0,
    pv_peak_pu: float = DEFAULT_PV_PEAK_PU,
    resolution_s: float = DEFAULT_RESOLUTION_S,
    control_period_s: float = DEFAULT_CONTROL_PERIOD_S,
) -> Dict[str, Any]:
    """產生引用網路檔的情境文件（日曲線形狀）"""
    load_shape, pv_shape = day_profiles(steps)
    return {
        "network": network_file,
        "resolution_s": resolution_s,
        "control_period_s": control_period_s,
        "noise_std": 0.0,
        "steps": steps,
        "load_scale": load_scale,
        "pv_peak_pu": pv_peak_pu,
        "v0": 1.0,
        "profiles": {
            "load": [round(float(x), 6) for x in load_shape],
            "pv": [round(float(x), 6) for x in pv_shape],
        },
    }


# --------------------------------
# 讀取
# --------------------------------
def read_scenario_document(path: Union[str, Path]) -> Dict[str, Any]:
    """讀取情境文件"""
    path = Path(path)
    if not path.exists():
        raise ScenarioError(f"情境文件不存在: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ScenarioError(f"情境文件 JSON 解析失敗: {e}") from e
    if not isinstance(doc, Mapping):
        raise ScenarioError("情境文件頂層必須為物件")
    return dict(doc)


def scenario_network_path(doc: Mapping[str, Any], scenario_path: Union[str, Path]) -> Optional[Path]:
    """情境文件引用的網路檔（相對於情境文件所在目錄）"""
    ref = doc.get("network")
    if not ref:
        return None
    ref = Path(ref)
    return ref if ref.is_absolute() else Path(scenario_path).parent / ref


def read_series_csv(path: Union[str, Path], net: NetworkModel, steps: Optional[int] = None) -> pd.DataFrame:
    """
    讀取欄位式 CSV（標頭為相節點標籤，每列一個時間步）

    Args:
        path: CSV 路徑
        net: 網路（檢查標籤）
        steps: 預期列數，None 不檢查
    """
    path = Path(path)
    if not path.exists():
        raise ScenarioError(f"CSV 不存在: {path}")
    frame = pd.read_csv(path)
    unknown = [col for col in frame.columns if col not in net.node_labels]
    if unknown:
        raise ScenarioError(f"{path.name} 含未知的相節點標籤: {unknown}")
    try:
        frame = frame.astype(float)
    except (TypeError, ValueError) as e:
        raise ScenarioError(f"{path.name} 含非數值資料") from e
    if steps is not None and len(frame) != steps:
        raise ScenarioError(f"{path.name} 有 {len(frame)} 列，預期 {steps}")
    return frame


def scenario_from_document(
    doc: Mapping[str, Any],
    net: NetworkModel,
    base_dir: Union[str, Path, None] = None,
) -> ScenarioSeries:
    """
    由情境文件建立 ScenarioSeries

    優先順序：形狀曲線 × 標稱負載 → 各節點覆寫 (nodes) → CSV 欄位覆寫 (csv)

    Args:
        doc: 情境文件
        net: 網路
        base_dir: CSV 相對路徑的基準目錄

    Returns:
        ScenarioSeries
    """
    base_dir = Path(base_dir) if base_dir is not None else Path.cwd()
    try:
        resolution = float(doc.get("resolution_s", DEFAULT_RESOLUTION_S))
        period = float(doc.get("control_period_s", resolution))
        noise = float(doc.get("noise_std", 0.0))
        load_scale = float(doc.get("load_scale", 1.0))
        pv_peak = float(doc.get("pv_peak_pu", 0.0))
    except (TypeError, ValueError) as e:
        raise ScenarioError(f"情境文件數值欄位錯誤: {e}") from e

    csv_frames = {
        key: read_series_csv(base_dir / name, net)
        for key, name in (doc.get("csv") or {}).items()
    }
    for key in csv_frames:
        if key not in ("p", "qc", "pv"):
            raise ScenarioError(f"未知的 CSV 序列: {key}（可用 p, qc, pv）")

    profiles = doc.get("profiles") or {}
    steps = doc.get("steps")
    if steps is None:
        lengths = [len(v) for v in profiles.values() if isinstance(v, Sequence)]
        lengths += [len(frame) for frame in csv_frames.values()]
        steps = max(lengths) if lengths else 1
    steps = int(steps)
    if steps < 1:
        raise ScenarioError("steps 必須 ≥ 1")

    load_shape = resample_profile(profiles.get("load", 1.0), steps, "profiles.load")
    pv_shape = resample_profile(profiles.get("pv", 1.0), steps, "profiles.pv")
    p_nom, q_nom = net.nominal_loads()
    series = {
        "p": np.outer(load_shape, p_nom) * load_scale,
        "qc": np.outer(load_shape, q_nom) * load_scale,
        "pv": _pv_matrix(net, pv_shape, pv_peak),
    }

    for label, overrides in (doc.get("nodes") or {}).items():
        idx = net.node_index(label)
        for key, values in overrides.items():
            if key not in series:
                raise ScenarioError(f"節點 {label} 的未知序列: {key}")
            series[key][:, idx] = resample_profile(values, steps, f"nodes.{label}.{key}")

    for key, frame in csv_frames.items():
        if len(frame) != steps:
            raise ScenarioError(f"CSV 序列 {key} 有 {len(frame)} 列，預期 {steps}")
        for label in frame.columns:
            series[key][:, net.node_index(label)] = frame[label].to_numpy()

    v0 = doc.get("v0", 1.0)
    try:
        v0_row = as_vector(v0, net.n0, "v0", broadcast=True)
    except DataError as e:
        raise ScenarioError(str(e)) from e

    scenario = ScenarioSeries(
        p=series["p"],
        qc=series["qc"],
        pv_real=series["pv"],
        v0=np.tile(v0_row, (steps, 1)),
        inverter_capacity=net.der_capacity(),
        resolution_s=resolution,
        control_period_s=period,
        measurement_noise_std=noise,
        node_labels=net.node_labels,
    )
    logger.debug(f"情境建立完成: {steps} 步, 解析度 {resolution}s, 控制週期 {period}s")
    return scenario


def load_scenario(path: Union[str, Path], net: NetworkModel) -> ScenarioSeries:
    """由檔案載入情境"""
    path = Path(path)
    scenario = scenario_from_document(read_scenario_document(path), net, base_dir=path.parent)
    logger.info(f"載入情境: {path.name} ({scenario.steps} 步, {scenario.control_steps} 個控制週期)")
    return scenario
