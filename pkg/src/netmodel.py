#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
不平衡放射狀配電饋線模型
- 解析網路文件（JSON 相容結構），驗證放射狀拓撲與相別
- 建立關聯矩陣 A0 / A、相別旋轉後的 R̃ / X̃ 區塊、Dr / Dx
- 以 A 的稀疏分解計算敏感度矩陣 M 與 Hessian H = MᵀM
"""

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import networkx as nx
import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .utils import setup_logger, DataError, DimensionError, as_vector

logger = setup_logger(__name__)

# --------------------------------
# 相別常數
# --------------------------------
PHASES: Tuple[str, ...] = ("a", "b", "c")
PHASE_INDEX = {"a": 0, "b": 1, "c": 2}

# 相序旋轉向量 [1, e^{-j2π/3}, e^{j2π/3}]
ROTATION = np.array([1.0, np.exp(-2j * np.pi / 3), np.exp(2j * np.pi / 3)])

# 電抗區塊條件數超過此值視為奇異
SINGULAR_COND = 1e12


class NetworkValidationError(DataError):
    """網路文件驗證失敗；reason 為錯誤代碼"""

    def __init__(self, reason: str, message: str):
        super().__init__(f"[{reason}] {message}")
        self.reason = reason


class ModelBuildError(DataError):
    """線性模型建立失敗（A 奇異或 H 非正定）"""
    pass


def parse_phases(text: Union[str, Iterable[str]]) -> Tuple[str, ...]:
    """
    將 "abc" 子集字串轉為依 a < b < c 排序的 tuple

    Args:
        text: 例如 "ca"、"b"、["a", "c"]

    Returns:
        排序後的相別 tuple
    """
    labels = list(text.lower()) if isinstance(text, str) else [str(p).lower() for p in text]
    if not labels:
        raise NetworkValidationError("malformed", "相別不可為空")
    unknown = [p for p in labels if p not in PHASE_INDEX]
    if unknown:
        raise NetworkValidationError("malformed", f"未知的相別: {unknown}")
    if len(set(labels)) != len(labels):
        raise NetworkValidationError("malformed", f"相別重複: {labels}")
    return tuple(sorted(labels, key=PHASE_INDEX.__getitem__))


# --------------------------------
# 數據結構
# --------------------------------
@dataclass(frozen=True)
class DerSpec:
    """逆變器型 DER（每相容量，per-unit 視在功率）"""
    capacity_pu: float


@dataclass(frozen=True)
class NominalLoad:
    """每相標稱負載（per-unit）"""
    p_pu: float
    q_pu: float


@dataclass(frozen=True)
class Bus:
    """匯流排"""
    id: int
    phases: Tuple[str, ...]
    der: Optional[DerSpec] = None
    load: Optional[NominalLoad] = None


@dataclass(frozen=True, eq=False)
class LineSegment:
    """線段 (from_bus → to_bus)，impedance 為 per-unit 複數矩陣"""
    from_bus: int
    to_bus: int
    phases: Tuple[str, ...]
    impedance: np.ndarray


@dataclass(frozen=True, eq=False)
class NetworkModel:
    """
    相別感知的放射狀饋線

    全域排序：非根匯流排依 id 遞增，同一匯流排內依 a, b, c；
    線段依 to_bus 遞增，因此第 k 個相節點同時也是第 k 個線段相位。
    """
    buses: Tuple[Bus, ...]
    segments: Tuple[LineSegment, ...]
    base_voltage: float
    base_power: float
    phase_node_index: Mapping[Tuple[int, str], int]
    oltc: Optional[Dict[str, Any]] = None
    capacitor_banks: Tuple[Dict[str, Any], ...] = ()

    @cached_property
    def bus_by_id(self) -> Dict[int, Bus]:
        return {bus.id: bus for bus in self.buses}

    @property
    def root(self) -> Bus:
        return self.bus_by_id[0]

    @property
    def root_phases(self) -> Tuple[str, ...]:
        return self.root.phases

    @property
    def n0(self) -> int:
        return len(self.root.phases)

    @property
    def m(self) -> int:
        return len(self.phase_node_index)

    @cached_property
    def node_keys(self) -> Tuple[Tuple[int, str], ...]:
        """依全域排序的 (bus, phase)"""
        keys = sorted(self.phase_node_index.items(), key=lambda item: item[1])
        return tuple(key for key, _ in keys)

    @cached_property
    def node_labels(self) -> Tuple[str, ...]:
        """相節點標籤 "<bus>.<phase>"，用於 CSV 欄位與情境鍵值"""
        return tuple(f"{bus}.{phase}" for bus, phase in self.node_keys)

    @cached_property
    def parent(self) -> Dict[int, int]:
        return {seg.to_bus: seg.from_bus for seg in self.segments}

    @cached_property
    def segment_by_to_bus(self) -> Dict[int, LineSegment]:
        return {seg.to_bus: seg for seg in self.segments}

    @cached_property
    def bfs_segments(self) -> Tuple[LineSegment, ...]:
        """由根往葉的線段順序（父線段一定在子線段之前）"""
        graph = nx.DiGraph()
        graph.add_edges_from((seg.from_bus, seg.to_bus) for seg in self.segments)
        if not graph.number_of_nodes():
            return ()
        return tuple(self.segment_by_to_bus[v] for _, v in nx.bfs_edges(graph, 0))

    def der_capacity(self) -> np.ndarray:
        """每個相節點的逆變器容量（無 DER 處為 0）"""
        cap = np.zeros(self.m)
        for (bus_id, phase), idx in self.phase_node_index.items():
            der = self.bus_by_id[bus_id].der
            if der is not None:
                cap[idx] = der.capacity_pu
        return cap

    def nominal_loads(self) -> Tuple[np.ndarray, np.ndarray]:
        """每個相節點的標稱 (p, q)（未設定處為 0）"""
        p = np.zeros(self.m)
        q = np.zeros(self.m)
        for (bus_id, phase), idx in self.phase_node_index.items():
            load = self.bus_by_id[bus_id].load
            if load is not None:
                p[idx] = load.p_pu
                q[idx] = load.q_pu
        return p, q

    def node_index(self, label: str) -> int:
        """由 "<bus>.<phase>" 取得全域位置"""
        try:
            bus_text, phase = label.split(".")
            return self.phase_node_index[(int(bus_text), phase.lower())]
        except (ValueError, KeyError) as e:
            raise DataError(f"未知的相節點標籤: {label}") from e


# --------------------------------
# 相別旋轉阻抗
# --------------------------------
def tilde_impedance(z, phases: Union[str, Sequence[str]]) -> Tuple[np.ndarray, np.ndarray]:
    """
    計算近似平衡假設下的等效阻抗 Z̃ = [(a aᴴ)^Φ ⊙ Z*]*

    Args:
        z: 複數阻抗矩陣 (n, n)
        phases: 線段相別（決定取用 a aᴴ 的哪個子矩陣）

    Returns:
        (R̃, X̃) 實數矩陣
    """
    phase_tuple = parse_phases(phases)
    idx = [PHASE_INDEX[p] for p in phase_tuple]
    z = np.asarray(z, dtype=complex)
    if z.ndim == 0:
        z = z.reshape(1, 1)
    n = len(idx)
    if z.shape != (n, n):
        raise DimensionError(f"阻抗矩陣維度 {z.shape} 與相別 {''.join(phase_tuple)} 不符")
    rotation = np.outer(ROTATION, ROTATION.conj())[np.ix_(idx, idx)]
    z_tilde = np.conj(rotation * np.conj(z))
    return z_tilde.real.copy(), z_tilde.imag.copy()


# --------------------------------
# 文件解析
# --------------------------------
def _as_int(value, what: str) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
        if isinstance(value, float) and value.is_integer():
            return int(value)
        raise NetworkValidationError("malformed", f"{what} 必須為整數: {value!r}")
    return int(value)


def _parse_bus(raw: Mapping[str, Any]) -> Bus:
    if not isinstance(raw, Mapping):
        raise NetworkValidationError("malformed", f"匯流排項目必須為物件: {raw!r}")
    if "id" not in raw or "phases" not in raw:
        raise NetworkValidationError("malformed", f"匯流排缺少 id 或 phases: {raw!r}")
    bus_id = _as_int(raw["id"], "bus id")
    if bus_id < 0:
        raise NetworkValidationError("malformed", f"bus id 必須 ≥ 0: {bus_id}")
    phases = parse_phases(raw["phases"])

    der = None
    if raw.get("der") is not None:
        try:
            capacity = float(raw["der"]["capacity_pu"])
        except (KeyError, TypeError, ValueError) as e:
            raise NetworkValidationError("malformed", f"bus {bus_id} 的 der 欄位錯誤") from e
        if not np.isfinite(capacity) or capacity < 0:
            raise NetworkValidationError("malformed", f"bus {bus_id} 的 DER 容量必須 ≥ 0")
        der = DerSpec(capacity_pu=capacity)

    load = None
    if raw.get("load") is not None:
        try:
            load = NominalLoad(p_pu=float(raw["load"].get("p_pu", 0.0)),
                               q_pu=float(raw["load"].get("q_pu", 0.0)))
        except (AttributeError, TypeError, ValueError) as e:
            raise NetworkValidationError("malformed", f"bus {bus_id} 的 load 欄位錯誤") from e

    return Bus(id=bus_id, phases=phases, der=der, load=load)


def _parse_impedance(raw: Mapping[str, Any], n: int, z_base: float, where: str) -> np.ndarray:
    if "z_pu" in raw:
        entries, scale = raw["z_pu"], 1.0
    elif "z_ohm" in raw:
        entries, scale = raw["z_ohm"], 1.0 / z_base
    else:
        raise NetworkValidationError("malformed", f"{where} 缺少 z_pu / z_ohm")
    try:
        values = [complex(float(re), float(im)) for re, im in entries]
    except (TypeError, ValueError) as e:
        raise NetworkValidationError("malformed", f"{where} 的阻抗必須為 [re, im] 列表") from e
    if len(values) != n * n:
        raise NetworkValidationError(
            "phase_mismatch", f"{where} 的阻抗有 {len(values)} 個元素，預期 {n * n}"
        )
    z = np.array(values, dtype=complex).reshape(n, n) * scale
    if not np.all(np.isfinite(z)):
        raise NetworkValidationError("malformed", f"{where} 的阻抗含非有限值")
    return z


def _parse_segment(raw: Mapping[str, Any], z_base: float) -> LineSegment:
    if not isinstance(raw, Mapping):
        raise NetworkValidationError("malformed", f"線段項目必須為物件: {raw!r}")
    for key in ("from", "to", "phases"):
        if key not in raw:
            raise NetworkValidationError("malformed", f"線段缺少 {key}: {raw!r}")
    from_bus = _as_int(raw["from"], "segment from")
    to_bus = _as_int(raw["to"], "segment to")
    phases = parse_phases(raw["phases"])
    where = f"線段 {from_bus}→{to_bus}"
    z = _parse_impedance(raw, len(phases), z_base, where)
    return LineSegment(from_bus=from_bus, to_bus=to_bus, phases=phases, impedance=z)


def _check_topology(bus_ids: Sequence[int], segments: Sequence[LineSegment]) -> None:
    """確認線段圖為以 bus 0 為根的樹"""
    known = set(bus_ids)
    directed = set()
    for seg in segments:
        for end in (seg.from_bus, seg.to_bus):
            if end not in known:
                raise NetworkValidationError("malformed", f"線段引用未定義的匯流排 {end}")
        if seg.from_bus == seg.to_bus:
            raise NetworkValidationError("cycle", f"線段 {seg.from_bus}→{seg.to_bus} 形成自迴路")
        if (seg.to_bus, seg.from_bus) in directed:
            raise NetworkValidationError(
                "cycle", f"線段 {seg.from_bus}→{seg.to_bus} 與反向線段形成迴路"
            )
        if (seg.from_bus, seg.to_bus) in directed:
            raise NetworkValidationError(
                "duplicate_segment", f"重複的線段 {seg.from_bus}→{seg.to_bus}"
            )
        directed.add((seg.from_bus, seg.to_bus))

    graph = nx.Graph()
    graph.add_nodes_from(known)
    graph.add_edges_from((seg.from_bus, seg.to_bus) for seg in segments)
    try:
        cycle = nx.find_cycle(graph)
    except nx.NetworkXNoCycle:
        cycle = None
    if cycle:
        raise NetworkValidationError("cycle", f"偵測到迴路: {cycle}")

    incoming: Dict[int, int] = {}
    for seg in segments:
        if seg.to_bus == 0:
            raise NetworkValidationError("root", "bus 0 為饋線首端，不可有上游線段")
        if seg.to_bus in incoming:
            raise NetworkValidationError(
                "duplicate_segment",
                f"bus {seg.to_bus} 有多條上游線段 ({incoming[seg.to_bus]}→, {seg.from_bus}→)",
            )
        incoming[seg.to_bus] = seg.from_bus

    tree = nx.DiGraph()
    tree.add_nodes_from(known)
    tree.add_edges_from((seg.from_bus, seg.to_bus) for seg in segments)
    unreachable = known - {0} - nx.descendants(tree, 0)
    if unreachable:
        raise NetworkValidationError("disconnected", f"無法由 bus 0 到達: {sorted(unreachable)}")


def network_from_document(doc: Mapping[str, Any]) -> NetworkModel:
    """
    由已解碼的網路文件建立並驗證 NetworkModel

    Args:
        doc: 含 base_voltage_v, base_power_va, buses, segments 的字典

    Returns:
        驗證完成的 NetworkModel
    """
    if not isinstance(doc, Mapping):
        raise NetworkValidationError("malformed", "網路文件頂層必須為物件")
    try:
        base_voltage = float(doc["base_voltage_v"])
        base_power = float(doc["base_power_va"])
        raw_buses = list(doc["buses"])
        raw_segments = list(doc["segments"])
    except (KeyError, TypeError, ValueError) as e:
        raise NetworkValidationError("malformed", f"頂層欄位缺少或格式錯誤: {e}") from e
    if base_voltage <= 0 or base_power <= 0:
        raise NetworkValidationError("malformed", "基準電壓與基準功率必須為正")
    z_base = base_voltage ** 2 / base_power

    buses: Dict[int, Bus] = {}
    for raw in raw_buses:
        bus = _parse_bus(raw)
        if bus.id in buses:
            raise NetworkValidationError("malformed", f"重複的 bus id: {bus.id}")
        buses[bus.id] = bus
    if 0 not in buses:
        raise NetworkValidationError("root", "缺少饋線首端 bus 0")
    if buses[0].der is not None:
        raise NetworkValidationError("root", "bus 0 不可配置 DER")

    segments = [_parse_segment(raw, z_base) for raw in raw_segments]
    _check_topology(list(buses), segments)

    root_outgoing = set()
    for seg in segments:
        src, dst = buses[seg.from_bus], buses[seg.to_bus]
        where = f"線段 {seg.from_bus}→{seg.to_bus}"
        if not set(seg.phases) <= set(src.phases) & set(dst.phases):
            raise NetworkValidationError(
                "phase_mismatch", f"{where} 的相別 {''.join(seg.phases)} 不在兩端匯流排上"
            )
        if seg.phases != dst.phases:
            raise NetworkValidationError(
                "phase_mismatch", f"{where} 的相別必須等於下游 bus {dst.id} 的相別"
            )
        _, x_tilde = tilde_impedance(seg.impedance, seg.phases)
        cond = np.linalg.cond(x_tilde)
        if not np.isfinite(cond) or cond > SINGULAR_COND:
            raise NetworkValidationError("singular_reactance", f"{where} 的 X̃ 區塊奇異 (cond={cond:.3g})")
        if seg.from_bus == 0:
            root_outgoing.update(seg.phases)

    if segments and set(buses[0].phases) != root_outgoing:
        raise NetworkValidationError(
            "phase_mismatch",
            f"bus 0 的相別 {''.join(buses[0].phases)} 必須等於其出線相別 "
            f"{''.join(parse_phases(root_outgoing)) if root_outgoing else '-'}",
        )

    ordered = sorted(buses.values(), key=lambda b: b.id)
    phase_node_index: Dict[Tuple[int, str], int] = {}
    for bus in ordered:
        if bus.id == 0:
            continue
        for phase in bus.phases:
            phase_node_index[(bus.id, phase)] = len(phase_node_index)

    oltc = doc.get("oltc")
    if oltc is not None and not isinstance(oltc, Mapping):
        raise NetworkValidationError("malformed", "oltc 必須為物件")
    banks = doc.get("capacitor_banks") or []
    if not isinstance(banks, list) or not all(isinstance(b, Mapping) for b in banks):
        raise NetworkValidationError("malformed", "capacitor_banks 必須為物件列表")

    net = NetworkModel(
        buses=tuple(ordered),
        segments=tuple(sorted(segments, key=lambda s: s.to_bus)),
        base_voltage=base_voltage,
        base_power=base_power,
        phase_node_index=phase_node_index,
        oltc=dict(oltc) if oltc is not None else None,
        capacitor_banks=tuple(dict(b) for b in banks),
    )
    logger.debug(f"網路解析完成: {len(net.buses)} 匯流排, {len(net.segments)} 線段, m={net.m}")
    return net


def parse_network(text: str) -> NetworkModel:
    """
    解析網路文件文字

    Args:
        text: UTF-8 JSON 文字

    Returns:
        驗證完成的 NetworkModel
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise NetworkValidationError("malformed", f"JSON 解析失敗: {e}") from e
    return network_from_document(doc)


def load_network(path: Union[str, Path]) -> NetworkModel:
    """由檔案載入網路文件"""
    path = Path(path)
    if not path.exists():
        raise NetworkValidationError("malformed", f"網路文件不存在: {path}")
    net = parse_network(path.read_text(encoding="utf-8"))
    logger.info(f"載入網路: {path.name} ({len(net.buses)} 匯流排, m={net.m})")
    return net


def network_to_document(net: NetworkModel) -> Dict[str, Any]:
    """將 NetworkModel 轉回文件格式（z_pu 表示）"""
    buses = []
    for bus in net.buses:
        entry: Dict[str, Any] = {"id": bus.id, "phases": "".join(bus.phases)}
        if bus.der is not None:
            entry["der"] = {"capacity_pu": bus.der.capacity_pu}
        if bus.load is not None:
            entry["load"] = {"p_pu": bus.load.p_pu, "q_pu": bus.load.q_pu}
        buses.append(entry)
    segments = [
        {
            "from": seg.from_bus,
            "to": seg.to_bus,
            "phases": "".join(seg.phases),
            "z_pu": [[float(z.real), float(z.imag)] for z in seg.impedance.reshape(-1)],
        }
        for seg in net.segments
    ]
    doc: Dict[str, Any] = {
        "base_voltage_v": net.base_voltage,
        "base_power_va": net.base_power,
        "buses": buses,
        "segments": segments,
    }
    if net.oltc is not None:
        doc["oltc"] = dict(net.oltc)
    if net.capacitor_banks:
        doc["capacitor_banks"] = [dict(b) for b in net.capacitor_banks]
    return doc


# --------------------------------
# 關聯矩陣與線性模型
# --------------------------------
def build_incidence(net: NetworkModel) -> Tuple[sp.csc_matrix, sp.csc_matrix]:
    """
    建立關聯矩陣：每個線段相位一欄，上游相節點 +1、下游相節點 -1

    Returns:
        (a0, a)：a0 為 (n0, m) 根節點列，a 為 (m, m) 其餘相節點列
    """
    root_row = {phase: k for k, phase in enumerate(net.root_phases)}
    rows0: List[int] = []
    cols0: List[int] = []
    rows: List[int] = []
    cols: List[int] = []
    vals: List[float] = []
    for seg in net.segments:
        for phase in seg.phases:
            col = net.phase_node_index[(seg.to_bus, phase)]
            if seg.from_bus == 0:
                rows0.append(root_row[phase])
                cols0.append(col)
            else:
                rows.append(net.phase_node_index[(seg.from_bus, phase)])
                cols.append(col)
                vals.append(1.0)
            rows.append(col)
            cols.append(col)
            vals.append(-1.0)
    a0 = sp.csc_matrix((np.ones(len(rows0)), (rows0, cols0)), shape=(net.n0, net.m))
    a = sp.csc_matrix((vals, (rows, cols)), shape=(net.m, net.m))
    return a0, a


def power_iteration(matrix: np.ndarray, iterations: int = 1000, tol: float = 1e-12, seed: int = 0) -> float:
    """以冪次法估計對稱半正定矩陣的最大特徵值"""
    n = matrix.shape[0]
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n)
    x /= np.linalg.norm(x)
    estimate = 0.0
    for _ in range(iterations):
        y = matrix @ x
        norm = np.linalg.norm(y)
        if norm == 0.0:
            return 0.0
        new_estimate = float(x @ y)
        x = y / norm
        if abs(new_estimate - estimate) <= tol * max(1.0, abs(new_estimate)):
            estimate = new_estimate
            break
        estimate = new_estimate
    return float(x @ (matrix @ x))


@dataclass(frozen=True, eq=False)
class LinearSensitivityModel:
    """線性化潮流的常數矩陣；建立後不可變，可跨執行緒共用"""
    a0: sp.csc_matrix
    a: sp.csc_matrix
    dr: sp.csc_matrix
    dx: sp.csc_matrix
    m_matrix: np.ndarray
    hessian: np.ndarray
    a_factorization: Any = field(repr=False)
    node_labels: Tuple[str, ...] = ()

    @property
    def m(self) -> int:
        return self.m_matrix.shape[0]

    @property
    def n0(self) -> int:
        return self.a0.shape[0]

    def solve_a(self, rhs: np.ndarray) -> np.ndarray:
        """解 A x = rhs"""
        return self.a_factorization.solve(np.asarray(rhs, dtype=float))

    def solve_at(self, rhs: np.ndarray) -> np.ndarray:
        """解 Aᵀ x = rhs"""
        return self.a_factorization.solve(np.asarray(rhs, dtype=float), trans="T")

    @cached_property
    def lambda_max(self) -> float:
        """H 的最大特徵值（梯度投影的預設步長 1/λ_max）"""
        return power_iteration(self.hessian)

    @cached_property
    def hessian_diag(self) -> np.ndarray:
        return np.diag(self.hessian).copy()


def build_linear_model(net: NetworkModel) -> LinearSensitivityModel:
    """
    建立線性敏感度模型

    M = 2 A⁻ᵀ Dx A⁻¹ 由 A 的 LU 分解求解得到，H = MᵀM 需可 Cholesky 分解

    Args:
        net: 已驗證的 NetworkModel

    Returns:
        LinearSensitivityModel
    """
    a0, a = build_incidence(net)
    r_blocks, x_blocks = [], []
    for seg in net.segments:
        r_tilde, x_tilde = tilde_impedance(seg.impedance, seg.phases)
        r_blocks.append(r_tilde)
        x_blocks.append(x_tilde)
    if not r_blocks:
        raise ModelBuildError("網路沒有任何線段，無法建立線性模型")
    dr = sp.block_diag(r_blocks, format="csc")
    dx = sp.block_diag(x_blocks, format="csc")

    try:
        lu = splu(a.tocsc())
    except RuntimeError as e:
        raise ModelBuildError(f"關聯矩陣 A 奇異: {e}") from e

    a_inv = lu.solve(np.eye(net.m))
    m_matrix = 2.0 * lu.solve(np.asarray(dx @ a_inv), trans="T")
    hessian = m_matrix.T @ m_matrix
    hessian = 0.5 * (hessian + hessian.T)

    try:
        scipy.linalg.cho_factor(hessian)
    except np.linalg.LinAlgError as e:
        raise ModelBuildError(f"Hessian 非正定，請檢查阻抗資料: {e}") from e

    logger.debug(f"線性模型建立完成: m={net.m}, ‖H‖_F={np.linalg.norm(hessian):.4g}")
    return LinearSensitivityModel(
        a0=a0,
        a=a,
        dr=dr,
        dx=dx,
        m_matrix=m_matrix,
        hessian=hessian,
        a_factorization=lu,
        node_labels=net.node_labels,
    )


def compute_c(model: LinearSensitivityModel, v0, p, qc) -> np.ndarray:
    """
    計算偏移向量 c = −M qc − A⁻ᵀ A0ᵀ v0 − 2 A⁻ᵀ Dr A⁻¹ p

    Args:
        model: 線性模型
        v0: 首端各相電壓平方 (n0,)，純量會廣播
        p: 實功消耗 (m,)
        qc: 非 DER 無效功消耗 (m,)

    Returns:
        c (m,)
    """
    v0 = as_vector(v0, model.n0, "v0", broadcast=True)
    p = as_vector(p, model.m, "p")
    qc = as_vector(qc, model.m, "qc")
    slack = model.solve_at(np.asarray(model.a0.T @ v0).reshape(-1))
    real = 2.0 * model.solve_at(np.asarray(model.dr @ model.solve_a(p)).reshape(-1))
    return -(model.m_matrix @ qc) - slack - real
