#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
線性化潮流模型的求值
- 節點電壓平方預測 v = M qg + c
- 線段潮流 P = −A⁻¹p、Q = −A⁻¹q
- 沿線段由根往葉遞推電壓（獨立於 M 的第二條計算路徑）
"""

from dataclasses import dataclass, asdict
from typing import Dict, Tuple

import numpy as np

from .netmodel import NetworkModel, LinearSensitivityModel, tilde_impedance
from .utils import setup_logger, DataError, as_vector

logger = setup_logger(__name__)


@dataclass(frozen=True, eq=False)
class OperatingPoint:
    """某一時刻的首端電壓平方與負載"""
    v0: np.ndarray
    p: np.ndarray
    qc: np.ndarray

    def __post_init__(self):
        for name in ("v0", "p", "qc"):
            values = np.asarray(getattr(self, name), dtype=float)
            if not np.all(np.isfinite(values)):
                raise DataError(f"OperatingPoint.{name} 含非有限值")
            object.__setattr__(self, name, np.atleast_1d(values))
        if np.any(self.v0 <= 0):
            raise DataError("首端電壓平方 v0 必須為正")

    @classmethod
    def for_network(cls, net: NetworkModel, v0=1.0, p=None, qc=None) -> "OperatingPoint":
        """依網路維度建立，p / qc 省略時使用網路文件的標稱負載"""
        nominal_p, nominal_q = net.nominal_loads()
        return cls(
            v0=as_vector(v0, net.n0, "v0", broadcast=True),
            p=nominal_p if p is None else as_vector(p, net.m, "p"),
            qc=nominal_q if qc is None else as_vector(qc, net.m, "qc"),
        )

    def to_dict(self) -> Dict:
        return {k: np.asarray(v).tolist() for k, v in asdict(self).items()}


@dataclass(frozen=True, eq=False)
class VoltageProfile:
    """節點電壓平方 (m,)"""
    v: np.ndarray

    @property
    def magnitudes(self) -> np.ndarray:
        return np.sqrt(np.clip(self.v, 0.0, None))


def predict_voltages(model: LinearSensitivityModel, qg, c) -> VoltageProfile:
    """
    以線性模型預測電壓平方

    Args:
        model: 線性模型
        qg: DER 無效功 (m,)
        c: 偏移向量 (m,)

    Returns:
        VoltageProfile，v = M qg + c
    """
    qg = as_vector(qg, model.m, "qg")
    c = as_vector(c, model.m, "c")
    v = model.m_matrix @ qg + c
    if np.any(v <= 0):
        logger.debug("⚠️ 線性模型預測出非正的電壓平方")
    return VoltageProfile(v=v)


def branch_flows(model: LinearSensitivityModel, p, q) -> Tuple[np.ndarray, np.ndarray]:
    """
    計算每個線段相位的實功與無效功潮流

    Args:
        model: 線性模型
        p: 實功消耗 (m,)
        q: 淨無效功消耗 (m,)

    Returns:
        (P, Q)，P = −A⁻¹p、Q = −A⁻¹q
    """
    p = as_vector(p, model.m, "p")
    q = as_vector(q, model.m, "q")
    return -model.solve_a(p), -model.solve_a(q)


def propagate_voltages(net: NetworkModel, v0, flows_p, flows_q) -> np.ndarray:
    """
    由首端沿線段遞推 v_j = v_i − 2(R̃ P + X̃ Q)

    Args:
        net: 網路
        v0: 首端電壓平方 (n0,)
        flows_p: 線段實功潮流 (m,)
        flows_q: 線段無效功潮流 (m,)

    Returns:
        電壓平方 (m,)
    """
    v0 = as_vector(v0, net.n0, "v0", broadcast=True)
    flows_p = as_vector(flows_p, net.m, "P")
    flows_q = as_vector(flows_q, net.m, "Q")
    root_row = {phase: k for k, phase in enumerate(net.root_phases)}

    v = np.zeros(net.m)
    for seg in net.bfs_segments:
        child = [net.phase_node_index[(seg.to_bus, ph)] for ph in seg.phases]
        if seg.from_bus == 0:
            upstream = v0[[root_row[ph] for ph in seg.phases]]
        else:
            upstream = v[[net.phase_node_index[(seg.from_bus, ph)] for ph in seg.phases]]
        r_tilde, x_tilde = tilde_impedance(seg.impedance, seg.phases)
        v[child] = upstream - 2.0 * (r_tilde @ flows_p[child] + x_tilde @ flows_q[child])
    return v
