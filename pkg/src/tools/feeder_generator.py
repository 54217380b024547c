#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
隨機不平衡放射狀饋線產生器
產生可被 netmodel.parse_network 讀取的網路文件，作為測試與基準比較的資料來源
"""

from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from ..netmodel import PHASES, network_from_document, build_linear_model, compute_c
from ..utils import setup_logger, ConfigError

logger = setup_logger(__name__)

DEFAULT_BASE_VOLTAGE_V = 4160.0
DEFAULT_BASE_POWER_VA = 100_000.0


@dataclass(frozen=True)
class FeederOptions:
    """產生器參數"""
    der_fraction: float = 0.3
    three_phase_fraction: float = 0.6
    two_phase_fraction: float = 0.2
    xr_range: Tuple[float, float] = (0.5, 3.0)
    mutual_ratio: float = 0.2
    target_min_voltage: float = 0.93
    load_p_pu: float = 0.06
    load_q_pu: float = 0.03
    load_spread: float = 0.5
    der_capacity_pu: float = 0.5
    branch_window: int = 3
    base_voltage_v: float = DEFAULT_BASE_VOLTAGE_V
    base_power_va: float = DEFAULT_BASE_POWER_VA
    with_devices: bool = False
    tap_range: int = 1

    def __post_init__(self):
        if not 0 <= self.der_fraction <= 1:
            raise ConfigError("der_fraction 必須在 [0, 1]")
        if self.three_phase_fraction < 0 or self.two_phase_fraction < 0 \
                or self.three_phase_fraction + self.two_phase_fraction > 1:
            raise ConfigError("相別比例設定錯誤")
        lo, hi = self.xr_range
        if not 0 < lo <= hi:
            raise ConfigError("xr_range 設定錯誤")
        # 互阻抗上限保證 X̃ 對角優勢（xr ≥ 0.5 時）
        if not 0 <= self.mutual_ratio <= 0.2:
            raise ConfigError("mutual_ratio 必須在 [0, 0.2]")
        if not 0 < self.target_min_voltage < 1:
            raise ConfigError("target_min_voltage 必須在 (0, 1)")
        if self.branch_window < 1:
            raise ConfigError("branch_window 必須 ≥ 1")


def _child_phases(rng: np.random.Generator, parent: str, opts: FeederOptions) -> str:
    u = rng.random()
    if u < opts.three_phase_fraction:
        count = 3
    elif u < opts.three_phase_fraction + opts.two_phase_fraction:
        count = 2
    else:
        count = 1
    count = min(count, len(parent))
    chosen = rng.choice(list(parent), size=count, replace=False)
    return "".join(p for p in PHASES if p in chosen)


def _segment_impedance(rng: np.random.Generator, n: int, opts: FeederOptions) -> np.ndarray:
    """自阻抗 X/R 比在 xr_range 內；互阻抗不超過最小自電抗的 mutual_ratio 倍"""
    length = rng.uniform(0.5, 1.5)
    x_self = rng.uniform(0.8, 1.2, size=n) * length
    xr = rng.uniform(*opts.xr_range, size=n)
    z = np.diag(x_self / xr + 1j * x_self)
    for i in range(n):
        for j in range(i + 1, n):
            x_m = rng.uniform(0.0, opts.mutual_ratio) * x_self.min()
            r_m = x_m / rng.uniform(*opts.xr_range)
            z[i, j] = z[j, i] = r_m + 1j * x_m
    return z


def _z_entries(z: np.ndarray) -> List[List[float]]:
    return [[float(v.real), float(v.imag)] for v in z.reshape(-1)]


def generate_feeder(buses: int, seed: int = 0, options: Optional[FeederOptions] = None) -> Dict[str, Any]:
    """
    產生隨機放射狀饋線

    拓撲：每個新匯流排從最近 branch_window 個匯流排中選一個作為上游；
    首端為三相，子匯流排相別為上游相別的子集。
    阻抗整體縮放使標稱負載下線性模型的最低電壓約為 target_min_voltage。

    Args:
        buses: 匯流排數（含首端，≥ 2）
        seed: 亂數種子
        options: 產生器參數

    Returns:
        網路文件（dict）
    """
    if buses < 2:
        raise ConfigError(f"buses 必須 ≥ 2: {buses}")
    opts = options or FeederOptions()
    rng = np.random.default_rng(seed)

    phases = {0: "abc"}
    raw_segments = []
    for bus in range(1, buses):
        parent = 0 if bus == 1 else int(rng.integers(max(0, bus - opts.branch_window), bus))
        phases[bus] = "abc" if bus == 1 else _child_phases(rng, phases[parent], opts)
        raw_segments.append((parent, bus, _segment_impedance(rng, len(phases[bus]), opts)))

    der_buses = {bus for bus in range(1, buses) if rng.random() < opts.der_fraction}
    if not der_buses and opts.der_fraction > 0:
        der_buses = {int(rng.integers(1, buses))}

    bus_entries = [{"id": 0, "phases": "abc"}]
    for bus in range(1, buses):
        spread = 1.0 + opts.load_spread * (2.0 * rng.random() - 1.0)
        entry: Dict[str, Any] = {
            "id": bus,
            "phases": phases[bus],
            "load": {
                "p_pu": round(opts.load_p_pu * spread, 6),
                "q_pu": round(opts.load_q_pu * spread, 6),
            },
        }
        if bus in der_buses:
            entry["der"] = {"capacity_pu": opts.der_capacity_pu}
        bus_entries.append(entry)

    def document(scale: float) -> Dict[str, Any]:
        return {
            "base_voltage_v": opts.base_voltage_v,
            "base_power_va": opts.base_power_va,
            "buses": bus_entries,
            "segments": [
                {"from": f, "to": t, "phases": phases[t], "z_pu": _z_entries(z * scale)}
                for f, t, z in raw_segments
            ],
        }

    # 線性模型的電壓降與阻抗成正比，一次縮放即可達到目標最低電壓
    nominal_net = network_from_document(document(1.0))
    model = build_linear_model(nominal_net)
    p_nom, q_nom = nominal_net.nominal_loads()
    drop = float(np.max(1.0 - compute_c(model, 1.0, p_nom, q_nom)))
    scale = (1.0 - opts.target_min_voltage ** 2) / drop if drop > 0 else 1.0
    doc = document(scale)

    if opts.with_devices:
        doc["oltc"] = {
            "tap_step": 0.00625,
            "tap_min": -opts.tap_range,
            "tap_max": opts.tap_range,
            "tap_change_limit": 1,
            "initial_tap": 0,
        }
        cb_bus = max(range(1, buses), key=lambda b: (len(phases[b]), -b))
        doc["capacitor_banks"] = [{
            "bus": cb_bus,
            "phases": phases[cb_bus],
            "unit_var_pu": 0.05,
            "max_units": 1,
            "switch_limit": 1,
            "initial_units": 0,
        }]

    logger.debug(f"產生饋線: {buses} 匯流排, {len(der_buses)} 個 DER, 阻抗縮放 {scale:.4g}")
    return doc
