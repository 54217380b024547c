"""
共用測試資料：小型手算網路與隨機產生的饋線
"""

import json

import numpy as np
import pytest

from src.netmodel import network_from_document, build_linear_model
from src.tools.feeder_generator import FeederOptions, generate_feeder


def z_entries(matrix):
    """複數矩陣轉為文件格式 [[re, im], ...]"""
    z = np.atleast_2d(np.asarray(matrix, dtype=complex))
    return [[float(v.real), float(v.imag)] for v in z.reshape(-1)]


def single_phase_doc(parents, x=0.1, r=0.0, der_buses=(), capacity=0.5, loads=None):
    """
    單相 (a) 網路文件

    Args:
        parents: {bus: parent}，bus 0 為首端
        x, r: 每段電抗 / 電阻（純量或 {bus: 值}）
        der_buses: 配置 DER 的匯流排
        loads: {bus: (p, q)}
    """
    loads = loads or {}
    buses = [{"id": 0, "phases": "a"}]
    for bus in sorted(parents):
        entry = {"id": bus, "phases": "a"}
        if bus in der_buses:
            entry["der"] = {"capacity_pu": capacity}
        if bus in loads:
            entry["load"] = {"p_pu": loads[bus][0], "q_pu": loads[bus][1]}
        buses.append(entry)
    segments = []
    for bus, parent in sorted(parents.items()):
        xb = x[bus] if isinstance(x, dict) else x
        rb = r[bus] if isinstance(r, dict) else r
        segments.append({"from": parent, "to": bus, "phases": "a", "z_pu": z_entries(rb + 1j * xb)})
    return {"base_voltage_v": 4160.0, "base_power_va": 100000.0, "buses": buses, "segments": segments}


@pytest.fixture
def two_bus_doc():
    return single_phase_doc({1: 0}, x=0.1)


@pytest.fixture
def two_bus_net(two_bus_doc):
    return network_from_document(two_bus_doc)


@pytest.fixture
def two_bus_model(two_bus_net):
    return build_linear_model(two_bus_net)


@pytest.fixture
def chain_net():
    return network_from_document(single_phase_doc({1: 0, 2: 1}, x=0.1))


@pytest.fixture
def mixed_phase_doc():
    """0(abc) → 1(abc) → 2(ab) → 3(b)，1 → 4(c)，bus 2 / 4 配置 DER"""
    z3 = np.array([[0.05 + 0.1j, 0.01 + 0.02j, 0.01 + 0.02j],
                   [0.01 + 0.02j, 0.05 + 0.1j, 0.01 + 0.02j],
                   [0.01 + 0.02j, 0.01 + 0.02j, 0.05 + 0.1j]])
    return {
        "base_voltage_v": 4160.0,
        "base_power_va": 100000.0,
        "buses": [
            {"id": 0, "phases": "abc"},
            {"id": 1, "phases": "abc", "load": {"p_pu": 0.05, "q_pu": 0.02}},
            {"id": 2, "phases": "ab", "der": {"capacity_pu": 0.5}, "load": {"p_pu": 0.04, "q_pu": 0.02}},
            {"id": 3, "phases": "b", "load": {"p_pu": 0.03, "q_pu": 0.01}},
            {"id": 4, "phases": "c", "der": {"capacity_pu": 0.5}, "load": {"p_pu": 0.06, "q_pu": 0.03}},
        ],
        "segments": [
            {"from": 0, "to": 1, "phases": "abc", "z_pu": z_entries(z3)},
            {"from": 1, "to": 2, "phases": "ab", "z_pu": z_entries(z3[:2, :2])},
            {"from": 2, "to": 3, "phases": "b", "z_pu": z_entries(z3[1, 1])},
            {"from": 1, "to": 4, "phases": "c", "z_pu": z_entries(z3[2, 2])},
        ],
    }


@pytest.fixture
def mixed_net(mixed_phase_doc):
    return network_from_document(mixed_phase_doc)


@pytest.fixture
def mixed_model(mixed_net):
    return build_linear_model(mixed_net)


@pytest.fixture
def feeder_factory():
    """generate_feeder → (NetworkModel, LinearSensitivityModel)"""
    def make(buses, seed=0, **options):
        doc = generate_feeder(buses, seed=seed, options=FeederOptions(**options))
        net = network_from_document(doc)
        return net, build_linear_model(net)
    return make


@pytest.fixture
def write_json(tmp_path):
    def write(name, payload):
        path = tmp_path / name
        path.write_text(json.dumps(payload, ensure_ascii=False, indent=2), encoding="utf-8")
        return path
    return write
