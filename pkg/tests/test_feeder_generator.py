"""隨機饋線產生器"""

import json

import numpy as np
import pytest

from src.linflow import predict_voltages
from src.netmodel import build_linear_model, compute_c, network_from_document
from src.tools.feeder_generator import FeederOptions, generate_feeder
from src.utils import ConfigError


@pytest.mark.parametrize("buses, seed", [(2, 0), (10, 1), (40, 2), (80, 3)])
def test_generated_feeder_is_valid(buses, seed):
    doc = generate_feeder(buses, seed=seed)
    net = network_from_document(doc)
    assert len(net.buses) == buses
    assert net.root_phases == ("a", "b", "c")
    assert np.any(net.der_capacity() > 0)
    build_linear_model(net)


def test_generation_is_deterministic():
    first = json.dumps(generate_feeder(20, seed=4))
    second = json.dumps(generate_feeder(20, seed=4))
    assert first == second
    assert first != json.dumps(generate_feeder(20, seed=5))


@pytest.mark.parametrize("seed", range(3))
def test_impedance_scaling_hits_target_voltage(seed):
    options = FeederOptions(target_min_voltage=0.94)
    net = network_from_document(generate_feeder(25, seed=seed, options=options))
    model = build_linear_model(net)
    p, q = net.nominal_loads()
    v = predict_voltages(model, np.zeros(net.m), compute_c(model, 1.0, p, q)).v
    assert v.min() == pytest.approx(0.94 ** 2, abs=1e-9)


def test_all_der_and_single_phase_options():
    options = FeederOptions(der_fraction=1.0, three_phase_fraction=0.0, two_phase_fraction=0.0)
    net = network_from_document(generate_feeder(12, seed=0, options=options))
    assert np.all(net.der_capacity() > 0)
    assert all(len(bus.phases) == 1 for bus in net.buses if bus.id > 1)


def test_device_sections():
    doc = generate_feeder(8, seed=0, options=FeederOptions(with_devices=True, tap_range=2))
    assert doc["oltc"]["tap_min"] == -2 and doc["oltc"]["tap_max"] == 2
    assert len(doc["capacitor_banks"]) == 1
    net = network_from_document(doc)
    assert net.oltc["tap_step"] == 0.00625


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(der_fraction=1.5),
        dict(three_phase_fraction=0.8, two_phase_fraction=0.5),
        dict(xr_range=(2.0, 1.0)),
        dict(mutual_ratio=0.5),
        dict(target_min_voltage=1.0),
        dict(branch_window=0),
    ],
)
def test_option_validation(kwargs):
    with pytest.raises(ConfigError):
        FeederOptions(**kwargs)


def test_bus_count_validation():
    with pytest.raises(ConfigError):
        generate_feeder(1)
