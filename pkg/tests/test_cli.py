"""命令列：子命令輸出、結束碼與可重現性"""

import json
import logging

import pandas as pd
import pytest

from src import cli
from src.cli import RunConfig, config_from_args, run
from src.tools.feeder_generator import FeederOptions, generate_feeder
from src.utils import ConfigError
from tests.conftest import single_phase_doc


@pytest.fixture
def feeder_file(write_json):
    return write_json("feeder.json", generate_feeder(12, seed=1))


def test_generate_is_deterministic(tmp_path):
    for name in ("a", "b"):
        assert run(RunConfig("generate", out=tmp_path / name, seed=3,
                             options={"buses": 15, "with_scenario": True, "steps": 24})) == 0
    first = (tmp_path / "a" / "feeder.json").read_bytes()
    assert first == (tmp_path / "b" / "feeder.json").read_bytes()
    doc = json.loads(first)
    assert len(doc["buses"]) == 15
    scenario = json.loads((tmp_path / "a" / "scenario.json").read_text(encoding="utf-8"))
    assert scenario["network"] == "feeder.json"


def test_generate_multiple(tmp_path):
    assert run(RunConfig("generate", out=tmp_path, options={"buses": 6, "count": 3})) == 0
    assert sorted(p.name for p in tmp_path.glob("feeder_*.json")) == [
        "feeder_000.json", "feeder_001.json", "feeder_002.json",
    ]


def test_powerflow_without_loads_is_flat(write_json, tmp_path):
    path = write_json("flat.json", single_phase_doc({1: 0, 2: 1, 3: 1}))
    assert run(RunConfig("powerflow", network=path, out=tmp_path / "pf")) == 0
    frame = pd.read_csv(tmp_path / "pf" / "voltages.csv")
    assert list(frame["node"]) == ["1.a", "2.a", "3.a"]
    assert frame["v_magnitude"].tolist() == pytest.approx([1.0, 1.0, 1.0])
    assert frame["v_linear"].tolist() == pytest.approx([1.0, 1.0, 1.0])


def test_solve_writes_solution(feeder_file, tmp_path):
    assert run(RunConfig("solve", network=feeder_file, out=tmp_path, options={"load_scale": 1.5})) == 0
    solution = json.loads((tmp_path / "solution.json").read_text(encoding="utf-8"))
    assert solution["converged"] and solution["kkt_passed"]
    trace = pd.read_csv(tmp_path / "convergence.csv")
    assert len(trace) == solution["iterations"] + 1
    assert trace["objective"].is_monotonic_decreasing


def test_solve_iteration_cap_exit_code(feeder_file, tmp_path):
    code = run(RunConfig("solve", network=feeder_file, controller="gp", out=tmp_path, max_iters=2))
    assert code == 4


def test_simulate_is_reproducible(feeder_file, tmp_path):
    outputs = []
    for name in ("a", "b"):
        config = RunConfig(
            "simulate", network=feeder_file, out=tmp_path / name, seed=9,
            noise_std=1e-3, options={"steps": 12, "baseline": True},
        )
        assert run(config) == 0
        outputs.append((tmp_path / name / "trace.csv").read_bytes())
    assert outputs[0] == outputs[1]
    summary = json.loads((tmp_path / "a" / "summary.json").read_text(encoding="utf-8"))
    assert set(summary) == {"controlled", "baseline"}
    assert (tmp_path / "a" / "baseline_trace.csv").exists()


def test_simulate_all_controllers(feeder_file, tmp_path):
    config = RunConfig("simulate", network=feeder_file, controller="all", out=tmp_path,
                       control_period=10.0, options={"steps": 6})
    assert run(config) == 0
    frame = pd.read_csv(tmp_path / "comparison.csv")
    assert list(frame["controller"]) == ["pnm", "dsgp", "gp"]
    for controller in ("pnm", "dsgp", "gp"):
        assert (tmp_path / controller / "trace.csv").exists()
    assert len(pd.read_csv(tmp_path / "pnm" / "trace.csv")) == 6


def test_bench_single_network(tmp_path, write_json):
    doc = generate_feeder(10, seed=100)
    path = write_json("bench_feeder.json", doc)
    code = run(RunConfig("bench", network=path, out=tmp_path))
    frame = pd.read_csv(tmp_path / "bench.csv")
    assert list(frame["controller"]) == ["pnm", "dsgp", "gp"]
    assert code == (0 if frame["converged"].all() else 4)
    iterations = dict(zip(frame["controller"], frame["iterations"]))
    assert iterations["pnm"] < iterations["dsgp"] < iterations["gp"]


def test_bench_unconverged_is_convergence_error(tmp_path, write_json, caplog):
    path = write_json("bench_feeder.json", generate_feeder(10, seed=100))
    with caplog.at_level(logging.ERROR):
        code = run(RunConfig("bench", network=path, out=tmp_path, max_iters=2))
    assert code == 4
    frame = pd.read_csv(tmp_path / "bench.csv")
    assert not frame["converged"].all()
    assert any(r.levelno == logging.ERROR for r in caplog.records)


def test_bench_generated_instances(tmp_path):
    config = RunConfig("bench", out=tmp_path, options={"instances": 2, "buses_min": 5, "buses_max": 8})
    code = run(config)
    frame = pd.read_csv(tmp_path / "bench.csv")
    assert code == (0 if frame["converged"].all() else 4)
    assert len(frame) == 6
    assert frame["instance"].nunique() == 2


def test_mpc_schedule(write_json, tmp_path):
    doc = generate_feeder(6, seed=0, options=FeederOptions(with_devices=True))
    path = write_json("devices.json", doc)
    config = RunConfig("mpc", network=path, out=tmp_path,
                       options={"horizon": 2, "periods": 2, "load_scale": 1.2})
    assert run(config) == 0
    payload = json.loads((tmp_path / "schedule.json").read_text(encoding="utf-8"))
    assert len(payload["periods"]) == 2
    first = payload["periods"][0]
    assert first["command"]["n_tap"] == first["schedule"]["n_tap"][0]


def test_mpc_enumeration_cap_is_config_error(write_json, tmp_path):
    doc = generate_feeder(6, seed=0, options=FeederOptions(with_devices=True))
    path = write_json("devices.json", doc)
    config = RunConfig("mpc", network=path, out=tmp_path, options={"horizon": 3, "enumeration_cap": 10})
    assert run(config) == 2


def test_bad_network_is_data_error(write_json, tmp_path):
    doc = single_phase_doc({1: 0, 2: 1})
    doc["segments"].append({"from": 2, "to": 1, "phases": "a", "z_pu": [[0.0, 0.1]]})
    path = write_json("cycle.json", doc)
    assert run(RunConfig("powerflow", network=path, out=tmp_path)) == 3


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(subcommand="solve"),
        dict(subcommand="solve", network="missing.json"),
        dict(subcommand="solve", controller="none"),
        dict(subcommand="simulate", beta=1.5),
        dict(subcommand="simulate", control_period=0.0),
        dict(subcommand="fly"),
    ],
)
def test_config_errors(kwargs, tmp_path):
    if kwargs.get("network"):
        kwargs["network"] = tmp_path / kwargs["network"]
    with pytest.raises(ConfigError):
        RunConfig(**kwargs)


def test_main_exit_codes(feeder_file, tmp_path):
    with pytest.raises(SystemExit) as exc:
        cli.main(["solve", "--network", str(feeder_file), "--out", str(tmp_path), "--beta", "0.7"])
    assert exc.value.code == 0
    with pytest.raises(SystemExit) as exc:
        cli.main(["solve", "--network", str(tmp_path / "missing.json")])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        cli.main(["solve", "--network", str(feeder_file), "--delta", "0.9"])
    assert exc.value.code == 2


def test_config_from_args(feeder_file, tmp_path):
    config = config_from_args([
        "simulate", "--network", str(feeder_file), "--out", str(tmp_path),
        "--controller", "dsgp", "--steps", "5", "--stale-c", "--noise-std", "0.001",
    ])
    assert config.controller == "dsgp"
    assert config.option("steps") == 5
    assert config.option("stale_c") is True
    assert config.noise_std == 0.001
    assert config.controller_config().beta == 0.5
