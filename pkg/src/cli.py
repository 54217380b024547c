#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
批次命令列介面
子命令：powerflow / solve / simulate / bench / mpc / generate
所有輸出皆為 CSV 或 JSON 檔案，寫入 --out 指定的目錄
"""

import argparse
import dataclasses
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from .netmodel import (
    NetworkModel,
    LinearSensitivityModel,
    load_network,
    network_from_document,
    build_linear_model,
    compute_c,
)
from .linflow import OperatingPoint, predict_voltages
from .plant import PlantConfig, solve_nonlinear
from .pnm import ControllerConfig, METHODS, BENCH_CONVERGENCE_TOL, solve, gradient, check_kkt
from .scenario import (
    ScenarioSeries,
    load_scenario,
    read_scenario_document,
    scenario_network_path,
    static_scenario,
    dynamic_scenario,
    nominal_scenario_document,
)
from .online import SimulationConfig, estimate_var_limits, run_simulation, write_trace
from .upperlayer import MpcSettings, devices_from_network, run_receding_horizon
from .tools.feeder_generator import FeederOptions, generate_feeder
from .utils import (
    setup_logger,
    Config,
    ConfigError,
    VoltVarError,
    EXIT_CODES,
    exit_code_for,
    format_duration,
)

logger = setup_logger(__name__)

SUBCOMMANDS = ("powerflow", "solve", "simulate", "bench", "mpc", "generate")
CONTROLLER_CHOICES = {
    "solve": METHODS,
    "simulate": METHODS + ("none", "all"),
}
NEEDS_NETWORK = ("powerflow", "solve", "mpc")


# --------------------------------
# 設定
# --------------------------------
@dataclass(frozen=True)
class RunConfig:
    """單次執行的設定（由命令列參數建立）"""
    subcommand: str
    network: Optional[Path] = None
    scenario: Optional[Path] = None
    controller: str = "pnm"
    out: Optional[Path] = None
    seed: int = 0
    epsilon: Optional[float] = None
    beta: Optional[float] = None
    delta: Optional[float] = None
    max_iters: Optional[int] = None
    tol: Optional[float] = None
    control_period: Optional[float] = None
    noise_std: Optional[float] = None
    show_progress: bool = False
    options: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.subcommand not in SUBCOMMANDS:
            raise ConfigError(f"未知的子命令: {self.subcommand}")
        choices = CONTROLLER_CHOICES.get(self.subcommand)
        if choices is not None and self.controller not in choices:
            raise ConfigError(
                f"{self.subcommand} 不支援控制器 {self.controller}（可用: {', '.join(choices)}）"
            )
        for name in ("network", "scenario"):
            path = getattr(self, name)
            if path is not None:
                path = Path(path)
                object.__setattr__(self, name, path)
                if not path.exists():
                    raise ConfigError(f"--{name} 指定的檔案不存在: {path}")
        if self.subcommand in NEEDS_NETWORK and self.network is None and self.scenario is None:
            raise ConfigError(f"{self.subcommand} 需要 --network（或引用網路檔的 --scenario）")
        if self.control_period is not None and not self.control_period > 0:
            raise ConfigError("--control-period 必須為正")
        if self.noise_std is not None and self.noise_std < 0:
            raise ConfigError("--noise-std 不可為負")
        out = Path(self.out) if self.out is not None else Config.OUTPUT_DIR / self.subcommand
        object.__setattr__(self, "out", out)
        object.__setattr__(self, "options", dict(self.options))
        # 提早驗證參數範圍
        self.controller_config()

    def controller_config(self, **defaults) -> ControllerConfig:
        """命令列覆寫後的求解器參數"""
        base = ControllerConfig().replace(**defaults)
        return base.replace(
            epsilon=self.epsilon,
            beta=self.beta,
            delta=self.delta,
            max_iterations=self.max_iters,
            convergence_tol=self.tol,
        )

    def option(self, name: str, default: Any = None) -> Any:
        value = self.options.get(name)
        return default if value is None else value


# --------------------------------
# 共用
# --------------------------------
def _write_json(path: Path, payload: Any) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, ensure_ascii=False, indent=2), encoding="utf-8")


def _resolve_network(config: RunConfig) -> NetworkModel:
    if config.network is not None:
        return load_network(config.network)
    if config.scenario is not None:
        doc = read_scenario_document(config.scenario)
        path = scenario_network_path(doc, config.scenario)
        if path is not None:
            return load_network(path)
    raise ConfigError("未指定網路檔，且情境文件沒有引用網路")


def _resolve_scenario(config: RunConfig, net: NetworkModel, dynamic: bool = False) -> ScenarioSeries:
    if config.scenario is not None:
        scenario = load_scenario(config.scenario, net)
    elif dynamic:
        scenario = dynamic_scenario(
            net,
            steps=int(config.option("steps", 360)),
            seed=config.seed,
            load_scale=float(config.option("load_scale", 1.0)),
        )
    else:
        scenario = static_scenario(
            net,
            steps=int(config.option("steps", 1)),
            load_scale=float(config.option("load_scale", 1.0)),
        )
    changes = {}
    if config.control_period is not None:
        changes["control_period_s"] = config.control_period
    if config.noise_std is not None:
        changes["measurement_noise_std"] = config.noise_std
    return dataclasses.replace(scenario, **changes) if changes else scenario


def _static_inputs(net: NetworkModel, scenario: ScenarioSeries, model: LinearSensitivityModel):
    data = scenario.at(0.0)
    limits = estimate_var_limits(scenario.inverter_capacity, data.pv_real)
    c = compute_c(model, data.v0, data.p, data.qc)
    return data, limits, c


# --------------------------------
# 子命令
# --------------------------------
def run_powerflow(config: RunConfig) -> int:
    """單次非線性潮流（qg = 0），輸出 voltages.csv"""
    net = _resolve_network(config)
    scenario = _resolve_scenario(config, net)
    data = scenario.at(0.0)
    point = OperatingPoint(v0=data.v0, p=data.p, qc=data.qc)
    solution = solve_nonlinear(net, point, np.zeros(net.m), PlantConfig())
    model = build_linear_model(net)
    linear = predict_voltages(model, np.zeros(net.m), compute_c(model, data.v0, data.p, data.qc))

    frame = pd.DataFrame({
        "node": net.node_labels,
        "bus": [bus for bus, _ in net.node_keys],
        "phase": [phase for _, phase in net.node_keys],
        "v_squared": solution.squared_magnitudes,
        "v_magnitude": np.abs(solution.complex_voltages),
        "angle_deg": np.degrees(np.angle(solution.complex_voltages)),
        "v_linear": linear.v,
    })
    config.out.mkdir(parents=True, exist_ok=True)
    path = config.out / "voltages.csv"
    frame.to_csv(path, index=False)
    logger.info(
        f"✅ 潮流收斂 ({solution.iterations} 次迭代): |V| ∈ "
        f"[{frame['v_magnitude'].min():.4f}, {frame['v_magnitude'].max():.4f}] → {path}"
    )
    return 0


def run_solve(config: RunConfig) -> int:
    """離線求解（情境第一步或標稱負載），輸出 convergence.csv 與 solution.json"""
    net = _resolve_network(config)
    model = build_linear_model(net)
    scenario = _resolve_scenario(config, net)
    _, limits, c = _static_inputs(net, scenario, model)
    cfg = config.controller_config()

    start = time.time()
    result = solve(config.controller, model, c, 1.0, limits, cfg)
    elapsed = time.time() - start
    grad = gradient(model, model.m_matrix @ result.qg + c, 1.0)
    kkt = check_kkt(result.qg, grad, limits)

    config.out.mkdir(parents=True, exist_ok=True)
    pd.DataFrame({
        "iteration": np.arange(len(result.trace)),
        "objective": result.trace,
        "backtracks": [0] + result.backtracks,
        "active_set_size": [0] + result.active_set_sizes,
    }).to_csv(config.out / "convergence.csv", index=False)
    _write_json(config.out / "solution.json", {
        "controller": config.controller,
        "iterations": result.iterations,
        "converged": result.converged,
        "objective": result.objective,
        "kkt_residual": kkt.residual,
        "kkt_passed": kkt.passed,
        "runtime_s": elapsed,
        "qg": dict(zip(net.node_labels, result.qg.tolist())),
    })
    logger.info(
        f"✅ [{config.controller}] {result.iterations} 次迭代, h={result.objective:.6g}, "
        f"KKT 殘差 {kkt.residual:.2e}, 耗時 {format_duration(elapsed)}"
    )
    if not result.converged:
        logger.error(f"❌ [{config.controller}] 未在 {cfg.max_iterations} 次迭代內收斂")
        return EXIT_CODES["convergence"]
    return 0


def run_simulate(config: RunConfig) -> int:
    """閉迴路模擬；--controller all 時另輸出 comparison.csv"""
    net = _resolve_network(config)
    model = build_linear_model(net)
    scenario = _resolve_scenario(config, net, dynamic=True)
    controllers = ("pnm", "dsgp", "gp") if config.controller == "all" else (config.controller,)
    baseline = bool(config.option("baseline", False))

    rows: List[Dict[str, Any]] = []
    failed = False
    for index, controller in enumerate(controllers):
        sim_cfg = SimulationConfig(
            controller=controller,
            controller_config=config.controller_config(),
            stale_c=bool(config.option("stale_c", False)),
            seed=config.seed,
            show_progress=config.show_progress,
        )
        trace = run_simulation(net, model, scenario, sim_cfg, with_baseline=baseline and index == 0)
        out_dir = config.out / controller if len(controllers) > 1 else config.out
        write_trace(trace, out_dir)
        failed = failed or trace.failed
        rows.append(trace.summary().to_dict())
        if trace.baseline is not None:
            rows.append(trace.baseline.summary().to_dict())

    if len(controllers) > 1:
        config.out.mkdir(parents=True, exist_ok=True)
        pd.DataFrame(rows).to_csv(config.out / "comparison.csv", index=False)
        logger.info(f"📊 控制器比較已儲存至: {config.out / 'comparison.csv'}")
    if failed:
        logger.error("❌ 模擬期間有潮流失敗的週期")
        return EXIT_CODES["convergence"]
    return 0


def _bench_instances(config: RunConfig) -> List[Tuple[str, NetworkModel]]:
    if config.network is not None or config.scenario is not None:
        net = _resolve_network(config)
        name = config.network.stem if config.network is not None else config.scenario.stem
        return [(name, net)]
    count = int(config.option("instances", 10))
    low = int(config.option("buses_min", 5))
    high = int(config.option("buses_max", 50))
    if not 2 <= low <= high:
        raise ConfigError(f"--buses-min / --buses-max 設定錯誤: {low}, {high}")
    options = FeederOptions(der_fraction=float(config.option("der_fraction", 0.3)))
    rng = np.random.default_rng(config.seed)
    instances = []
    for i in range(count):
        buses = int(rng.integers(low, high + 1))
        doc = generate_feeder(buses, seed=config.seed + i, options=options)
        instances.append((f"feeder_{i:03d}_{buses}bus", network_from_document(doc)))
    return instances


def run_bench(config: RunConfig) -> int:
    """在相同實例上比較 pnm / dsgp / gp，輸出 bench.csv；任一組未收斂時回傳收斂錯誤結束碼"""
    cfg = config.controller_config(convergence_tol=BENCH_CONVERGENCE_TOL, max_iterations=100_000)
    rows: List[Dict[str, Any]] = []
    instances = _bench_instances(config)
    for name, net in tqdm(instances, desc="基準比較", disable=not config.show_progress):
        model = build_linear_model(net)
        scenario = static_scenario(net, load_scale=float(config.option("load_scale", 1.0)))
        _, limits, c = _static_inputs(net, scenario, model)
        for method in METHODS:
            start = time.time()
            result = solve(method, model, c, 1.0, limits, cfg)
            elapsed = time.time() - start
            grad = gradient(model, model.m_matrix @ result.qg + c, 1.0)
            rows.append({
                "instance": name,
                "buses": len(net.buses),
                "m": net.m,
                "controller": method,
                "iterations": result.iterations,
                "final_objective": result.objective,
                "kkt_residual": check_kkt(result.qg, grad, limits).residual,
                "converged": result.converged,
                "runtime_s": round(elapsed, 6),
            })

    frame = pd.DataFrame(rows)
    config.out.mkdir(parents=True, exist_ok=True)
    frame.to_csv(config.out / "bench.csv", index=False)
    medians = frame.groupby("controller")["iterations"].median()
    logger.info("📊 迭代次數中位數: " + ", ".join(f"{k}={medians[k]:g}" for k in METHODS))
    failed = frame.loc[~frame["converged"], ["instance", "controller"]]
    if not failed.empty:
        listed = ", ".join(f"{row.instance}/{row.controller}" for row in failed.itertuples())
        logger.error(f"❌ {len(failed)} 組未在 {cfg.max_iterations} 次迭代內收斂: {listed}")
        return EXIT_CODES["convergence"]
    return 0


def run_mpc(config: RunConfig) -> int:
    """上層離散設備排程，輸出 schedule.json"""
    net = _resolve_network(config)
    model = build_linear_model(net)
    scenario = _resolve_scenario(config, net)
    weights = {
        key: config.options[f"weight_{key}"]
        for key in ("v", "tap", "cb")
        if config.options.get(f"weight_{key}") is not None
    }
    devices = devices_from_network(net, weights)
    horizon = int(config.option("horizon", 2))
    period = float(config.option("period", scenario.resolution_s))
    periods = int(config.option("periods", 1))
    settings = MpcSettings(
        enumeration_cap=int(config.option("enumeration_cap", MpcSettings().enumeration_cap)),
        show_progress=config.show_progress,
    )

    results = run_receding_horizon(model, scenario, devices, horizon, period, periods, settings)
    payload = {"horizon_steps": horizon, "period_s": period, "periods": []}
    for k, (schedule, command) in enumerate(results):
        payload["periods"].append({
            "start_s": k * period,
            "command": {"n_tap": command.n_tap.tolist(), "n_cb": command.n_cb.tolist()},
            "schedule": schedule.to_dict(),
        })
    _write_json(config.out / "schedule.json", payload)
    logger.info(f"✅ MPC 排程已儲存至: {config.out / 'schedule.json'}")
    return 0


def run_generate(config: RunConfig) -> int:
    """產生隨機饋線（可選擇同時產生情境文件）"""
    options = FeederOptions(
        der_fraction=float(config.option("der_fraction", 0.3)),
        three_phase_fraction=float(config.option("three_phase_fraction", 0.6)),
        two_phase_fraction=float(config.option("two_phase_fraction", 0.2)),
        with_devices=bool(config.option("with_devices", False)),
    )
    buses = int(config.option("buses", 25))
    count = int(config.option("count", 1))
    config.out.mkdir(parents=True, exist_ok=True)
    for i in range(count):
        seed = config.seed + i
        suffix = "" if count == 1 else f"_{i:03d}"
        doc = generate_feeder(buses, seed=seed, options=options)
        network_path = config.out / f"feeder{suffix}.json"
        _write_json(network_path, doc)
        if config.option("with_scenario", False):
            scenario_doc = nominal_scenario_document(network_path.name, steps=int(config.option("steps", 360)))
            _write_json(config.out / f"scenario{suffix}.json", scenario_doc)
    logger.info(f"✅ 已產生 {count} 個 {buses} 匯流排饋線 → {config.out}")
    return 0


HANDLERS = {
    "powerflow": run_powerflow,
    "solve": run_solve,
    "simulate": run_simulate,
    "bench": run_bench,
    "mpc": run_mpc,
    "generate": run_generate,
}


def run(config: RunConfig) -> int:
    """
    執行子命令

    Returns:
        結束碼：0 成功，2 設定錯誤，3 資料錯誤，4 未收斂，1 其他
    """
    start = time.time()
    try:
        code = HANDLERS[config.subcommand](config)
    except VoltVarError as e:
        logger.error(f"❌ {config.subcommand} 失敗 [{e.category}]: {e}")
        return exit_code_for(e)
    logger.info(f"{config.subcommand} 結束，耗時 {format_duration(time.time() - start)}")
    return code


# --------------------------------
# 命令列
# --------------------------------
def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--network", type=Path, help="網路文件 (JSON)")
    common.add_argument("--scenario", type=Path, help="情境文件 (JSON)")
    common.add_argument("--controller", default="pnm", help="pnm / dsgp / gp（simulate 另有 none / all）")
    common.add_argument("--out", type=Path, help="輸出目錄")
    common.add_argument("--seed", type=int, default=0, help="亂數種子")
    common.add_argument("--epsilon", type=float, help="主動集合門檻 ε")
    common.add_argument("--beta", type=float, help="線搜尋縮減因子 β")
    common.add_argument("--delta", type=float, help="Armijo 常數 δ")
    common.add_argument("--control-period", type=float, help="控制週期（秒）")
    common.add_argument("--noise-std", type=float, help="量測雜訊標準差")
    common.add_argument("--max-iters", type=int, help="最大迭代次數")
    common.add_argument("--tol", type=float, help="收斂門檻 ‖Δqg‖∞")
    common.add_argument("--progress", action="store_true", help="顯示進度條")

    parser = argparse.ArgumentParser(
        prog="voltvar",
        description="不平衡配電饋線的投影牛頓法電壓/無效功控制模擬器",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("powerflow", parents=[common], help="單次非線性潮流")
    p.add_argument("--load-scale", type=float, help="標稱負載倍率")

    p = sub.add_parser("solve", parents=[common], help="離線求解")
    p.add_argument("--load-scale", type=float, help="標稱負載倍率")

    p = sub.add_parser("simulate", parents=[common], help="閉迴路模擬")
    p.add_argument("--baseline", action="store_true", help="同時計算無控制基準")
    p.add_argument("--stale-c", action="store_true", help="c(t) 使用前一步的資料")
    p.add_argument("--steps", type=int, help="未指定情境時產生的日曲線點數")
    p.add_argument("--load-scale", type=float, help="標稱負載倍率")

    p = sub.add_parser("bench", parents=[common], help="pnm / dsgp / gp 迭代次數比較")
    p.add_argument("--instances", type=int, help="未指定網路時產生的饋線數")
    p.add_argument("--buses-min", type=int, help="產生饋線的最少匯流排數")
    p.add_argument("--buses-max", type=int, help="產生饋線的最多匯流排數")
    p.add_argument("--der-fraction", type=float, help="產生饋線的 DER 比例")
    p.add_argument("--load-scale", type=float, help="標稱負載倍率")

    p = sub.add_parser("mpc", parents=[common], help="OLTC / 電容器組排程")
    p.add_argument("--horizon", type=int, help="預測時域步數 N_p")
    p.add_argument("--period", type=float, help="時域步長（秒）")
    p.add_argument("--periods", type=int, help="滾動次數")
    p.add_argument("--enumeration-cap", type=int, help="列舉上限")
    p.add_argument("--weight-v", type=float, help="電壓偏差權重")
    p.add_argument("--weight-tap", type=float, help="分接頭變動權重")
    p.add_argument("--weight-cb", type=float, help="電容器組切換權重")

    p = sub.add_parser("generate", parents=[common], help="產生隨機測試饋線")
    p.add_argument("--buses", type=int, help="匯流排數")
    p.add_argument("--count", type=int, help="產生數量")
    p.add_argument("--der-fraction", type=float, help="DER 比例")
    p.add_argument("--three-phase-fraction", type=float, help="三相匯流排比例")
    p.add_argument("--two-phase-fraction", type=float, help="兩相匯流排比例")
    p.add_argument("--with-devices", action="store_true", help="加入 OLTC 與電容器組區段")
    p.add_argument("--with-scenario", action="store_true", help="同時產生情境文件")
    p.add_argument("--steps", type=int, help="情境點數")
    return parser


COMMON_FIELDS = (
    "network", "scenario", "controller", "out", "seed", "epsilon", "beta", "delta",
    "control_period", "noise_std", "max_iters", "tol",
)


def config_from_args(argv: Optional[Sequence[str]] = None) -> RunConfig:
    """解析命令列參數為 RunConfig"""
    args = vars(build_parser().parse_args(argv))
    subcommand = args.pop("subcommand")
    show_progress = args.pop("progress")
    common = {name: args.pop(name) for name in COMMON_FIELDS}
    return RunConfig(subcommand=subcommand, show_progress=show_progress, options=args, **common)


def main(argv: Optional[Sequence[str]] = None) -> None:
    """命令行入口"""
    try:
        config = config_from_args(argv)
    except VoltVarError as e:
        logger.error(f"❌ 參數錯誤: {e}")
        sys.exit(exit_code_for(e))
    sys.exit(run(config))


if __name__ == "__main__":
    main()
