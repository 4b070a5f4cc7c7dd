"""
实验运行器：按 base_seed+i 执行多次模拟，做丢包/CBR 扫描、三种模型对比，并输出 CSV 报告。
"""

import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .chunking import PieceStore, make_pieces, synthetic_file
from .config import ExperimentConfig, ModelName
from .engine import Simulator
from .errors import ConfigError, ExperimentError, SimulationError
from .metrics import (
    DownloadRecord, LinkClassSummary, access_summary, core_summary, export_csv, fmt, mean_completion,
)
from .network import Network
from .protocols import RunContext, runner_for
from .topology import HOST_KINDS, LinkKind, Topology, load_topology

logger = logging.getLogger(__name__)

SUMMARY_COLUMNS = ["metric", "link", "direction", "mean", "min", "max", "runs"]
SWEEP_COLUMNS = ["axis_value", "mean_completion_s", "mean_core_stress", "mean_core_bytes"]
COMPARE_COLUMNS = [
    "model", "mean_completion_s", "core_bytes", "core_content_bytes", "mean_core_stress",
    "completion_reduction_vs_www_pct", "completion_reduction_vs_p2p_pct",
    "core_bytes_reduction_vs_www_pct", "core_bytes_reduction_vs_p2p_pct",
]

LinkStats = Tuple[int, int, Optional[float]]


@dataclass
class RunResult:
    index: int
    seed: int
    records: List[DownloadRecord]
    links: Dict[Tuple[str, str], LinkStats]
    core: LinkClassSummary
    access: LinkClassSummary
    sim_time: float
    trace_digest: str
    integrity_ok: bool
    out_dir: Optional[str] = None
    multicasts: int = 0
    suppressed: int = 0
    repairs: int = 0
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None and self.integrity_ok and all(r.completed for r in self.records)

    @property
    def mean_completion(self) -> Optional[float]:
        return mean_completion(self.records)


@dataclass
class AggregateReport:
    model: str
    loss: float
    cbr: float
    runs: List[RunResult]
    out_dir: Optional[str] = None
    excluded: List[int] = field(default_factory=list)

    @property
    def ok_runs(self) -> List[RunResult]:
        return [r for r in self.runs if r.ok]

    def _durations(self) -> List[float]:
        return [rec.duration for run in self.ok_runs for rec in run.records if rec.completed]

    @property
    def mean_completion(self) -> Optional[float]:
        d = self._durations()
        return float(np.mean(d)) if d else None

    @property
    def min_completion(self) -> Optional[float]:
        d = self._durations()
        return float(np.min(d)) if d else None

    @property
    def max_completion(self) -> Optional[float]:
        d = self._durations()
        return float(np.max(d)) if d else None

    @property
    def mean_core_stress(self) -> Optional[float]:
        values = [r.core.mean_downlink_stress for r in self.ok_runs if r.core.mean_downlink_stress is not None]
        return float(np.mean(values)) if values else None

    @property
    def mean_core_bytes(self) -> Optional[float]:
        runs = self.ok_runs
        return float(np.mean([r.core.bytes_total for r in runs])) if runs else None

    @property
    def mean_core_content_bytes(self) -> Optional[float]:
        runs = self.ok_runs
        return float(np.mean([r.core.content_bytes for r in runs])) if runs else None

    def link_stats(self) -> Dict[Tuple[str, str], Dict[str, List[float]]]:
        stats: Dict[Tuple[str, str], Dict[str, List[float]]] = {}
        for run in self.ok_runs:
            for key, (total, content, stress) in run.links.items():
                entry = stats.setdefault(key, {"bytes": [], "content_bytes": [], "stress": []})
                entry["bytes"].append(total)
                entry["content_bytes"].append(content)
                if stress is not None:
                    entry["stress"].append(stress)
        return stats

    def headline(self) -> Dict[str, Optional[float]]:
        return {
            "model": self.model,
            "loss": self.loss,
            "cbr": self.cbr,
            "runs": len(self.ok_runs),
            "mean_completion_s": self.mean_completion,
            "mean_core_stress": self.mean_core_stress,
            "mean_core_bytes": self.mean_core_bytes,
        }


@dataclass
class CompareReport:
    reports: Dict[str, AggregateReport]
    models: Tuple[str, ...]
    out_dir: Optional[str] = None

    def reduction(self, model: str, baseline: str, metric: str) -> Optional[float]:
        if baseline not in self.reports:
            return None
        base = getattr(self.reports[baseline], metric)
        value = getattr(self.reports[model], metric)
        if base is None or value is None or base == 0:
            return None
        return (base - value) / base * 100.0

    def rows(self) -> List[List[str]]:
        out = []
        for model in self.models:
            r = self.reports[model]
            out.append([
                model, fmt(r.mean_completion), fmt(r.mean_core_bytes), fmt(r.mean_core_content_bytes),
                fmt(r.mean_core_stress),
                fmt(self.reduction(model, ModelName.WWW.value, "mean_completion")),
                fmt(self.reduction(model, ModelName.P2P.value, "mean_completion")),
                fmt(self.reduction(model, ModelName.WWW.value, "mean_core_bytes")),
                fmt(self.reduction(model, ModelName.P2P.value, "mean_core_bytes")),
            ])
        return out


# ---- 单次运行 ----

def spoke_links(topology: Topology, scope: str) -> List[str]:
    if scope == "all":
        return [l.name for l in topology.links]
    lan_links = topology.links_of_kind(LinkKind.LAN)
    if scope == "lan":
        return [l.name for l in lan_links]
    return [l.name for l in lan_links if any(topology.kind(e) in HOST_KINDS for e in l.endpoints)]


def apply_loss(network: Network, topology: Topology, rate: float, scope: str = "spokes") -> int:
    """在选定链路的两个方向上注入丢包；返回设置的方向数"""
    if rate <= 0:
        return 0
    count = 0
    for name in spoke_links(topology, scope):
        link = topology.link(name)
        for end in link.endpoints:
            network.set_loss(name, link.direction(end), rate)
            count += 1
    return count


def start_background(network: Network, topology: Topology, rate: float) -> List[Tuple[str, str]]:
    """每个岛随机选两个客户端之间跑一条 CBR 流"""
    if rate <= 0:
        return []
    groups = [(router, [h for h in topology.island_hosts(router) if h in topology.clients])
              for router, _ in topology.islands]
    if not groups:
        groups = [("all", list(topology.clients))]
    pairs = []
    for name, hosts in groups:
        if len(hosts) < 2:
            continue
        rng = network.sim.streams.stream(f"cbr-pick:{name}")
        a, b = rng.choice(len(hosts), size=2, replace=False)
        network.start_cbr(hosts[a], hosts[b], rate)
        pairs.append((hosts[a], hosts[b]))
    return pairs


def simulate_once(config: ExperimentConfig, index: int, out_dir: Optional[str] = None,
                  topology: Optional[Topology] = None) -> RunResult:
    """执行一次模拟（种子 base_seed + index）；模拟内部的错误记录在结果里而不是抛出"""
    seed = config.base_seed + index
    topology = topology or load_topology(config.topology, config.engine.queue_capacity)
    data = synthetic_file(config.file_size, config.base_seed)
    spec, pieces = make_pieces(data, config.piece_size, name="payload.bin")
    seeder_store = PieceStore.complete_copy(spec, pieces)
    sim = Simulator(seed)
    ctx = RunContext(sim, topology, config.engine, config.protocol)
    logger.info("run %d 开始: model=%s seed=%d loss=%.3f cbr=%.3f",
                index, config.model.value, seed, config.loss[0], config.cbr[0])
    try:
        apply_loss(ctx.network, topology, config.loss[0], config.loss_scope)
        start_background(ctx.network, topology, config.cbr[0])
        outcome = runner_for(config.model)(sim, topology, seeder_store, ctx=ctx)
    except SimulationError as e:
        logger.warning("run %d 失败: %s", index, e)
        empty = LinkClassSummary(0, 0, None)
        return RunResult(index, seed, [], {}, empty, empty, sim.now, sim.trace_digest, False, out_dir, error=str(e))

    integrity_ok = all(
        outcome.stores[r.client].assemble() == data for r in outcome.records if r.completed
    )
    links = {
        key: (entry.bytes_total, entry.content_bytes, entry.stress)
        for key, entry in ctx.ledger.items()
    }
    if out_dir is not None:
        export_csv(ctx.ledger, outcome.records, Path(out_dir))
    result = RunResult(
        index, seed, outcome.records, links,
        core_summary(ctx.ledger, topology), access_summary(ctx.ledger, topology),
        outcome.sim_time, sim.trace_digest, integrity_ok, out_dir,
        outcome.multicasts, outcome.suppressed, outcome.repairs,
    )
    logger.info("run %d 结束: t=%.3fs 平均完成时间=%s 失败客户端=%d",
                index, result.sim_time, fmt(result.mean_completion), len(outcome.failed))
    return result


# ---- 汇总 ----

def _validate(config: ExperimentConfig) -> Topology:
    try:
        return load_topology(config.topology, config.engine.queue_capacity)
    except SimulationError:
        raise
    except Exception as e:
        raise ConfigError(f"无法加载拓扑: {e}") from e


def _run_point(config: ExperimentConfig, out_dir: Path, topology: Topology) -> AggregateReport:
    out_dir.mkdir(parents=True, exist_ok=True)
    run_dirs = [str(out_dir / f"run-{i}") for i in range(config.runs)]
    if config.workers > 1 and config.runs > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            futures = [pool.submit(simulate_once, config, i, run_dirs[i]) for i in range(config.runs)]
            runs = [f.result() for f in futures]
    else:
        runs = [simulate_once(config, i, run_dirs[i], topology) for i in range(config.runs)]
    runs.sort(key=lambda r: r.index)

    report = AggregateReport(config.model.value, config.loss[0], config.cbr[0], runs, str(out_dir))
    for run in runs:
        if not run.ok:
            report.excluded.append(run.index)
            logger.warning("run %d 被排除在汇总之外: %s", run.index,
                           run.error or ("文件校验失败" if not run.integrity_ok else "有客户端未完成下载"))
    if not report.ok_runs:
        raise ExperimentError(f"{config.model.value}: {config.runs} 次运行全部失败")
    write_summary(report, out_dir / "summary.csv")
    return report


def write_summary(report: AggregateReport, path: Path) -> Path:
    def row(metric: str, link: str, direction: str, values: Sequence[float]) -> List[str]:
        if not values:
            return [metric, link, direction, "", "", "", "0"]
        arr = np.asarray(values, dtype=float)
        return [metric, link, direction, fmt(arr.mean()), fmt(arr.min()), fmt(arr.max()), str(len(values))]

    runs = report.ok_runs
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(SUMMARY_COLUMNS)
        writer.writerow(row("completion_s", "", "", report._durations()))
        writer.writerow(row("core_bytes", "", "", [r.core.bytes_total for r in runs]))
        writer.writerow(row("core_content_bytes", "", "", [r.core.content_bytes for r in runs]))
        writer.writerow(row("core_stress", "", "", [r.core.mean_downlink_stress for r in runs
                                                      if r.core.mean_downlink_stress is not None]))
        for (link, direction), stats in sorted(report.link_stats().items()):
            writer.writerow(row("bytes", link, direction, stats["bytes"]))
            writer.writerow(row("content_bytes", link, direction, stats["content_bytes"]))
            writer.writerow(row("stress", link, direction, stats["stress"]))
    return path


# ---- 对外操作 ----

def run_experiment(config: ExperimentConfig, out_dir: Optional[str] = None) -> AggregateReport:
    if config.swept_axis() is not None:
        raise ConfigError("loss / cbr 是列表时请使用 sweep")
    topology = _validate(config)
    return _run_point(config, Path(out_dir or config.out_dir), topology)


def sweep(config: ExperimentConfig, out_dir: Optional[str] = None) -> List[AggregateReport]:
    axis = config.swept_axis() or "loss"
    topology = _validate(config)
    base = Path(out_dir or config.out_dir)
    reports = []
    values = config.loss if axis == "loss" else config.cbr
    for value in values:
        point = config.at_point(value, config.cbr[0]) if axis == "loss" else config.at_point(config.loss[0], value)
        logger.info("扫描 %s = %.2f%%", axis, value * 100)
        reports.append(_run_point(point, base / f"{axis}-{value * 100:g}", topology))
    base.mkdir(parents=True, exist_ok=True)
    with open(base / "sweep.csv", "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(SWEEP_COLUMNS)
        for value, report in zip(values, reports):
            writer.writerow([fmt(value * 100), fmt(report.mean_completion),
                             fmt(report.mean_core_stress), fmt(report.mean_core_bytes)])
    return reports


def compare_models(
    config: ExperimentConfig,
    models: Sequence[str] = (ModelName.WWW.value, ModelName.P2P.value, ModelName.HYBRID.value),
    out_dir: Optional[str] = None,
) -> CompareReport:
    """在相同种子和拓扑上运行各模型，输出 compare.csv"""
    if config.swept_axis() is not None:
        raise ConfigError("compare 只接受单个 loss / cbr 取值")
    try:
        names = tuple(dict.fromkeys(ModelName(m).value for m in models))
    except ValueError as e:
        raise ConfigError(f"未知模型: {e}") from e
    if not names:
        raise ConfigError("至少需要一个模型")
    topology = _validate(config)
    base = Path(out_dir or config.out_dir)
    reports: Dict[str, AggregateReport] = {}
    for name in names:
        reports[name] = _run_point(config.model_copy(update={"model": ModelName(name)}), base / name, topology)
    report = CompareReport(reports, names, str(base))
    with open(base / "compare.csv", "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(COMPARE_COLUMNS)
        writer.writerows(report.rows())
    return report
