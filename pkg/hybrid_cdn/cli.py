"""
控制台入口：hybrid-cdn simulate / compare / sweep / topology / pieces / presets / history / serve

退出码：0 成功；1 配置或拓扑错误；2 运行失败。
"""

import argparse
import json
import logging
import socket
import sys
from pathlib import Path
from typing import Any, Dict, Optional, Sequence

from .chunking import DEFAULT_PIECE_SIZE, piece_table
from .config import ConfigStore, ExperimentConfig, RunHistory, build_config, parse_percent_list
from .errors import ChunkError, ConfigError, SimulationError, TopologyError
from .experiments import AggregateReport, compare_models, run_experiment, sweep
from .metrics import fmt
from .topology import BUILTIN_TOPOLOGIES, serialize_topology

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUN = 2

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def _experiment_flags(p: argparse.ArgumentParser, with_model: bool = True) -> None:
    if with_model:
        p.add_argument("--model", choices=["www", "p2p", "hybrid"], help="分发模型（默认 hybrid）")
    p.add_argument("--topology", help="拓扑文件路径，或 builtin:paper / builtin:scenario")
    p.add_argument("--file-size", type=int, help="文件大小（字节）")
    p.add_argument("--piece-size", type=int, help="分块大小（字节）")
    p.add_argument("--runs", type=int, help="重复次数")
    p.add_argument("--seed", type=int, help="基准种子，第 i 次运行使用 seed+i")
    p.add_argument("--loss", help="丢包率百分比，单值或逗号分隔列表，如 0,1,2")
    p.add_argument("--cbr", help="CBR 背景流占瓶颈带宽的百分比，单值或列表")
    p.add_argument("--loss-scope", choices=["spokes", "lan", "all"], help="丢包施加范围")
    p.add_argument("--out", help="输出目录")
    p.add_argument("--workers", type=int, help="并行进程数")
    p.add_argument("--preset", help="saved_configs.json 中的预设名称或 id")
    p.add_argument("--config", help="JSON 配置文件（覆盖预设）")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hybrid-cdn", description="Hybrid CDN / P2P / WWW 分发模拟器")
    parser.add_argument("--log-level", default="INFO", help="日志级别（默认 INFO）")
    sub = parser.add_subparsers(dest="command", required=True)

    _experiment_flags(sub.add_parser("simulate", help="运行单个模型（loss/cbr 为列表时自动扫描）"))
    compare = sub.add_parser("compare", help="在相同种子下对比三种模型")
    _experiment_flags(compare, with_model=False)
    compare.add_argument("--models", default="www,p2p,hybrid", help="参与对比的模型，逗号分隔")
    _experiment_flags(sub.add_parser("sweep", help="对 loss 或 cbr 列表逐点运行"))

    topo = sub.add_parser("topology", help="拓扑工具")
    topo_sub = topo.add_subparsers(dest="topology_command", required=True)
    printer = topo_sub.add_parser("print-builtin", help="以配置文件格式输出内置拓扑")
    printer.add_argument("--name", default="paper", choices=sorted(BUILTIN_TOPOLOGIES))

    pieces = sub.add_parser("pieces", help="为真实文件生成分块表")
    pieces.add_argument("file")
    pieces.add_argument("--piece-size", type=int, default=DEFAULT_PIECE_SIZE)
    pieces.add_argument("--algorithm", default="sha1")

    presets = sub.add_parser("presets", help="管理实验预设")
    presets_sub = presets.add_subparsers(dest="presets_command", required=True)
    presets_sub.add_parser("list")
    save = presets_sub.add_parser("save")
    save.add_argument("name")
    _experiment_flags(save)
    drop = presets_sub.add_parser("delete")
    drop.add_argument("id")

    history = sub.add_parser("history", help="查看运行历史")
    history_sub = history.add_subparsers(dest="history_command", required=True)
    history_sub.add_parser("list")
    forget = history_sub.add_parser("delete")
    forget.add_argument("id")

    serve = sub.add_parser("serve", help="启动 HTTP 接口（uvicorn）")
    serve.add_argument("--host", default="0.0.0.0")
    serve.add_argument("--port", type=int, default=8000)
    serve.add_argument("--reload", action="store_true", help="代码变更时自动重启")
    return parser


def config_from_args(args: argparse.Namespace, store: Optional[ConfigStore] = None) -> ExperimentConfig:
    """预设 < --config 文件 < 命令行参数"""
    data: Dict[str, Any] = {}
    if getattr(args, "preset", None):
        data = (store or ConfigStore()).get(args.preset).model_dump(mode="json")
    if getattr(args, "config", None):
        try:
            data.update(json.loads(Path(args.config).read_text(encoding="utf-8")))
        except (OSError, ValueError) as e:
            raise ConfigError(f"无法读取配置文件 {args.config}: {e}") from e
    overrides = {
        "model": getattr(args, "model", None),
        "topology": args.topology,
        "file_size": args.file_size,
        "piece_size": args.piece_size,
        "runs": args.runs,
        "base_seed": args.seed,
        "loss": parse_percent_list(args.loss) if args.loss is not None else None,
        "cbr": parse_percent_list(args.cbr) if args.cbr is not None else None,
        "loss_scope": args.loss_scope,
        "out_dir": args.out,
        "workers": args.workers,
    }
    return build_config(data, **overrides)


def _print_report(report: AggregateReport) -> None:
    print(
        f"{report.model:<7} loss={report.loss * 100:g}% cbr={report.cbr * 100:g}% "
        f"runs={len(report.ok_runs)}/{len(report.runs)} "
        f"完成时间 mean={fmt(report.mean_completion)} min={fmt(report.min_completion)} max={fmt(report.max_completion)} "
        f"核心链路 stress={fmt(report.mean_core_stress)} bytes={fmt(report.mean_core_bytes)}"
    )


def cmd_simulate(args: argparse.Namespace, store: ConfigStore, history: RunHistory) -> int:
    config = config_from_args(args, store)
    if config.swept_axis() is not None:
        return _sweep(config, history)
    report = run_experiment(config)
    _print_report(report)
    history.append("simulate", config, report.out_dir, report.headline())
    return EXIT_OK


def _sweep(config: ExperimentConfig, history: RunHistory) -> int:
    reports = sweep(config)
    for report in reports:
        _print_report(report)
    history.append("sweep", config, config.out_dir, {"points": [r.headline() for r in reports]})
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace, store: ConfigStore, history: RunHistory) -> int:
    return _sweep(config_from_args(args, store), history)


def cmd_compare(args: argparse.Namespace, store: ConfigStore, history: RunHistory) -> int:
    config = config_from_args(args, store)
    models = [m.strip() for m in args.models.split(",") if m.strip()]
    result = compare_models(config, models)
    for name in result.models:
        _print_report(result.reports[name])
    for row in result.rows():
        print(",".join(row))
    history.append("compare", config, result.out_dir, {m: r.headline() for m, r in result.reports.items()})
    return EXIT_OK


def cmd_topology(args: argparse.Namespace) -> int:
    sys.stdout.write(serialize_topology(BUILTIN_TOPOLOGIES[args.name]()))
    return EXIT_OK


def cmd_pieces(args: argparse.Namespace) -> int:
    print("index,offset,length,digest")
    for row in piece_table(args.file, args.piece_size, args.algorithm):
        print(f"{row['index']},{row['offset']},{row['length']},{row['digest']}")
    return EXIT_OK


def cmd_presets(args: argparse.Namespace, store: ConfigStore) -> int:
    if args.presets_command == "list":
        for preset in store.load()["experiments"]:
            print(f"{preset['id']}  {preset['name']}  {preset.get('created_at', '')}")
    elif args.presets_command == "save":
        print(store.add(args.name, config_from_args(args, store)))
    elif not store.delete(args.id):
        raise ConfigError(f"未找到预设: {args.id}")
    return EXIT_OK


def cmd_history(args: argparse.Namespace, history: RunHistory) -> int:
    if args.history_command == "list":
        for record in history.load():
            print(f"{record['id']}  {record['kind']:<8} {record.get('created_at', '')}  {record.get('out_dir', '')}")
    elif not history.delete(args.id):
        raise ConfigError(f"未找到历史记录: {args.id}")
    return EXIT_OK


def port_busy(host: str, port: int) -> bool:
    with socket.socket(socket.AF_INET, socket.SOCK_STREAM) as s:
        try:
            s.bind((host, port))
        except OSError:
            return True
    return False


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    if port_busy(args.host, args.port):
        raise ConfigError(f"端口 {args.port} 已被占用，可换一个端口: hybrid-cdn serve --port {args.port + 1}")
    logger.info("🚀 HTTP 接口: http://%s:%d/docs （Ctrl+C 停止）", args.host, args.port)
    uvicorn.run("hybrid_cdn.api:app", host=args.host, port=args.port, reload=args.reload)
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None, store: Optional[ConfigStore] = None,
         history: Optional[RunHistory] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format=LOG_FORMAT)
    store = store or ConfigStore()
    history = history or RunHistory()
    try:
        if args.command == "simulate":
            return cmd_simulate(args, store, history)
        if args.command == "sweep":
            return cmd_sweep(args, store, history)
        if args.command == "compare":
            return cmd_compare(args, store, history)
        if args.command == "topology":
            return cmd_topology(args)
        if args.command == "pieces":
            return cmd_pieces(args)
        if args.command == "presets":
            return cmd_presets(args, store)
        if args.command == "serve":
            return cmd_serve(args)
        return cmd_history(args, history)
    except (ConfigError, TopologyError, ChunkError) as e:
        logger.error("%s", e)
        return EXIT_CONFIG
    except SimulationError as e:
        logger.error("运行失败: %s", e)
        return EXIT_RUN


if __name__ == "__main__":
    sys.exit(main())
