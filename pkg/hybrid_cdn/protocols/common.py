"""一次模型运行共享的上下文：网络、账本、下载记录、随机启动时间和结束条件"""

import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, Iterable, List, Optional, Set

from ..chunking import PieceStore
from ..config import EngineSettings, ProtocolSettings
from ..engine import Simulator
from ..errors import ExperimentError
from ..metrics import DownloadRecord, LinkLedger
from ..network import Network
from ..topology import RoutingTable, Topology, compute_routes
from .handshake import TraceEntry, TransferSession

logger = logging.getLogger(__name__)


@lru_cache(maxsize=8)
def routes_for(topology: Topology) -> RoutingTable:
    return compute_routes(topology)


class RunContext:
    def __init__(
        self,
        sim: Simulator,
        topology: Topology,
        engine: Optional[EngineSettings] = None,
        protocol: Optional[ProtocolSettings] = None,
        ledger: Optional[LinkLedger] = None,
        routes: Optional[RoutingTable] = None,
        trace: Optional[List[TraceEntry]] = None,
    ):
        self.sim = sim
        self.topology = topology
        self.engine = engine or EngineSettings()
        self.protocol = protocol or ProtocolSettings()
        self.ledger = ledger if ledger is not None else LinkLedger()
        self.network = Network(sim, topology, routes or routes_for(topology), self.ledger, self.engine)
        self.trace = trace
        self.records: Dict[str, DownloadRecord] = {}
        self._pending: Set[str] = set()

    def rng(self, name: str):
        return self.sim.streams.stream(name)

    def start_time(self, node: str) -> float:
        jitter = self.protocol.start_jitter
        return float(self.rng(f"start:{node}").uniform(0.0, jitter)) if jitter > 0 else 0.0

    def seeder(self) -> str:
        seeders = self.topology.seeders
        if not seeders:
            raise ExperimentError("拓扑中没有 seeder")
        return seeders[0]

    def clients(self, clients: Optional[Iterable[str]] = None) -> List[str]:
        if clients is None:
            return list(self.topology.clients)
        chosen = list(clients)
        known = set(self.topology.clients)
        unknown = [c for c in chosen if c not in known]
        if unknown:
            raise ExperimentError(f"不是客户端节点: {', '.join(unknown)}")
        return chosen

    def track(self, client: str, start: float) -> DownloadRecord:
        record = DownloadRecord(client, start)
        self.records[client] = record
        self._pending.add(client)
        return record

    def finish(self, client: str, bytes_received: Optional[int] = None) -> None:
        record = self.records[client]
        if record.finish is not None or record.failed:
            return
        record.finish = max(self.sim.now, record.start)
        if bytes_received is not None:
            record.bytes_received = bytes_received
        logger.debug("%s 在 t=%.3f 完成下载", client, record.finish)
        self._settle(client)

    def fail(self, client: str, reason: str) -> None:
        record = self.records[client]
        if record.finish is not None or record.failed:
            return
        record.failed = True
        logger.warning("%s 下载失败: %s", client, reason)
        self._settle(client)

    def _settle(self, client: str) -> None:
        self._pending.discard(client)
        if not self._pending:
            self.sim.stop()

    @property
    def pending(self) -> Set[str]:
        return set(self._pending)

    def run(self) -> float:
        if self._pending:
            self.sim.run(until=self.protocol.max_sim_time)
        for flow in self.network.cbr_flows:
            flow.stop()
        for client in sorted(self._pending):
            self.fail(client, f"超过最大模拟时间 {self.protocol.max_sim_time}s")
        return self.sim.now


@dataclass
class ModelOutcome:
    model: str
    records: List[DownloadRecord]
    stores: Dict[str, PieceStore]
    ledger: LinkLedger
    network: Network
    sim_time: float
    sessions: List[TransferSession] = field(default_factory=list)
    multicasts: int = 0
    suppressed: int = 0
    repairs: int = 0
    yielded: int = 0

    @property
    def completed(self) -> List[DownloadRecord]:
        return [r for r in self.records if r.completed]

    @property
    def failed(self) -> List[DownloadRecord]:
        return [r for r in self.records if not r.completed]
