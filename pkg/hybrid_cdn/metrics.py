"""
度量：按链路方向统计字节数、分组数和唯一载荷（链路压力），下载完成记录、CDF 与 CSV 导出
"""

import csv
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from .network import STRESS_KINDS, Packet
from .topology import LinkKind, Topology

logger = logging.getLogger(__name__)

LINK_COLUMNS = ["link", "direction", "bytes", "packets_total", "packets_unique", "stress", "drops", "content_bytes"]
COMPLETION_COLUMNS = ["client", "start_s", "finish_s", "bytes", "retx"]
CDF_COLUMNS = ["time_s", "fraction"]


def fmt(value: Optional[float]) -> str:
    return "" if value is None else f"{value:.6f}"


@dataclass
class DirectionLedger:
    bytes_total: int = 0
    content_bytes: int = 0
    packets_total: int = 0
    fingerprints: Counter = field(default_factory=Counter)
    drops: int = 0

    @property
    def packets_unique(self) -> int:
        return len(self.fingerprints)

    @property
    def stress(self) -> Optional[float]:
        if not self.fingerprints:
            return None
        return self.packets_total / len(self.fingerprints)


class LinkLedger:
    """在发送入队时计数（含之后被丢弃的分组）；只有带载荷的数据/多播数据分组计入压力"""

    def __init__(self, keep_log: bool = False):
        self._entries: Dict[Tuple[str, str], DirectionLedger] = {}
        self.keep_log = keep_log
        self.log: List[Tuple[str, str, bytes]] = []

    def _entry(self, link: str, direction: str) -> DirectionLedger:
        key = (link, direction)
        entry = self._entries.get(key)
        if entry is None:
            entry = self._entries[key] = DirectionLedger()
        return entry

    def record_packet(self, link: str, direction: str, packet: Packet) -> None:
        entry = self._entry(link, direction)
        entry.bytes_total += packet.size
        if packet.kind in STRESS_KINDS and packet.payload_bytes > 0:
            entry.packets_total += 1
            entry.content_bytes += packet.payload_bytes
            entry.fingerprints[packet.fingerprint] += 1
            if self.keep_log:
                self.log.append((link, direction, packet.fingerprint))

    def record_drop(self, link: str, direction: str) -> None:
        self._entry(link, direction).drops += 1

    def get(self, link: str, direction: str) -> DirectionLedger:
        return self._entries.get((link, direction)) or DirectionLedger()

    def stress(self, link: str, direction: str) -> Optional[float]:
        return self.get(link, direction).stress

    def items(self) -> List[Tuple[Tuple[str, str], DirectionLedger]]:
        return sorted(self._entries.items())

    def __len__(self) -> int:
        return len(self._entries)


def record_packet(ledger: LinkLedger, link: str, direction: str, packet: Packet) -> None:
    ledger.record_packet(link, direction, packet)


def stress(ledger: LinkLedger, link: str, direction: str) -> Optional[float]:
    return ledger.stress(link, direction)


@dataclass
class DownloadRecord:
    client: str
    start: float
    finish: Optional[float] = None
    bytes_received: int = 0
    retransmissions: int = 0
    failed: bool = False

    @property
    def completed(self) -> bool:
        return self.finish is not None and not self.failed

    @property
    def duration(self) -> Optional[float]:
        return self.finish - self.start if self.completed else None


def completion_cdf(records: Sequence[DownloadRecord]) -> List[Tuple[float, float]]:
    """(下载耗时, 已完成比例)；分母是全部客户端"""
    total = len(records)
    if total == 0:
        return []
    durations = sorted(r.duration for r in records if r.completed)
    series: List[Tuple[float, float]] = []
    for i, t in enumerate(durations, start=1):
        if series and series[-1][0] == t:
            series[-1] = (t, i / total)
        else:
            series.append((t, i / total))
    return series


def mean_completion(records: Sequence[DownloadRecord]) -> Optional[float]:
    done = [r.duration for r in records if r.completed]
    return sum(done) / len(done) if done else None


@dataclass
class LinkClassSummary:
    bytes_total: int
    content_bytes: int
    mean_downlink_stress: Optional[float]


def link_class_summary(ledger: LinkLedger, topology: Topology, kind: LinkKind) -> LinkClassSummary:
    total = content = 0
    stresses: List[float] = []
    for link in topology.links_of_kind(kind):
        for end in link.endpoints:
            entry = ledger.get(link.name, link.direction(end))
            total += entry.bytes_total
            content += entry.content_bytes
        down = ledger.stress(link.name, topology.downlink(link.name))
        if down is not None:
            stresses.append(down)
    return LinkClassSummary(total, content, sum(stresses) / len(stresses) if stresses else None)


def core_summary(ledger: LinkLedger, topology: Topology) -> LinkClassSummary:
    return link_class_summary(ledger, topology, LinkKind.CORE)


def access_summary(ledger: LinkLedger, topology: Topology) -> LinkClassSummary:
    return link_class_summary(ledger, topology, LinkKind.ACCESS)


def export_csv(ledger: LinkLedger, records: Iterable[DownloadRecord], out_dir: Path) -> Dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = list(records)
    paths = {name: out_dir / f"{name}.csv" for name in ("links", "completions", "cdf")}

    with open(paths["links"], "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(LINK_COLUMNS)
        for (link, direction), entry in ledger.items():
            writer.writerow([
                link, direction, entry.bytes_total, entry.packets_total, entry.packets_unique,
                fmt(entry.stress), entry.drops, entry.content_bytes,
            ])

    with open(paths["completions"], "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(COMPLETION_COLUMNS)
        for r in sorted(records, key=lambda r: r.client):
            writer.writerow([
                r.client, fmt(r.start), fmt(r.finish if r.completed else None),
                r.bytes_received, r.retransmissions,
            ])

    with open(paths["cdf"], "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(CDF_COLUMNS)
        for t, frac in completion_cdf(records):
            writer.writerow([fmt(t), fmt(frac)])
    return paths
