"""
分组传输：每条链路每个方向一个 drop-tail 队列，串行化 + 传播时延，按链路方向注入丢包，
主机本地背压、单播逐跳转发、岛内多播扇出以及 CBR 背景流。
"""

import hashlib
import itertools
import logging
from collections import deque
from dataclasses import dataclass, replace
from enum import Enum
from typing import Any, Callable, Deque, Dict, List, Optional, Tuple

from .config import EngineSettings
from .engine import Event, Simulator
from .errors import ConfigError, RoutingError
from .topology import HOST_KINDS, Hop, LinkSpec, RoutingTable, Topology, compute_routes

logger = logging.getLogger(__name__)


class PacketKind(str, Enum):
    DATA = "data"
    ACK = "ack"
    CONTROL = "control"
    MULTICAST_DATA = "multicast-data"
    CBR = "cbr"


STRESS_KINDS = frozenset({PacketKind.DATA, PacketKind.MULTICAST_DATA})

RESET = "rst"


@dataclass(slots=True)
class Packet:
    id: int
    kind: PacketKind
    src: str
    dst: str
    header_bytes: int
    payload_bytes: int = 0
    fingerprint: Optional[bytes] = None
    ttl: int = 0
    group: Optional[str] = None
    sport: Optional[int] = None
    dport: Optional[int] = None
    flow_id: Optional[int] = None
    seq: int = -1
    body: Any = None
    data: Any = None
    route: Tuple[Hop, ...] = ()
    hop: int = 0
    prev: Optional[str] = None
    on_depart: Optional[Callable[[], None]] = None

    def __post_init__(self):
        if self.header_bytes <= 0:
            raise ValueError("header_bytes 必须 > 0")
        if self.payload_bytes < 0:
            raise ValueError("payload_bytes 不能为负")
        if (self.fingerprint is not None) != (self.payload_bytes > 0):
            raise ValueError("有载荷的分组必须带指纹，无载荷的分组不能带指纹")

    @property
    def size(self) -> int:
        return self.header_bytes + self.payload_bytes

    @property
    def is_multicast(self) -> bool:
        return self.group is not None


class LinkChannel:
    """链路的一个方向；容量计入排队分组和正在发送的分组"""

    def __init__(self, network: "Network", link: LinkSpec, src: str):
        self.network = network
        self.link = link
        self.src = src
        self.dst = link.other(src)
        self.direction = link.direction(src)
        self.capacity = link.queue_capacity
        self.queue: Deque[Packet] = deque()
        self.busy = False
        self.loss_rate = 0.0
        self.waiters: Deque[Tuple[Packet, Optional[Callable[[], None]]]] = deque()
        self.packets_in = 0
        self.bytes_in = 0
        self.delivered = 0
        self.dropped_queue = 0
        self.dropped_loss = 0

    @property
    def occupancy(self) -> int:
        return len(self.queue) + (1 if self.busy else 0)

    @property
    def has_room(self) -> bool:
        return self.occupancy < self.capacity

    @property
    def dropped(self) -> int:
        return self.dropped_queue + self.dropped_loss

    def offer(self, packet: Packet) -> bool:
        """drop-tail 入队；账本在入队判定之前记录"""
        self.packets_in += 1
        self.bytes_in += packet.size
        ledger = self.network.ledger
        if ledger is not None:
            ledger.record_packet(self.link.name, self.direction, packet)
        if not self.has_room:
            self.dropped_queue += 1
            if ledger is not None:
                ledger.record_drop(self.link.name, self.direction)
            return False
        self.queue.append(packet)
        if not self.busy:
            self._serve()
        return True

    def _serve(self) -> None:
        packet = self.queue.popleft()
        self.busy = True
        self.network.sim.call_later(self.link.serialization_delay(packet.size), self._depart, packet)

    def _depart(self, packet: Packet) -> None:
        self.busy = False
        hook = packet.on_depart
        if hook is not None:
            # 只在第一跳离开时触发一次
            packet.on_depart = None
            hook()
        if self.loss_rate > 0 and self.network.loss_stream(self).random() < self.loss_rate:
            self.dropped_loss += 1
            if self.network.ledger is not None:
                self.network.ledger.record_drop(self.link.name, self.direction)
        else:
            self.network.sim.call_later(self.link.propagation_delay, self._arrive, packet)
        if self.queue:
            self._serve()
        self._admit_waiters()

    def _arrive(self, packet: Packet) -> None:
        self.delivered += 1
        self.network._on_arrival(packet, self.dst, self.src)

    def _admit_waiters(self) -> None:
        while self.waiters and self.has_room:
            packet, on_admit = self.waiters.popleft()
            self.offer(packet)
            if on_admit is not None:
                on_admit()

    def enqueue_local(self, packet: Packet, on_admit: Optional[Callable[[], None]]) -> bool:
        """主机自己发出的分组：队列满时等待而不是丢弃"""
        if self.waiters or not self.has_room:
            self.waiters.append((packet, on_admit))
            return False
        self.offer(packet)
        if on_admit is not None:
            on_admit()
        return True


PacketHandler = Callable[[Packet], None]


class Network:
    def __init__(
        self,
        sim: Simulator,
        topology: Topology,
        routes: Optional[RoutingTable] = None,
        ledger: Any = None,
        settings: Optional[EngineSettings] = None,
    ):
        self.sim = sim
        self.topology = topology
        self.routes = routes or compute_routes(topology)
        self.ledger = ledger
        self.settings = settings or EngineSettings()
        self.channels: Dict[Tuple[str, str], LinkChannel] = {}
        self._first_hop: Dict[str, LinkChannel] = {}
        for link in topology.links:
            for end in link.endpoints:
                channel = LinkChannel(self, link, end)
                self.channels[(link.name, channel.direction)] = channel
                if topology.kind(end) in HOST_KINDS:
                    self._first_hop[end] = channel
        self._hosts: Dict[str, PacketHandler] = {}
        self._listeners: Dict[Tuple[str, int], PacketHandler] = {}
        self._ports: Dict[str, itertools.count] = {}
        self._packet_ids = itertools.count()
        self._flow_ids = itertools.count(1)
        self.cbr_flows: List["CbrFlow"] = []

    # ---- 标识 ----
    def next_packet_id(self) -> int:
        return next(self._packet_ids)

    def next_flow_id(self) -> int:
        return next(self._flow_ids)

    def open_port(self, node: str) -> int:
        counter = self._ports.get(node)
        if counter is None:
            counter = self._ports[node] = itertools.count(1024)
        return next(counter)

    def packet(self, kind: PacketKind, src: str, dst: str, header_bytes: Optional[int] = None, **fields: Any) -> Packet:
        return Packet(
            self.next_packet_id(), kind, src, dst,
            header_bytes if header_bytes is not None else self.settings.header_bytes,
            **fields,
        )

    # ---- 主机与端口 ----
    def attach(self, node: str, handler: PacketHandler) -> None:
        """主机上不带端口的分组（控制消息、多播）交给 handler"""
        if self.topology.kind(node) not in HOST_KINDS:
            raise RoutingError(f"只能在主机上挂接协议: {node}")
        self._hosts[node] = handler

    def listen(self, node: str, port: int, handler: PacketHandler) -> None:
        self._listeners[(node, port)] = handler

    def unlisten(self, node: str, port: int) -> None:
        self._listeners.pop((node, port), None)

    def is_listening(self, node: str, port: int) -> bool:
        return (node, port) in self._listeners

    # ---- 链路 ----
    def channel(self, link: str, direction: str) -> LinkChannel:
        try:
            return self.channels[(link, direction)]
        except KeyError:
            raise RoutingError(f"未知链路方向: {link} {direction}") from None

    def loss_stream(self, channel: LinkChannel):
        return self.sim.streams.stream(f"loss:{channel.link.name}:{channel.direction}")

    def set_loss(self, link: str, direction: str, rate: float) -> None:
        if not 0.0 <= rate <= 1.0:
            raise ConfigError(f"丢包率 {rate} 超出 [0, 1]")
        self.channel(link, direction).loss_rate = rate

    def transmit(self, packet: Packet, link: str, direction: str) -> bool:
        if packet.size <= 0:
            raise ValueError("分组大小必须 > 0")
        return self.channel(link, direction).offer(packet)

    def base_rtt(self, src: str, dst: str, forward_bytes: int, back_bytes: int) -> float:
        """空闲路径上的往返时间：去程满载分组 + 回程确认"""
        rtt = 0.0
        for hop in self.routes.route(src, dst):
            link = self.topology.link(hop.link)
            rtt += link.propagation_delay + link.serialization_delay(forward_bytes)
        for hop in self.routes.route(dst, src):
            link = self.topology.link(hop.link)
            rtt += link.propagation_delay + link.serialization_delay(back_bytes)
        return rtt

    def bottleneck(self, src: str, dst: str) -> int:
        route = self.routes.route(src, dst)
        if not route:
            raise RoutingError(f"{src} 到 {dst} 没有经过任何链路")
        return min(self.topology.link(h.link).bandwidth for h in route)

    # ---- 发送 ----
    def send(self, packet: Packet, on_admit: Optional[Callable[[], None]] = None) -> bool:
        """主机发出单播分组；返回 False 表示正在本地排队等待"""
        packet.route = self.routes.route(packet.src, packet.dst)
        packet.hop = 0
        if not packet.route:
            self.sim.call_later(0.0, self._deliver, packet, packet.dst)
            if on_admit is not None:
                on_admit()
            if packet.on_depart is not None:
                hook, packet.on_depart = packet.on_depart, None
                hook()
            return True
        return self._first_hop[packet.src].enqueue_local(packet, on_admit)

    def multicast(self, packet: Packet, on_admit: Optional[Callable[[], None]] = None) -> bool:
        """岛内多播；TTL 在每个交换机/路由器减一，主机不计跳"""
        if packet.group is None:
            raise RoutingError("多播分组缺少 group")
        if packet.ttl <= 0:
            return False
        packet.prev = packet.src
        return self._first_hop[packet.src].enqueue_local(packet, on_admit)

    # ---- 到达与转发 ----
    def _on_arrival(self, packet: Packet, node: str, came_from: str) -> None:
        if packet.is_multicast:
            self._forward_multicast(packet, node, came_from)
            return
        packet.hop += 1
        if packet.hop < len(packet.route):
            hop = packet.route[packet.hop]
            self.channels[(hop.link, hop.direction)].offer(packet)
        else:
            self._deliver(packet, node)

    def _forward_multicast(self, packet: Packet, node: str, came_from: str) -> None:
        if self.topology.kind(node) in HOST_KINDS:
            if node != packet.src:
                self._deliver(packet, node)
            return
        if packet.ttl <= 0:
            return
        for nxt in self.topology.multicast_fanout(node, came_from):
            link = next(l for n, l in self.topology.neighbors(node) if n == nxt)
            copy = replace(packet, id=self.next_packet_id(), ttl=packet.ttl - 1, prev=node)
            self.channels[(link.name, link.direction(node))].offer(copy)

    def _deliver(self, packet: Packet, node: str) -> None:
        if packet.kind == PacketKind.CBR:
            return
        if packet.dport is not None:
            handler = self._listeners.get((node, packet.dport))
            if handler is not None:
                handler(packet)
            elif packet.kind != PacketKind.ACK and packet.body != RESET and packet.sport is not None:
                self._reset(packet, node)
            return
        handler = self._hosts.get(node)
        if handler is not None:
            handler(packet)

    def _reset(self, packet: Packet, node: str) -> None:
        logger.debug("%s 端口 %s 无监听，回送 RST 给 %s", node, packet.dport, packet.src)
        rst = self.packet(
            PacketKind.CONTROL, node, packet.src,
            sport=packet.dport, dport=packet.sport, flow_id=packet.flow_id, body=RESET,
        )
        self.send(rst)

    # ---- 背景流 ----
    def start_cbr(self, src: str, dst: str, rate_fraction: float, packet_size: int = 1000) -> "CbrFlow":
        flow = CbrFlow(self, src, dst, rate_fraction, packet_size)
        self.cbr_flows.append(flow)
        flow.start()
        return flow


class CbrFlow:
    """固定间隔发出定长分组；负载 = rate_fraction × 路径瓶颈带宽"""

    def __init__(self, network: Network, src: str, dst: str, rate_fraction: float, packet_size: int = 1000):
        if not 0.0 <= rate_fraction <= 1.0:
            raise ConfigError(f"CBR 比例 {rate_fraction} 超出 [0, 1]")
        if packet_size <= network.settings.header_bytes:
            raise ConfigError(f"CBR 分组大小必须大于头部 {network.settings.header_bytes} 字节")
        self.network = network
        self.src = src
        self.dst = dst
        self.rate_fraction = rate_fraction
        self.packet_size = packet_size
        self.packets_sent = 0
        self._next: Optional[Event] = None
        self._stopped = False
        if rate_fraction > 0:
            self.interval = 8.0 * packet_size / (rate_fraction * network.bottleneck(src, dst))
        else:
            self.interval = float("inf")

    @property
    def active(self) -> bool:
        return not self._stopped and self.rate_fraction > 0

    def start(self) -> None:
        if not self.active:
            return
        phase = self.network.sim.streams.stream(f"cbr:{self.src}:{self.dst}").uniform(0.0, self.interval)
        self._next = self.network.sim.call_later(phase, self._emit, label=f"cbr {self.src}")

    def _emit(self) -> None:
        if self._stopped:
            return
        net = self.network
        header = net.settings.header_bytes
        tag = hashlib.blake2b(f"cbr:{self.src}:{self.dst}:{self.packets_sent}".encode(), digest_size=16).digest()
        net.send(net.packet(
            PacketKind.CBR, self.src, self.dst, header,
            payload_bytes=self.packet_size - header, fingerprint=tag,
        ))
        self.packets_sent += 1
        self._next = net.sim.call_later(self.interval, self._emit, label=f"cbr {self.src}")

    def stop(self) -> None:
        self._stopped = True
        if self._next is not None:
            self._next.cancel()


def transmit(network: Network, packet: Packet, link: str, direction: str) -> bool:
    return network.transmit(packet, link, direction)


def set_loss(network: Network, link: str, direction: str, rate: float) -> None:
    network.set_loss(link, direction, rate)


def start_cbr(network: Network, src: str, dst: str, rate_fraction: float, packet_size: int = 1000) -> CbrFlow:
    return network.start_cbr(src, dst, rate_fraction, packet_size)
