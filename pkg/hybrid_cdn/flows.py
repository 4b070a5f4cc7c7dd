"""
可靠单播流（TCP 替身）：固定窗口、逐分组确认、按分组超时重传，超时按倍数退避；
不做拥塞控制。接收端 FlowReceiver 按序交付并对每个分组回 ACK。
"""

import logging
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Set

from .chunking import Segment
from .config import EngineSettings
from .engine import Event
from .errors import FlowFailure
from .network import RESET, Network, Packet, PacketKind

logger = logging.getLogger(__name__)

SYN = "syn"
SYNACK = "synack"


class FlowState(str, Enum):
    CONNECTING = "connecting"
    OPEN = "open"
    DONE = "done"
    FAILED = "failed"


def flow_rto(network: Network, src: str, dst: str, settings: EngineSettings) -> float:
    """rto_factor × 空闲 RTT，下限为 RTT 加上一整个窗口在瓶颈链路上的串行化时间"""
    full = settings.header_bytes + settings.payload_bytes
    rtt = network.base_rtt(src, dst, full, settings.header_bytes)
    if src == dst:
        return settings.rto_factor * rtt
    queued = settings.window * 8.0 * full / network.bottleneck(src, dst)
    return max(settings.rto_factor * rtt, rtt + queued)


class ReliableFlow:
    """src -> (dst, dport) 的单向传输；在途分组数（含本地排队等待的）不超过窗口"""

    def __init__(
        self,
        network: Network,
        src: str,
        dst: str,
        dport: int,
        segments: Sequence[Segment],
        settings: Optional[EngineSettings] = None,
        handshake: bool = False,
        on_open: Optional[Callable[["ReliableFlow"], None]] = None,
        on_delivered: Optional[Callable[["ReliableFlow", int], None]] = None,
        on_complete: Optional[Callable[["ReliableFlow"], None]] = None,
        on_failed: Optional[Callable[["ReliableFlow", Exception], None]] = None,
    ):
        self.network = network
        self.sim = network.sim
        self.settings = settings or network.settings
        self.src = src
        self.dst = dst
        self.dport = dport
        self.segments = list(segments)
        self.handshake = handshake
        self.on_open = on_open
        self.on_delivered = on_delivered
        self.on_complete = on_complete
        self.on_failed = on_failed

        self.flow_id = network.next_flow_id()
        self.sport = network.open_port(src)
        self.state = FlowState.CONNECTING
        self.rto = flow_rto(network, src, dst, self.settings)
        self.window = self.settings.window
        self.next_seq = 0
        self.in_flight: Set[int] = set()
        self.acked: Set[int] = set()
        self.timeouts: Dict[int, int] = {}
        self.timers: Dict[int, Event] = {}
        self.retransmissions = 0
        self.start_time: Optional[float] = None
        self.finish_time: Optional[float] = None
        self.error: Optional[Exception] = None
        self.receiver: Optional["FlowReceiver"] = None
        self._syn_timer: Optional[Event] = None
        self._syn_tries = 0

    @property
    def total(self) -> int:
        return len(self.segments)

    @property
    def finished(self) -> bool:
        return self.state in (FlowState.DONE, FlowState.FAILED)

    def start(self) -> "ReliableFlow":
        self.start_time = self.sim.now
        self.network.listen(self.src, self.sport, self._on_packet)
        if self.handshake:
            self._send_syn()
        else:
            self._open()
        return self

    def _backoff(self, tries: int) -> float:
        s = self.settings
        return self.rto * min(s.rto_backoff ** tries, s.rto_backoff_cap)

    # ---- 建连 ----
    def _send_syn(self) -> None:
        net = self.network
        syn = net.packet(PacketKind.CONTROL, self.src, self.dst, sport=self.sport, dport=self.dport,
                         flow_id=self.flow_id, body=SYN)
        syn.on_depart = self._arm_syn
        net.send(syn)

    def _arm_syn(self) -> None:
        if self.state == FlowState.CONNECTING:
            self._syn_timer = self.sim.call_later(self._backoff(self._syn_tries), self._syn_timeout)

    def _syn_timeout(self) -> None:
        if self.state != FlowState.CONNECTING:
            return
        self._syn_tries += 1
        if self._syn_tries > self.settings.max_retries:
            self._fail(FlowFailure(self.flow_id, -1, self._syn_tries))
            return
        self.retransmissions += 1
        self._send_syn()

    def _open(self) -> None:
        if self._syn_timer is not None:
            self._syn_timer.cancel()
        self.state = FlowState.OPEN
        if self.on_open:
            self.on_open(self)
        if self.total == 0:
            self._complete()
            return
        self._pump()

    # ---- 发送 ----
    def _pump(self) -> None:
        while self.state == FlowState.OPEN and len(self.in_flight) < self.window and self.next_seq < self.total:
            seq = self.next_seq
            self.next_seq += 1
            self.in_flight.add(seq)
            self._send_seq(seq)

    def _send_seq(self, seq: int) -> None:
        seg = self.segments[seq]
        net = self.network
        packet = net.packet(
            PacketKind.DATA, self.src, self.dst,
            payload_bytes=seg.length, fingerprint=seg.fingerprint, data=seg.data,
            sport=self.sport, dport=self.dport, flow_id=self.flow_id, seq=seq, body=self.total,
            on_depart=lambda: self._arm(seq),
        )
        net.send(packet)

    def _arm(self, seq: int) -> None:
        """重传计时从分组离开本机第一跳时开始，本地排队不计入"""
        if self.finished or seq in self.acked:
            return
        self.timers[seq] = self.sim.call_later(self._backoff(self.timeouts.get(seq, 0)), self._timeout, seq)

    def _timeout(self, seq: int) -> None:
        if self.finished or seq in self.acked:
            return
        tries = self.timeouts.get(seq, 0) + 1
        self.timeouts[seq] = tries
        if tries > self.settings.max_retries:
            self._fail(FlowFailure(self.flow_id, seq, tries - 1))
            return
        self.retransmissions += 1
        self._send_seq(seq)

    # ---- 接收 ACK / RST ----
    def _on_packet(self, packet: Packet) -> None:
        if self.finished or packet.flow_id != self.flow_id:
            return
        if packet.body == RESET:
            self._fail(FlowFailure(self.flow_id, packet.seq, 0))
            return
        if packet.body == SYNACK:
            if self.state == FlowState.CONNECTING:
                self._open()
            return
        if packet.kind != PacketKind.ACK or packet.seq not in self.in_flight:
            return
        seq = packet.seq
        self.in_flight.discard(seq)
        self.acked.add(seq)
        timer = self.timers.pop(seq, None)
        if timer is not None:
            timer.cancel()
        if self.on_delivered:
            self.on_delivered(self, seq)
        if len(self.acked) == self.total:
            self._complete()
        else:
            self._pump()

    def _complete(self) -> None:
        self.state = FlowState.DONE
        self.finish_time = self.sim.now
        self._close()
        if self.on_complete:
            self.on_complete(self)

    def _fail(self, error: Exception) -> None:
        self.state = FlowState.FAILED
        self.error = error
        self.finish_time = self.sim.now
        self._close()
        logger.debug("flow %d %s->%s 失败: %s", self.flow_id, self.src, self.dst, error)
        if self.on_failed:
            self.on_failed(self, error)

    def abort(self) -> None:
        if not self.finished:
            self._fail(FlowFailure(self.flow_id, self.next_seq, 0))

    def _close(self) -> None:
        for timer in self.timers.values():
            timer.cancel()
        self.timers.clear()
        if self._syn_timer is not None:
            self._syn_timer.cancel()
        self.network.unlisten(self.src, self.sport)


class FlowReceiver:
    """监听 (node, port)，对每个数据分组回 ACK，按序号顺序交付"""

    def __init__(
        self,
        network: Network,
        node: str,
        port: Optional[int] = None,
        on_first_packet: Optional[Callable[["FlowReceiver", Packet], None]] = None,
        on_packet: Optional[Callable[["FlowReceiver", Packet], None]] = None,
        on_complete: Optional[Callable[["FlowReceiver"], None]] = None,
    ):
        self.network = network
        self.node = node
        self.port = port if port is not None else network.open_port(node)
        self.on_first_packet = on_first_packet
        self.on_packet = on_packet
        self.on_complete = on_complete
        self.flow_id: Optional[int] = None
        self.total: Optional[int] = None
        self.next_expected = 0
        self.bytes_received = 0
        self.duplicates = 0
        self.complete = False
        self.last_packet_at: Optional[float] = None
        self._buffer: Dict[int, Packet] = {}
        self._chunks: List[bytes] = []
        network.listen(node, self.port, self._on_packet)

    def _reply(self, packet: Packet, **fields) -> None:
        net = self.network
        net.send(net.packet(
            fields.pop("kind", PacketKind.ACK), self.node, packet.src,
            sport=self.port, dport=packet.sport, flow_id=packet.flow_id, **fields,
        ))

    def _on_packet(self, packet: Packet) -> None:
        if packet.body == SYN:
            self._reply(packet, kind=PacketKind.CONTROL, body=SYNACK)
            return
        if packet.kind != PacketKind.DATA:
            return
        if self.flow_id is None:
            self.flow_id = packet.flow_id
            self.total = packet.body
            if self.on_first_packet:
                self.on_first_packet(self, packet)
        elif packet.flow_id != self.flow_id:
            return
        self.last_packet_at = self.network.sim.now
        self._reply(packet, seq=packet.seq)
        if self.on_packet:
            self.on_packet(self, packet)
        if packet.seq < self.next_expected or packet.seq in self._buffer:
            self.duplicates += 1
            return
        self._buffer[packet.seq] = packet
        while self.next_expected in self._buffer:
            p = self._buffer.pop(self.next_expected)
            self._chunks.append(bytes(p.data) if p.data is not None else b"")
            self.bytes_received += p.payload_bytes
            self.next_expected += 1
        self._check_complete()

    def expect(self, total: int) -> None:
        """预先告知分组总数；总数为 0 时直接完成"""
        self.total = total
        self._check_complete()

    def _check_complete(self) -> None:
        if not self.complete and self.total is not None and self.next_expected >= self.total:
            self.complete = True
            if self.on_complete:
                self.on_complete(self)

    def payload(self) -> bytes:
        return b"".join(self._chunks)

    def close(self) -> None:
        self.network.unlisten(self.node, self.port)


def flow_send(
    network: Network,
    src: str,
    dst: str,
    segments: Sequence[Segment],
    settings: Optional[EngineSettings] = None,
    handshake: bool = True,
    on_complete: Optional[Callable[[ReliableFlow, FlowReceiver], None]] = None,
    on_failed: Optional[Callable[[ReliableFlow, Exception], None]] = None,
) -> ReliableFlow:
    """独立的单播传输：在 dst 上开一个接收端，收齐后回调 on_complete(flow, receiver)"""
    state: Dict[str, object] = {}

    def receiver_done(receiver: FlowReceiver) -> None:
        state["received"] = network.sim.now
        _maybe_done()

    def sender_done(flow: ReliableFlow) -> None:
        if flow.total == 0:
            receiver.expect(0)
        _maybe_done()

    def _maybe_done() -> None:
        if "received" in state and flow.state == FlowState.DONE and "notified" not in state:
            state["notified"] = True
            flow.finish_time = state["received"]
            receiver.close()
            if on_complete:
                on_complete(flow, receiver)

    def failed(f: ReliableFlow, error: Exception) -> None:
        receiver.close()
        if on_failed:
            on_failed(f, error)

    receiver = FlowReceiver(network, dst, on_complete=receiver_done)
    flow = ReliableFlow(network, src, dst, receiver.port, segments, settings, handshake=handshake,
                        on_complete=sender_done, on_failed=failed)
    flow.receiver = receiver
    return flow.start()
