"""WWW 模型：每个客户端向 seeder 发 GET，各自独立地用一条可靠流取回整个文件"""

import logging
from typing import Dict, Iterable, Optional, Tuple

from ..chunking import PieceStore, file_segments
from ..engine import Event, Simulator
from ..flows import FlowReceiver, ReliableFlow
from ..network import Packet, PacketKind
from ..topology import Topology
from .common import ModelOutcome, RunContext
from .messages import Get

logger = logging.getLogger(__name__)


class WwwServer:
    def __init__(self, ctx: RunContext, node: str, store: PieceStore):
        self.ctx = ctx
        self.node = node
        self.store = store
        self.flows: Dict[Tuple[str, int], ReliableFlow] = {}
        ctx.network.attach(node, self.handle)

    def handle(self, packet: Packet) -> None:
        if not isinstance(packet.body, Get):
            return
        key = (packet.src, packet.body.request_id)
        if key in self.flows:
            return
        client = packet.src
        segments = file_segments(self.store, self.ctx.engine.payload_bytes)

        def done(flow: ReliableFlow, error: Optional[Exception] = None) -> None:
            record = self.ctx.records.get(client)
            if record is not None:
                record.retransmissions += flow.retransmissions
            if error is not None:
                self.ctx.fail(client, f"flow 失败: {error}")

        flow = ReliableFlow(
            self.ctx.network, self.node, client, packet.body.port, segments, self.ctx.engine,
            handshake=False, on_complete=done, on_failed=done,
        )
        self.flows[key] = flow
        flow.start()


class WwwClient:
    def __init__(self, ctx: RunContext, node: str, server: str, store: PieceStore):
        self.ctx = ctx
        self.node = node
        self.server = server
        self.store = store
        self.receiver: Optional[FlowReceiver] = None
        self.attempts = 0
        self._timer: Optional[Event] = None
        self._request_id = 1

    def start(self) -> None:
        self.ctx.records[self.node].start = self.ctx.sim.now
        self.receiver = FlowReceiver(
            self.ctx.network, self.node,
            on_first_packet=self._first_packet, on_complete=self._complete,
        )
        self._send_get()

    def _send_get(self) -> None:
        self.attempts += 1
        net = self.ctx.network
        net.send(net.packet(
            PacketKind.CONTROL, self.node, self.server,
            header_bytes=self.ctx.protocol.control_bytes, body=Get(self._request_id, self.receiver.port),
        ))
        self._timer = self.ctx.sim.call_later(self.ctx.protocol.handshake_timeout, self._get_timeout)

    def _get_timeout(self) -> None:
        self._timer = None
        if self.receiver.flow_id is not None:
            return
        if self.attempts >= self.ctx.protocol.global_attempt_limit:
            self.ctx.fail(self.node, "GET 无应答")
            return
        logger.debug("%s: GET 超时，重发", self.node)
        self._send_get()

    def _first_packet(self, receiver: FlowReceiver, packet: Packet) -> None:
        if self._timer is not None:
            self._timer.cancel()
            self._timer = None

    def _complete(self, receiver: FlowReceiver) -> None:
        data = receiver.payload()
        spec = self.store.spec
        for index in range(spec.piece_count):
            offset = spec.piece_offset(index)
            self.store.add(index, data[offset:offset + spec.piece_length(index)])
        receiver.close()
        if self.store.complete and spec.matches(self.store.assemble()):
            self.ctx.finish(self.node, receiver.bytes_received)
        else:
            self.ctx.fail(self.node, "文件校验失败")


def run_www(
    sim: Simulator,
    topology: Topology,
    file: PieceStore,
    clients: Optional[Iterable[str]] = None,
    ctx: Optional[RunContext] = None,
) -> ModelOutcome:
    ctx = ctx or RunContext(sim, topology)
    seeder = ctx.seeder()
    WwwServer(ctx, seeder, file)
    stores: Dict[str, PieceStore] = {}
    for client in ctx.clients(clients):
        stores[client] = PieceStore(file.spec)
        start = ctx.start_time(client)
        ctx.track(client, start)
        www = WwwClient(ctx, client, seeder, stores[client])
        sim.schedule(start, www.start, label=f"www start {client}")
    sim_time = ctx.run()
    return ModelOutcome("www", sorted(ctx.records.values(), key=lambda r: r.client), stores,
                        ctx.ledger, ctx.network, sim_time)
