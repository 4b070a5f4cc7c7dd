"""
P2P swarm 模型：tracker 返回随机 peer 列表，连接时交换 bitfield，校验后向邻居发 have，
首块随机、之后最稀有优先，上传按简化的互惠规则（U 个解除阻塞的 peer）限制。
"""

import logging
from collections import Counter
from typing import Dict, Iterable, List, Optional, Set, Type

from ..chunking import PieceStore
from ..engine import Simulator
from ..network import Packet, PacketKind
from ..topology import Topology
from .common import ModelOutcome, RunContext
from .handshake import HandshakeAgent
from .messages import Bitfield, Have
from .selection import AvailabilityTable, select_piece
from .tracker import Tracker

logger = logging.getLogger(__name__)


class Choker:
    """U-1 个按上一周期贡献选出的 peer，加 1 个随机的乐观解除阻塞位；完整的 peer 不阻塞"""

    def __init__(self, peer: "SwarmPeer", slots: int, interval: float):
        self.peer = peer
        self.slots = slots
        self.interval = interval
        self.rng = peer.ctx.rng(f"choke:{peer.node}")
        self.unchoked: Set[str] = set()
        self.received: Counter = Counter()

    def is_choked(self, requester: str) -> bool:
        if self.peer.store.complete:
            return False
        return requester not in self.unchoked

    def _random(self, pool: List[str], k: int) -> List[str]:
        if k <= 0 or not pool:
            return []
        picked = self.rng.choice(len(pool), size=min(k, len(pool)), replace=False)
        return [pool[i] for i in picked]

    def start(self) -> None:
        self.unchoked = set(self._random(sorted(self.peer.neighbours), self.slots))
        self.peer.ctx.sim.call_later(self.interval, self.rechoke, label=f"rechoke {self.peer.node}")

    def on_neighbour(self, neighbour: str) -> None:
        if len(self.unchoked) < self.slots:
            self.unchoked.add(neighbour)

    def rechoke(self) -> None:
        if self.peer.store.complete:
            return
        neighbours = sorted(self.peer.neighbours)
        generous = sorted((n for n in neighbours if self.received[n] > 0), key=lambda n: (-self.received[n], n))
        regular = generous[: self.slots - 1]
        rest = [n for n in neighbours if n not in regular]
        regular += self._random(rest, self.slots - 1 - len(regular))
        rest = [n for n in neighbours if n not in regular]
        self.unchoked = set(regular) | set(self._random(rest, 1))
        self.received.clear()
        self.peer.ctx.sim.call_later(self.interval, self.rechoke, label=f"rechoke {self.peer.node}")


class SwarmPeer:
    def __init__(self, ctx: RunContext, node: str, store: PieceStore, tracker: Tracker):
        self.ctx = ctx
        self.node = node
        self.store = store
        self.tracker = tracker
        self.table = AvailabilityTable(store.spec.piece_count)
        self.neighbours: Set[str] = set()
        self.rng = ctx.rng(f"peer:{node}")
        self.started = False
        self.failed = False
        self.announced: Set[int] = set(store.map.held())
        self.choker = Choker(self, ctx.protocol.upload_slots, ctx.protocol.rechoke_interval)
        self.agent = HandshakeAgent(
            node, ctx.network, store, ctx.protocol, ctx.engine,
            candidates=self.candidates, picker=self.pick, is_choked=self.is_choked,
            accept=self.accept, trace=ctx.trace,
        )
        self.head = self.agent.head
        self.head.on_piece = self.piece_verified
        self.head.on_give_up = self._give_up
        self.agent.on_upload_done = self._upload_done
        ctx.network.attach(node, self.handle)

    # ---- 生命周期 ----
    def start(self) -> None:
        self.started = True
        if self.node in self.ctx.records:
            self.ctx.records[self.node].start = self.ctx.sim.now
        for peer in self.tracker.announce(self.node, self.rng):
            self.connect(peer)
        self.choker.start()
        self.check_complete()
        self.head.pump()

    def connect(self, peer: str) -> None:
        if peer == self.node:
            return
        new = peer not in self.neighbours
        self.neighbours.add(peer)
        if new:
            self.choker.on_neighbour(peer)
        self.send(peer, Bitfield(frozenset(self.announced)))

    def send(self, dst: str, body: object) -> None:
        net = self.ctx.network
        net.send(net.packet(PacketKind.CONTROL, self.node, dst, header_bytes=self.ctx.protocol.control_bytes, body=body))

    # ---- 消息 ----
    def handle(self, packet: Packet) -> None:
        if self.agent.handle(packet):
            return
        body = packet.body
        if isinstance(body, Bitfield):
            if packet.src not in self.neighbours:
                self.neighbours.add(packet.src)
                self.choker.on_neighbour(packet.src)
            if not body.reply:
                self.send(packet.src, Bitfield(frozenset(self.announced), reply=True))
            if self.table.add_bitfield(packet.src, body.pieces):
                self.head.pump()
        elif isinstance(body, Have):
            if self.table.add(packet.src, body.piece):
                self.head.pump()

    # ---- 选块 ----
    def wants_more(self) -> bool:
        return self.started and not self.failed and not self.store.complete

    def busy(self) -> Set[int]:
        return set(self.head.active)

    def pick(self) -> Optional[int]:
        if not self.wants_more():
            return None
        return select_piece(self.table, self.store.map, self.rng, exclude=self.busy())

    def candidates(self, chunk: int) -> List[str]:
        holders = [h for h in self.table.holders(chunk) if h != self.node]
        return self._shuffled(holders)

    def _shuffled(self, items: List[str]) -> List[str]:
        order = self.rng.permutation(len(items))
        return [items[i] for i in order]

    def is_choked(self, requester: str) -> bool:
        return self.choker.is_choked(requester)

    def accept(self, chunk: int, data: bytes, source: str) -> bool:
        already = self.store.has(chunk)
        ok = self.store.add(chunk, data)
        if ok and not already:
            self.choker.received[source] += len(data)
            record = self.ctx.records.get(self.node)
            if record is not None:
                record.bytes_received += len(data)
        return ok

    # ---- 校验之后 ----
    def piece_verified(self, chunk: int, source: str) -> None:
        if chunk in self.announced:
            return
        self.announced.add(chunk)
        self.announce_have(chunk, self.neighbours)
        self.check_complete()

    def announce_have(self, chunk: int, peers: Iterable[str]) -> None:
        for peer in sorted(peers):
            self.send(peer, Have(chunk))

    def check_complete(self) -> None:
        if not self.started or self.node not in self.ctx.records or not self.store.complete:
            return
        if not self.store.spec.matches(self.store.assemble()):
            self.failed = True
            self.ctx.fail(self.node, "组装后的文件与源文件摘要不符")
            return
        self.ctx.finish(self.node)

    def _upload_done(self, requester: str, chunk: int, ok: bool, retransmissions: int) -> None:
        record = self.ctx.records.get(requester)
        if record is not None:
            record.retransmissions += retransmissions

    def contribute(self, outcome: ModelOutcome) -> None:
        pass

    def _give_up(self, chunk: int) -> None:
        self.failed = True
        self.ctx.fail(self.node, f"分块 {chunk} 多次尝试后仍无法取得")


def run_swarm(
    model: str,
    peer_cls: Type[SwarmPeer],
    sim: Simulator,
    topology: Topology,
    file: PieceStore,
    clients: Optional[Iterable[str]] = None,
    ctx: Optional[RunContext] = None,
) -> ModelOutcome:
    ctx = ctx or RunContext(sim, topology)
    seeder = ctx.seeder()
    tracker = Tracker(ctx.protocol.peer_list_size)
    peers: Dict[str, SwarmPeer] = {seeder: peer_cls(ctx, seeder, file, tracker)}
    stores: Dict[str, PieceStore] = {}
    chosen = ctx.clients(clients)
    for client in chosen:
        stores[client] = PieceStore(file.spec)
        peers[client] = peer_cls(ctx, client, stores[client], tracker)
    for node in peers:
        tracker.register(node)
    sim.schedule(0.0, peers[seeder].start, label=f"{model} start {seeder}")
    for client in chosen:
        start = ctx.start_time(client)
        ctx.track(client, start)
        sim.schedule(start, peers[client].start, label=f"{model} start {client}")
    sim_time = ctx.run()
    sessions = [s for p in peers.values() for s in p.head.sessions]
    outcome = ModelOutcome(model, sorted(ctx.records.values(), key=lambda r: r.client), stores,
                           ctx.ledger, ctx.network, sim_time, sessions)
    for p in peers.values():
        p.contribute(outcome)
    return outcome


def run_p2p(
    sim: Simulator,
    topology: Topology,
    file: PieceStore,
    clients: Optional[Iterable[str]] = None,
    ctx: Optional[RunContext] = None,
) -> ModelOutcome:
    return run_swarm("p2p", SwarmPeer, sim, topology, file, clients, ctx)
