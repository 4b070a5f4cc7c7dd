"""
Hybrid 模型：swarm + 岛内多播。
从岛外取得并校验的分块，在随机退避之后向本岛多播（期间若已看到岛内多播或岛内 have 则抑制）；
收到多播的 peer 校验后宣告持有；多播丢失的分块经握手从岛内 peer 单播补齐。
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Set, Tuple

from ..chunking import PieceStore
from ..engine import Event, Simulator
from ..network import Packet, PacketKind
from ..topology import Topology
from .common import ModelOutcome, RunContext
from .messages import Claim, IslandHave, IslandHello, MulticastSegment, island_group
from .selection import select_piece
from .swarm import SwarmPeer, run_swarm
from .tracker import Tracker

logger = logging.getLogger(__name__)


@dataclass
class MulticastBuffer:
    piece: int
    length: int
    source: str
    parts: Dict[int, bytes] = field(default_factory=dict)
    received: int = 0
    timer: Optional[Event] = None

    def add(self, offset: int, data: bytes) -> None:
        if offset in self.parts:
            return
        self.parts[offset] = data
        self.received += len(data)

    @property
    def complete(self) -> bool:
        return self.received >= self.length

    def assemble(self) -> bytes:
        return b"".join(self.parts[o] for o in sorted(self.parts))


class HybridPeer(SwarmPeer):
    def __init__(self, ctx: RunContext, node: str, store: PieceStore, tracker: Tracker):
        super().__init__(ctx, node, store, tracker)
        self.island = ctx.topology.island_of(node)
        self.group = island_group(self.island) if self.island else None
        self.island_peers: Set[str] = set()
        self.claims: Dict[int, Tuple[str, float]] = {}
        self.island_seen: Dict[int, float] = {}
        self.buffers: Dict[int, MulticastBuffer] = {}
        self.multicasts = 0
        self.suppressed = 0
        self.repairs = 0
        self.yielded = 0

    # ---- 岛内多播发送 ----
    def _multicast_control(self, body: object) -> None:
        if self.group is None:
            return
        net = self.ctx.network
        net.multicast(net.packet(
            PacketKind.CONTROL, self.node, self.group, header_bytes=self.ctx.protocol.control_bytes,
            ttl=self.ctx.protocol.multicast_ttl, group=self.group, body=body,
        ))

    def _multicast_piece(self, chunk: int) -> None:
        net = self.ctx.network
        length = self.store.spec.piece_length(chunk)
        for seg in self.store.segments(chunk, self.ctx.engine.payload_bytes):
            net.multicast(net.packet(
                PacketKind.MULTICAST_DATA, self.node, self.group,
                payload_bytes=seg.length, fingerprint=seg.fingerprint, data=seg.data,
                ttl=self.ctx.protocol.multicast_ttl, group=self.group,
                body=MulticastSegment(chunk, seg.offset, length),
            ))
        self.multicasts += 1

    # ---- 生命周期 ----
    def start(self) -> None:
        if self.group is not None:
            self._multicast_control(IslandHello(self.island, frozenset(self.announced)))
        super().start()

    def _same_island(self, peer: str) -> bool:
        return self.island is not None and peer in self.island_peers

    def _learn(self, peer: str) -> None:
        if peer != self.node:
            self.island_peers.add(peer)

    # ---- 消息 ----
    def handle(self, packet: Packet) -> None:
        body = packet.body
        if packet.kind == PacketKind.MULTICAST_DATA and isinstance(body, MulticastSegment):
            self._on_multicast_data(packet, body)
        elif isinstance(body, IslandHello) and body.island == self.island:
            self._learn(packet.src)
            if self.table.add_bitfield(packet.src, body.pieces):
                self.head.pump()
        elif isinstance(body, IslandHave) and body.island == self.island:
            self._learn(packet.src)
            self.island_seen[body.piece] = self.ctx.sim.now
            self.claims.pop(body.piece, None)
            if self.table.add(packet.src, body.piece):
                self.head.pump()
        elif isinstance(body, Claim) and body.island == self.island:
            self._learn(packet.src)
            self._on_claim(body.piece, packet.src)
        else:
            super().handle(packet)

    def _on_claim(self, chunk: int, claimer: str) -> None:
        """同时认领时 id 小的一方胜出；输的一方在数据开始前撤回请求"""
        current = self.claims.get(chunk)
        if current is None:
            self.claims[chunk] = (claimer, self.ctx.sim.now)
            return
        holder, _ = current
        if holder != self.node or claimer > self.node or self.store.has(chunk):
            return
        if self.head.withdraw(chunk):
            self.claims[chunk] = (claimer, self.ctx.sim.now)
            self.yielded += 1
            logger.debug("%s: 分块 %d 让给 %s 从岛外获取", self.node, chunk, claimer)
            self.head.pump()

    def _on_multicast_data(self, packet: Packet, seg: MulticastSegment) -> None:
        self._learn(packet.src)
        self.island_seen[seg.piece] = self.ctx.sim.now
        if self.store.has(seg.piece):
            return
        buf = self.buffers.get(seg.piece)
        if buf is None:
            buf = self.buffers[seg.piece] = MulticastBuffer(seg.piece, seg.piece_length, packet.src)
        buf.add(seg.offset, bytes(packet.data))
        if buf.timer is not None:
            buf.timer.cancel()
        if not buf.complete:
            buf.timer = self.ctx.sim.call_later(self.ctx.protocol.multicast_grace, self._grace_expired, buf)
            return
        del self.buffers[seg.piece]
        if self.accept(seg.piece, buf.assemble(), buf.source):
            # 多播已送达，停止仍在进行的单播请求
            self.head.withdraw(seg.piece, transferring=True)
            self.piece_verified(seg.piece, buf.source)
        else:
            logger.debug("%s: 多播分块 %d 校验失败，丢弃", self.node, seg.piece)
        self.head.pump()

    def _grace_expired(self, buf: MulticastBuffer) -> None:
        if self.buffers.get(buf.piece) is not buf:
            return
        del self.buffers[buf.piece]
        self.repairs += 1
        logger.debug("%s: 分块 %d 多播不完整（%d/%d 字节），改走单播补齐",
                     self.node, buf.piece, buf.received, buf.length)
        self.head.pump()

    # ---- 选块 ----
    def is_choked(self, requester: str) -> bool:
        if self._same_island(requester):
            return False
        return super().is_choked(requester)

    def _island_holders(self, chunk: int) -> List[str]:
        return [h for h in self.table.holders(chunk) if h != self.node and self._same_island(h)]

    def _claimed_elsewhere(self, chunk: int) -> bool:
        claim = self.claims.get(chunk)
        if claim is None:
            return False
        claimer, at = claim
        if self.ctx.sim.now - at >= self.ctx.protocol.claim_timeout:
            del self.claims[chunk]
            return False
        return claimer != self.node

    def pick(self) -> Optional[int]:
        if not self.wants_more():
            return None
        exclude = self.busy() | set(self.buffers)
        on_island = [p for p in self.store.map.missing() if p not in exclude and self._island_holders(p)]
        chunk = None
        if on_island:
            chunk = select_piece(self.table, self.store.map, self.rng, exclude=exclude, restrict=on_island)
        if chunk is None:
            exclude |= {p for p in self.store.map.missing() if self._claimed_elsewhere(p)}
            chunk = select_piece(self.table, self.store.map, self.rng, exclude=exclude)
            if chunk is not None and self.group is not None:
                self.claims[chunk] = (self.node, self.ctx.sim.now)
                self._multicast_control(Claim(self.island, chunk))
        return chunk

    def candidates(self, chunk: int) -> List[str]:
        holders = [h for h in self.table.holders(chunk) if h != self.node]
        local = [h for h in holders if self._same_island(h)]
        remote = [h for h in holders if not self._same_island(h)]
        return self._shuffled(local) + self._shuffled(remote)

    # ---- 校验之后 ----
    def piece_verified(self, chunk: int, source: str) -> None:
        if chunk in self.announced:
            return
        if self.group is None or self._same_island(source):
            super().piece_verified(chunk, source)
            self._multicast_control(IslandHave(self.island, chunk))
            return
        self.announced.add(chunk)
        self.announce_have(chunk, [n for n in self.neighbours if not self._same_island(n)])
        holdoff = float(self.ctx.rng(f"holdoff:{self.node}:{chunk}").uniform(0.0, self.ctx.protocol.multicast_holdoff))
        self.ctx.sim.call_later(holdoff, self._after_holdoff, chunk, self.ctx.sim.now,
                                label=f"holdoff {self.node} {chunk}")
        self.check_complete()

    def _after_holdoff(self, chunk: int, verified_at: float) -> None:
        if self.island_seen.get(chunk, -1.0) >= verified_at:
            self.suppressed += 1
            logger.debug("%s: 岛内已出现分块 %d，抑制多播", self.node, chunk)
        else:
            self._multicast_piece(chunk)
        self.announce_have(chunk, [n for n in self.neighbours if self._same_island(n)])
        self._multicast_control(IslandHave(self.island, chunk))

    def contribute(self, outcome: ModelOutcome) -> None:
        outcome.multicasts += self.multicasts
        outcome.suppressed += self.suppressed
        outcome.repairs += self.repairs
        outcome.yielded += self.yielded


def run_hybrid(
    sim: Simulator,
    topology: Topology,
    file: PieceStore,
    clients: Optional[Iterable[str]] = None,
    ctx: Optional[RunContext] = None,
) -> ModelOutcome:
    return run_swarm("hybrid", HybridPeer, sim, topology, file, clients, ctx)
