"""
分块传输握手：Type1 请求 -> Type2 / Type3a / Type3b 应答 -> Type4 确认 -> 上传方开流。
HandshakeAgent 是每台主机上的收发两端；Head 负责请求方状态机和批次调度。
"""

import itertools
import logging
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Deque, Dict, List, Optional, Sequence, Set, Tuple

from ..chunking import PieceStore
from ..config import EngineSettings, ProtocolSettings
from ..engine import Event
from ..flows import FlowReceiver, ReliableFlow
from ..network import Network, Packet, PacketKind
from .messages import RESPONSE_KINDS, HandshakeKind, HandshakeMessage

logger = logging.getLogger(__name__)

TraceEntry = Tuple[str, str, Optional[str], int]


class PortPool:
    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("端口池容量必须 >= 1")
        self.capacity = capacity
        self._in_use: Set[int] = set()

    @property
    def in_use(self) -> int:
        return len(self._in_use)

    @property
    def available(self) -> bool:
        return self.in_use < self.capacity

    def acquire(self) -> Optional[int]:
        if not self.available:
            return None
        slot = next(i for i in range(self.capacity) if i not in self._in_use)
        self._in_use.add(slot)
        return slot

    def release(self, slot: int) -> None:
        self._in_use.discard(slot)


class SessionState(str, Enum):
    HANDSHAKING = "handshaking"
    TRANSFERRING = "transferring"
    DONE = "done"
    FAILED = "failed"


@dataclass
class TransferSession:
    uploader: str
    downloader: str
    chunk: int
    nonce: int
    uploader_slot: Optional[int] = None
    downloader_port: Optional[int] = None
    state: SessionState = SessionState.HANDSHAKING
    chain: List[HandshakeKind] = field(default_factory=list)
    started_at: float = 0.0
    finished_at: Optional[float] = None


class RequestState(str, Enum):
    ASKING = "asking"
    AWAITING_FLOW = "awaiting-flow"
    TRANSFERRING = "transferring"
    DEFERRED = "deferred"


@dataclass
class ChunkRequest:
    chunk: int
    candidates: List[str]
    index: int = 0
    round: int = 0
    nonce: int = 0
    state: RequestState = RequestState.ASKING
    timer: Optional[Event] = None
    receiver: Optional[FlowReceiver] = None
    session: Optional[TransferSession] = None

    @property
    def target(self) -> Optional[str]:
        return self.candidates[self.index] if self.index < len(self.candidates) else None

    def cancel_timer(self) -> None:
        if self.timer is not None:
            self.timer.cancel()
            self.timer = None


@dataclass
class Reservation:
    slot: int
    timer: Event
    message: HandshakeMessage


def handshake_respond(agent: "HandshakeAgent", msg: HandshakeMessage) -> HandshakeMessage:
    """对 Type1 的唯一应答；Type2 时预留一个端口"""
    if msg.kind != HandshakeKind.TYPE1:
        raise ValueError(f"只能应答 Type1，收到 {msg.kind.value}")
    if not agent.has(msg.chunk):
        return msg.reply(HandshakeKind.TYPE3A)
    if agent.is_choked(msg.requester):
        return msg.reply(HandshakeKind.TYPE3B)
    slot = agent.pool.acquire()
    if slot is None:
        return msg.reply(HandshakeKind.TYPE3B)
    return msg.reply(HandshakeKind.TYPE2, port=slot)


class HandshakeAgent:
    def __init__(
        self,
        node: str,
        network: Network,
        store: PieceStore,
        protocol: Optional[ProtocolSettings] = None,
        engine: Optional[EngineSettings] = None,
        candidates: Optional[Callable[[int], List[str]]] = None,
        picker: Optional[Callable[[], Optional[int]]] = None,
        is_choked: Optional[Callable[[str], bool]] = None,
        accept: Optional[Callable[[int, bytes, str], bool]] = None,
        trace: Optional[List[TraceEntry]] = None,
    ):
        self.node = node
        self.network = network
        self.sim = network.sim
        self.store = store
        self.protocol = protocol or ProtocolSettings()
        self.engine = engine or network.settings
        self.pool = PortPool(self.protocol.port_pool)
        self._is_choked = is_choked
        self._accept = accept
        self.trace = trace
        self.reservations: Dict[Tuple[str, int], Reservation] = {}
        self.uploads: Dict[int, ReliableFlow] = {}
        self.upload_sessions: List[TransferSession] = []
        self.responses_sent: Set[Tuple[str, int]] = set()
        self.on_upload_done: Optional[Callable[[str, int, bool, int], None]] = None
        self.head = Head(self, picker=picker, candidates=candidates)

    # ---- 供 handshake_respond 使用 ----
    def has(self, chunk: int) -> bool:
        return self.store.has(chunk)

    def is_choked(self, requester: str) -> bool:
        return bool(self._is_choked and self._is_choked(requester))

    def accept(self, chunk: int, data: bytes, source: str) -> bool:
        if self._accept is not None:
            return self._accept(chunk, data, source)
        return self.store.add(chunk, data)

    # ---- 收发 ----
    def send(self, msg: HandshakeMessage) -> None:
        if self.trace is not None:
            self.trace.append((msg.kind.value, msg.sender, msg.receiver, msg.chunk))
        net = self.network
        net.send(net.packet(
            PacketKind.CONTROL, self.node, msg.receiver,
            header_bytes=self.protocol.control_bytes, body=msg,
        ))

    def handle(self, packet: Packet) -> bool:
        msg = packet.body
        if not isinstance(msg, HandshakeMessage):
            return False
        if msg.kind == HandshakeKind.TYPE1:
            self._on_type1(msg)
        elif msg.kind == HandshakeKind.TYPE4:
            self._on_type4(msg)
        elif msg.kind in RESPONSE_KINDS:
            self.head.on_response(msg)
        return True

    # ---- 上传方 ----
    def _on_type1(self, msg: HandshakeMessage) -> None:
        key = (msg.requester, msg.nonce)
        if key in self.responses_sent:
            return
        reply = handshake_respond(self, msg)
        self.responses_sent.add(key)
        if reply.kind == HandshakeKind.TYPE2:
            timer = self.sim.call_later(self.protocol.handshake_timeout, self._reservation_expired, key)
            self.reservations[key] = Reservation(reply.port, timer, reply)
        self.send(reply)

    def _reservation_expired(self, key: Tuple[str, int]) -> None:
        res = self.reservations.pop(key, None)
        if res is not None:
            logger.debug("%s: 分块 %d 的端口预留超时，释放端口 %d", self.node, res.message.chunk, res.slot)
            self.pool.release(res.slot)

    def _on_type4(self, msg: HandshakeMessage) -> None:
        res = self.reservations.pop((msg.requester, msg.nonce), None)
        if res is None:
            return
        res.timer.cancel()
        session = TransferSession(
            uploader=self.node, downloader=msg.requester, chunk=msg.chunk, nonce=msg.nonce,
            uploader_slot=res.slot, downloader_port=msg.port, started_at=self.sim.now,
            chain=[HandshakeKind.TYPE1, HandshakeKind.TYPE2, HandshakeKind.TYPE4],
            state=SessionState.TRANSFERRING,
        )
        self.upload_sessions.append(session)
        segments = self.store.segments(msg.chunk, self.engine.payload_bytes)

        def done(flow: ReliableFlow, error: Optional[Exception] = None) -> None:
            session.state = SessionState.FAILED if error else SessionState.DONE
            session.finished_at = self.sim.now
            self.uploads.pop(res.slot, None)
            self.pool.release(res.slot)
            if self.on_upload_done:
                self.on_upload_done(msg.requester, msg.chunk, error is None, flow.retransmissions)

        flow = ReliableFlow(
            self.network, self.node, msg.requester, msg.port, segments, self.engine,
            handshake=False, on_complete=done, on_failed=done,
        )
        self.uploads[res.slot] = flow
        flow.start()


class Head:
    """请求方：每个 get-file 请求最多 batch_size 个在途分块请求，完成一个补发一个"""

    def __init__(
        self,
        agent: HandshakeAgent,
        picker: Optional[Callable[[], Optional[int]]] = None,
        candidates: Optional[Callable[[int], List[str]]] = None,
        batch_size: Optional[int] = None,
    ):
        self.agent = agent
        self.protocol = agent.protocol
        self.picker = picker
        self.candidates = candidates
        self.batch_size = batch_size or agent.protocol.batch_size
        self.active: Dict[int, ChunkRequest] = {}
        self.sessions: List[TransferSession] = []
        self.failed: List[int] = []
        self.completed: List[Tuple[int, str]] = []
        self.max_concurrent = 0
        self.on_piece: Optional[Callable[[int, str], None]] = None
        self.on_give_up: Optional[Callable[[int], None]] = None
        self._nonces = itertools.count(1)
        self.stopped = False

    @property
    def node(self) -> str:
        return self.agent.node

    @property
    def sim(self):
        return self.agent.sim

    def _trace(self, kind: str, peer: Optional[str], chunk: int) -> None:
        if self.agent.trace is not None:
            self.agent.trace.append((kind, self.node, peer, chunk))

    def pump(self) -> None:
        while not self.stopped and self.picker is not None and len(self.active) < self.batch_size:
            chunk = self.picker()
            if chunk is None:
                break
            candidates = self.candidates(chunk) if self.candidates else []
            if not candidates:
                break
            self.handshake_initiate(chunk, candidates)

    def stop(self) -> None:
        self.stopped = True

    def handshake_initiate(self, chunk: int, candidates: Sequence[str]) -> ChunkRequest:
        req = ChunkRequest(chunk, list(candidates))
        self.active[chunk] = req
        self.max_concurrent = max(self.max_concurrent, len(self.active))
        self._ask(req)
        return req

    def _ask(self, req: ChunkRequest) -> None:
        target = req.target
        if target is None:
            self._exhausted(req)
            return
        req.state = RequestState.ASKING
        req.nonce = next(self._nonces)
        req.session = TransferSession(target, self.node, req.chunk, req.nonce,
                                      chain=[HandshakeKind.TYPE1], started_at=self.sim.now)
        self.sessions.append(req.session)
        self.agent.send(HandshakeMessage(HandshakeKind.TYPE1, req.chunk, self.node, target, req.nonce))
        req.timer = self.sim.call_later(self.protocol.handshake_timeout, self._ask_timeout, req, req.nonce)

    def _abandon(self, req: ChunkRequest) -> None:
        req.cancel_timer()
        if req.receiver is not None:
            req.receiver.close()
            req.receiver = None
        if req.session is not None and req.session.state in (SessionState.HANDSHAKING, SessionState.TRANSFERRING):
            req.session.state = SessionState.FAILED
            req.session.finished_at = self.sim.now

    def _next(self, req: ChunkRequest) -> None:
        self._abandon(req)
        req.index += 1
        self._ask(req)

    def _exhausted(self, req: ChunkRequest) -> None:
        req.round += 1
        if req.round >= self.protocol.global_attempt_limit:
            self._give_up(req)
            return
        req.state = RequestState.DEFERRED
        self._trace("retry", None, req.chunk)
        logger.debug("%s: 分块 %d 的候选源已用尽，%.1fs 后重试", self.node, req.chunk, self.protocol.retry_backoff)
        req.timer = self.sim.call_later(self.protocol.retry_backoff, self._retry, req)

    def _retry(self, req: ChunkRequest) -> None:
        req.timer = None
        if self.agent.store.has(req.chunk):
            self._finish(req)
            return
        fresh = self.candidates(req.chunk) if self.candidates else req.candidates
        if not fresh:
            self.active.pop(req.chunk, None)
            self.pump()
            return
        req.candidates = list(fresh)
        req.index = 0
        self._ask(req)

    def _give_up(self, req: ChunkRequest) -> None:
        logger.warning("%s: 分块 %d 超过 %d 轮尝试，放弃", self.node, req.chunk, self.protocol.global_attempt_limit)
        self.active.pop(req.chunk, None)
        self.failed.append(req.chunk)
        if self.on_give_up:
            self.on_give_up(req.chunk)
        self.pump()

    def _ask_timeout(self, req: ChunkRequest, nonce: int) -> None:
        if req.nonce != nonce or req.state != RequestState.ASKING:
            return
        req.timer = None
        self._trace("timeout", req.target, req.chunk)
        self._next(req)

    def on_response(self, msg: HandshakeMessage) -> None:
        req = self.active.get(msg.chunk)
        if req is None or req.nonce != msg.nonce or req.state != RequestState.ASKING or msg.responder != req.target:
            return
        req.cancel_timer()
        req.session.chain.append(msg.kind)
        if msg.kind in (HandshakeKind.TYPE3A, HandshakeKind.TYPE3B):
            self._next(req)
            return
        receiver = FlowReceiver(
            self.agent.network, self.node,
            on_first_packet=lambda r, p: self._flow_started(req, msg.nonce),
            on_complete=lambda r: self._flow_done(req, msg.nonce, r),
        )
        req.receiver = receiver
        req.session.uploader_slot = msg.port
        req.session.downloader_port = receiver.port
        req.session.chain.append(HandshakeKind.TYPE4)
        req.state = RequestState.AWAITING_FLOW
        self.agent.send(msg.reply(HandshakeKind.TYPE4, port=receiver.port))
        req.timer = self.sim.call_later(self.protocol.handshake_timeout, self._flow_timeout, req, msg.nonce)

    def _flow_timeout(self, req: ChunkRequest, nonce: int) -> None:
        if req.nonce != nonce or req.state != RequestState.AWAITING_FLOW:
            return
        req.timer = None
        logger.debug("%s: 分块 %d 在 Type4 之后没有收到数据，换下一个源", self.node, req.chunk)
        self._next(req)

    def _flow_started(self, req: ChunkRequest, nonce: int) -> None:
        if req.nonce != nonce or req.state != RequestState.AWAITING_FLOW:
            return
        req.cancel_timer()
        req.state = RequestState.TRANSFERRING
        req.session.state = SessionState.TRANSFERRING
        req.timer = self.sim.call_later(self.protocol.transfer_stall, self._stall_check, req, nonce)

    def _stall_check(self, req: ChunkRequest, nonce: int) -> None:
        if req.nonce != nonce or req.state != RequestState.TRANSFERRING or req.receiver is None:
            return
        idle = self.sim.now - (req.receiver.last_packet_at or 0.0)
        if idle >= self.protocol.transfer_stall:
            logger.debug("%s: 分块 %d 的传输停滞，换下一个源", self.node, req.chunk)
            req.timer = None
            self._next(req)
        else:
            req.timer = self.sim.call_later(self.protocol.transfer_stall - idle, self._stall_check, req, nonce)

    def _flow_done(self, req: ChunkRequest, nonce: int, receiver: FlowReceiver) -> None:
        if req.nonce != nonce or req.state != RequestState.TRANSFERRING:
            return
        req.cancel_timer()
        source = req.target
        data = receiver.payload()
        receiver.close()
        req.receiver = None
        if not self.agent.accept(req.chunk, data, source):
            logger.debug("%s: 来自 %s 的分块 %d 校验失败", self.node, source, req.chunk)
            self._next(req)
            return
        req.session.state = SessionState.DONE
        req.session.finished_at = self.sim.now
        self.completed.append((req.chunk, source))
        self.active.pop(req.chunk, None)
        if self.on_piece:
            self.on_piece(req.chunk, source)
        self.pump()

    def withdraw(self, chunk: int, transferring: bool = False) -> bool:
        """撤回分块请求；数据已在传输时只有 transferring=True 才撤回"""
        req = self.active.get(chunk)
        if req is None or (req.state == RequestState.TRANSFERRING and not transferring):
            return False
        self._abandon(req)
        self.active.pop(chunk, None)
        self._trace("withdraw", req.target, chunk)
        return True

    def _finish(self, req: ChunkRequest) -> None:
        req.cancel_timer()
        self.active.pop(req.chunk, None)
        self.pump()


def dispatch_batches(head: Head, wanted: Sequence[int], batch_size: int) -> Head:
    """按顺序派发 wanted 中的分块，同时在途的请求不超过 batch_size"""
    if batch_size < 1:
        raise ValueError("batch_size 必须 >= 1")
    queue: Deque[int] = deque(wanted)
    head.batch_size = batch_size

    def pick() -> Optional[int]:
        while queue:
            chunk = queue.popleft()
            if chunk not in head.active and not head.agent.store.has(chunk):
                return chunk
        return None

    head.picker = pick
    head.pump()
    return head
