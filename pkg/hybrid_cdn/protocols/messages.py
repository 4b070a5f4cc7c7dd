"""
协议消息：握手 Type1..Type4、swarm 的 bitfield/have、岛内 hello/have/claim、WWW 的 GET。
这些值作为控制分组的 body 传递，线上长度统一按 control_bytes 计。
"""

from dataclasses import dataclass
from enum import Enum
from typing import FrozenSet, Optional


class HandshakeKind(str, Enum):
    TYPE1 = "Type1"    # 请求分块
    TYPE2 = "Type2"    # 接受，带发送端口
    TYPE3A = "Type3a"  # 没有该分块
    TYPE3B = "Type3b"  # 没有空闲端口
    TYPE4 = "Type4"    # 请求方确认，带监听端口


PORT_KINDS = frozenset({HandshakeKind.TYPE2, HandshakeKind.TYPE4})
RESPONSE_KINDS = frozenset({HandshakeKind.TYPE2, HandshakeKind.TYPE3A, HandshakeKind.TYPE3B})


@dataclass(frozen=True)
class HandshakeMessage:
    kind: HandshakeKind
    chunk: int
    requester: str
    responder: str
    nonce: int
    port: Optional[int] = None

    def __post_init__(self):
        if (self.port is not None) != (self.kind in PORT_KINDS):
            raise ValueError(f"{self.kind.value} 的 port 字段不合法: {self.port}")

    def reply(self, kind: HandshakeKind, port: Optional[int] = None) -> "HandshakeMessage":
        return HandshakeMessage(kind, self.chunk, self.requester, self.responder, self.nonce, port)

    @property
    def sender(self) -> str:
        return self.requester if self.kind in (HandshakeKind.TYPE1, HandshakeKind.TYPE4) else self.responder

    @property
    def receiver(self) -> str:
        return self.responder if self.sender == self.requester else self.requester


@dataclass(frozen=True)
class Bitfield:
    pieces: FrozenSet[int]
    reply: bool = False


@dataclass(frozen=True)
class Have:
    piece: int


@dataclass(frozen=True)
class IslandHello:
    island: str
    pieces: FrozenSet[int]


@dataclass(frozen=True)
class IslandHave:
    island: str
    piece: int


@dataclass(frozen=True)
class Claim:
    island: str
    piece: int


@dataclass(frozen=True)
class MulticastSegment:
    """多播数据分组的 body：分块号、段偏移、整块长度"""

    piece: int
    offset: int
    piece_length: int


@dataclass(frozen=True)
class Get:
    request_id: int
    port: int


def island_group(island: str) -> str:
    return f"island:{island}"
