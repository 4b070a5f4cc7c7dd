"""三种内容分发模型：WWW 单播、P2P swarm、Hybrid（swarm + 岛内多播）"""

from typing import Callable, Dict

from ..config import ModelName
from ..errors import ConfigError
from .common import ModelOutcome, RunContext
from .handshake import HandshakeAgent, Head, PortPool, TransferSession, dispatch_batches, handshake_respond
from .hybrid import HybridPeer, run_hybrid
from .messages import HandshakeKind, HandshakeMessage
from .selection import AvailabilityTable, SelectionPhase, select_piece
from .swarm import SwarmPeer, run_p2p
from .tracker import Tracker, tracker_announce
from .www import run_www

MODEL_RUNNERS: Dict[ModelName, Callable[..., ModelOutcome]] = {
    ModelName.WWW: run_www,
    ModelName.P2P: run_p2p,
    ModelName.HYBRID: run_hybrid,
}


def runner_for(model) -> Callable[..., ModelOutcome]:
    try:
        return MODEL_RUNNERS[ModelName(model)]
    except ValueError:
        raise ConfigError(f"未知模型: {model}") from None


__all__ = [
    "AvailabilityTable", "HandshakeAgent", "HandshakeKind", "HandshakeMessage", "Head", "HybridPeer",
    "MODEL_RUNNERS", "ModelOutcome", "PortPool", "RunContext", "SelectionPhase", "SwarmPeer", "Tracker",
    "TransferSession", "dispatch_batches", "handshake_respond", "run_hybrid", "run_p2p", "run_www",
    "runner_for", "select_piece", "tracker_announce",
]
