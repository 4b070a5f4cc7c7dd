"""swarm 中心登记处：登记 peer，返回随机 peer 列表"""

import logging
from typing import List, Set

import numpy as np

from ..errors import TrackerError

logger = logging.getLogger(__name__)


class Tracker:
    def __init__(self, peer_list_size: int = 20):
        if peer_list_size < 1:
            raise TrackerError("peer_list_size 必须 >= 1")
        self.peer_list_size = peer_list_size
        self._peers: Set[str] = set()

    def register(self, peer: str) -> None:
        self._peers.add(peer)

    def unregister(self, peer: str) -> None:
        self._peers.discard(peer)

    @property
    def peers(self) -> List[str]:
        return sorted(self._peers)

    def __contains__(self, peer: str) -> bool:
        return peer in self._peers

    def announce(self, peer: str, rng: np.random.Generator) -> List[str]:
        """不含请求者的均匀随机子集，大小 min(peer_list_size, 登记数 - 1)"""
        if peer not in self._peers:
            raise TrackerError(f"未登记的 peer: {peer}")
        others = [p for p in self.peers if p != peer]
        k = min(self.peer_list_size, len(others))
        if k == 0:
            return []
        picked = rng.choice(len(others), size=k, replace=False)
        return [others[i] for i in picked]


def tracker_announce(tracker: Tracker, peer: str, rng: np.random.Generator) -> List[str]:
    return tracker.announce(peer, rng)
