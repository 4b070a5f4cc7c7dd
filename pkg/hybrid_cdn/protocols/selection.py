"""
可用性表（每个分块由哪些 peer 持有）与选块策略：首块随机，之后最稀有优先。
"""

from collections import defaultdict
from enum import Enum
from typing import Collection, Dict, Iterable, List, Optional, Set

import numpy as np

from ..chunking import PieceMap


class SelectionPhase(str, Enum):
    RANDOM_FIRST = "random-first"
    RAREST_FIRST = "rarest-first"


class AvailabilityTable:
    """只根据收到的 bitfield / have 更新；选块只读这张表"""

    def __init__(self, piece_count: int):
        self.piece_count = piece_count
        self._holders: Dict[int, Set[str]] = defaultdict(set)
        self._by_peer: Dict[str, PieceMap] = {}

    def _peer_map(self, peer: str) -> PieceMap:
        view = self._by_peer.get(peer)
        if view is None:
            view = self._by_peer[peer] = PieceMap(self.piece_count)
        return view

    def add(self, peer: str, piece: int) -> bool:
        """返回是否是新信息"""
        if peer in self._holders[piece]:
            return False
        self._holders[piece].add(peer)
        self._peer_map(peer).mark_announced(piece)
        return True

    def add_bitfield(self, peer: str, pieces: Iterable[int]) -> bool:
        self._peer_map(peer)
        changed = False
        for piece in pieces:
            changed |= self.add(peer, piece)
        return changed

    def remove_peer(self, peer: str) -> None:
        self._by_peer.pop(peer, None)
        for holders in self._holders.values():
            holders.discard(peer)

    def holders(self, piece: int) -> List[str]:
        return sorted(self._holders.get(piece, ()))

    def count(self, piece: int) -> int:
        return len(self._holders.get(piece, ()))

    def peer_view(self, peer: str) -> Optional[PieceMap]:
        return self._by_peer.get(peer)

    @property
    def peers(self) -> List[str]:
        return sorted(self._by_peer)


def selection_phase(mine: PieceMap) -> SelectionPhase:
    return SelectionPhase.RANDOM_FIRST if mine.count == 0 else SelectionPhase.RAREST_FIRST


def select_piece(
    table: AvailabilityTable,
    mine: PieceMap,
    rng: np.random.Generator,
    exclude: Collection[int] = (),
    restrict: Optional[Collection[int]] = None,
) -> Optional[int]:
    """在想要且至少一个 peer 持有的分块中选择；没有可选时返回 None"""
    candidates = [
        p for p in mine.missing()
        if p not in exclude and table.count(p) > 0 and (restrict is None or p in restrict)
    ]
    if not candidates:
        return None
    if selection_phase(mine) == SelectionPhase.RAREST_FIRST:
        rarest = min(table.count(p) for p in candidates)
        candidates = [p for p in candidates if table.count(p) == rarest]
    return candidates[int(rng.integers(len(candidates)))]
