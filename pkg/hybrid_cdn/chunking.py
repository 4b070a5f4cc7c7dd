"""
分块器/组装器：按固定大小切分文件、计算分块摘要、校验与重组
"""

import hashlib
import logging
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Tuple, Union

import numpy as np

from .errors import ChunkError, DigestMismatchError, MissingPieceError

logger = logging.getLogger(__name__)

DEFAULT_PIECE_SIZE = 256 * 1024

DIGEST_ALGORITHMS: Dict[str, Callable[..., "hashlib._Hash"]] = {
    "sha1": hashlib.sha1,
    "sha256": hashlib.sha256,
    "md5": hashlib.md5,
}

BytesLike = Union[bytes, bytearray, memoryview]


def compute_digest(data: BytesLike, algorithm: str = "sha1") -> str:
    try:
        factory = DIGEST_ALGORITHMS[algorithm]
    except KeyError:
        raise ChunkError(f"不支持的摘要算法: {algorithm}") from None
    return factory(data).hexdigest()


@dataclass(frozen=True)
class FileSpec:
    name: str
    size: int
    piece_size: int
    piece_digests: Tuple[str, ...]
    algorithm: str = "sha1"
    file_digest: Optional[str] = None

    @property
    def piece_count(self) -> int:
        return len(self.piece_digests)

    @property
    def file_id(self) -> str:
        return hashlib.sha1("".join(self.piece_digests).encode()).hexdigest()[:16]

    def matches(self, data: BytesLike) -> bool:
        """整文件摘要校验；没有整文件摘要时只比较长度"""
        if len(data) != self.size:
            return False
        return self.file_digest is None or compute_digest(data, self.algorithm) == self.file_digest

    def piece_offset(self, index: int) -> int:
        return index * self.piece_size

    def piece_length(self, index: int) -> int:
        if not 0 <= index < self.piece_count:
            raise ChunkError(f"分块序号越界: {index}")
        return min(self.piece_size, self.size - self.piece_offset(index))


@dataclass(frozen=True)
class Piece:
    index: int
    data: bytes
    digest: str


@dataclass(frozen=True)
class Segment:
    """分块内的一个分组载荷；指纹只由 (文件, 分块, 偏移, 长度) 决定"""

    piece: int
    offset: int
    length: int
    fingerprint: bytes
    data: BytesLike


@lru_cache(maxsize=None)
def payload_fingerprint(file_id: str, piece: int, offset: int, length: int) -> bytes:
    return hashlib.blake2b(f"{file_id}:{piece}:{offset}:{length}".encode(), digest_size=16).digest()


def make_pieces(
    data: BytesLike,
    piece_size: int = DEFAULT_PIECE_SIZE,
    name: str = "file",
    algorithm: str = "sha1",
) -> Tuple[FileSpec, List[Piece]]:
    if piece_size < 1:
        raise ChunkError("piece_size 必须 >= 1")
    if len(data) == 0:
        raise ChunkError("文件为空")
    raw = bytes(data)
    pieces = []
    for index, offset in enumerate(range(0, len(raw), piece_size)):
        chunk = raw[offset:offset + piece_size]
        pieces.append(Piece(index, chunk, compute_digest(chunk, algorithm)))
    spec = FileSpec(name, len(raw), piece_size, tuple(p.digest for p in pieces), algorithm,
                    compute_digest(raw, algorithm))
    return spec, pieces


def verify_piece(piece: Piece, expected_digest: str, algorithm: str = "sha1") -> bool:
    return compute_digest(piece.data, algorithm) == expected_digest


def assemble(spec: FileSpec, pieces: Iterable[Piece]) -> bytes:
    by_index = {p.index: p for p in pieces}
    for index in range(spec.piece_count):
        if index not in by_index:
            raise MissingPieceError(index)
    for index in range(spec.piece_count):
        if not verify_piece(by_index[index], spec.piece_digests[index], spec.algorithm):
            raise DigestMismatchError(index)
    return b"".join(by_index[i].data for i in range(spec.piece_count))


class PieceMap:
    """单个 peer 的持有位图；本地副本只经 mark_verified（摘要校验通过）置位"""

    def __init__(self, piece_count: int):
        self._bits = np.zeros(piece_count, dtype=bool)

    def __len__(self) -> int:
        return len(self._bits)

    def __contains__(self, index: int) -> bool:
        return bool(self._bits[index])

    def mark_verified(self, piece: Piece, expected_digest: str, algorithm: str = "sha1") -> bool:
        if not verify_piece(piece, expected_digest, algorithm):
            return False
        self._bits[piece.index] = True
        return True

    def mark_announced(self, index: int) -> None:
        """记录其他 peer 宣告持有的分块（本地不校验）"""
        self._bits[index] = True

    @property
    def count(self) -> int:
        return int(self._bits.sum())

    @property
    def complete(self) -> bool:
        return bool(self._bits.all())

    def held(self) -> List[int]:
        return [int(i) for i in np.flatnonzero(self._bits)]

    def missing(self) -> List[int]:
        return [int(i) for i in np.flatnonzero(~self._bits)]


class PieceStore:
    """peer 已校验分块的内容存储；只对已校验分块提供分组"""

    def __init__(self, spec: FileSpec):
        self.spec = spec
        self.map = PieceMap(spec.piece_count)
        self._data: Dict[int, bytes] = {}
        self._segments: Dict[Tuple[int, int], Tuple[Segment, ...]] = {}

    @classmethod
    def complete_copy(cls, spec: FileSpec, pieces: Iterable[Piece]) -> "PieceStore":
        store = cls(spec)
        for p in pieces:
            if not store.add(p.index, p.data):
                raise DigestMismatchError(p.index)
        return store

    def has(self, index: int) -> bool:
        return index in self.map

    @property
    def complete(self) -> bool:
        return self.map.complete

    def add(self, index: int, data: BytesLike) -> bool:
        """校验后入库；已持有时返回 True 但不覆盖"""
        if self.has(index):
            return True
        piece = Piece(index, bytes(data), self.spec.piece_digests[index])
        if not self.map.mark_verified(piece, self.spec.piece_digests[index], self.spec.algorithm):
            logger.debug("分块 %d 摘要不符，丢弃", index)
            return False
        self._data[index] = piece.data
        return True

    def data(self, index: int) -> bytes:
        if not self.has(index):
            raise ChunkError(f"分块 {index} 未校验，不能读取")
        return self._data[index]

    def segments(self, index: int, payload_bytes: int) -> Tuple[Segment, ...]:
        key = (index, payload_bytes)
        cached = self._segments.get(key)
        if cached is not None:
            return cached
        view = memoryview(self.data(index))
        fid = self.spec.file_id
        segs = tuple(
            Segment(index, off, min(payload_bytes, len(view) - off),
                    payload_fingerprint(fid, index, off, min(payload_bytes, len(view) - off)),
                    view[off:off + payload_bytes])
            for off in range(0, len(view), payload_bytes)
        )
        self._segments[key] = segs
        return segs

    def pieces(self) -> List[Piece]:
        return [Piece(i, self._data[i], self.spec.piece_digests[i]) for i in sorted(self._data)]

    def assemble(self) -> bytes:
        return assemble(self.spec, self.pieces())


def file_segments(store: PieceStore, payload_bytes: int) -> List[Segment]:
    """整文件按分块边界切成分组（WWW 模型用同一套指纹）"""
    out: List[Segment] = []
    for index in range(store.spec.piece_count):
        out.extend(store.segments(index, payload_bytes))
    return out


def reassemble_piece(segments: Iterable[Segment]) -> bytes:
    return b"".join(bytes(s.data) for s in sorted(segments, key=lambda s: s.offset))


def synthetic_file(size: int, seed: int = 0) -> bytes:
    """可复现的伪随机文件内容"""
    if size <= 0:
        raise ChunkError("文件大小必须 > 0")
    return np.random.default_rng(seed).bytes(size)


def piece_table(path: Union[str, Path], piece_size: int = DEFAULT_PIECE_SIZE, algorithm: str = "sha1") -> List[dict]:
    """为真实文件生成分块表（演示用）"""
    p = Path(path)
    try:
        data = p.read_bytes()
    except OSError as e:
        raise ChunkError(f"无法读取文件 {p}: {e}") from e
    return piece_rows(*make_pieces(data, piece_size, name=p.name, algorithm=algorithm))


def piece_rows(spec: FileSpec, pieces: Iterable[Piece]) -> List[dict]:
    return [
        {"index": piece.index, "offset": spec.piece_offset(piece.index), "length": len(piece.data), "digest": piece.digest}
        for piece in pieces
    ]
