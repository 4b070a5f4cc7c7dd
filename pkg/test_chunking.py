"""分块、校验与组装测试"""

import numpy as np
import pytest

from hybrid_cdn.chunking import (
    Piece,
    PieceStore,
    assemble,
    compute_digest,
    file_segments,
    make_pieces,
    piece_table,
    synthetic_file,
    verify_piece,
)
from hybrid_cdn.errors import ChunkError, DigestMismatchError, MissingPieceError


def test_last_piece_is_shorter():
    spec, pieces = make_pieces(b"x" * 1000, 300)
    assert spec.piece_count == 4
    assert [len(p.data) for p in pieces] == [300, 300, 300, 100]
    assert spec.piece_length(3) == 100
    assert spec.piece_offset(2) == 600
    with pytest.raises(ChunkError):
        spec.piece_length(4)


def test_invalid_inputs():
    with pytest.raises(ChunkError):
        make_pieces(b"", 10)
    with pytest.raises(ChunkError):
        make_pieces(b"abc", 0)
    with pytest.raises(ChunkError):
        compute_digest(b"abc", "crc32")
    with pytest.raises(ChunkError):
        synthetic_file(0)


def test_assemble_checks_presence_and_digest(small_file):
    data, spec, pieces = small_file
    assert assemble(spec, reversed(pieces)) == data
    with pytest.raises(MissingPieceError) as missing:
        assemble(spec, pieces[:2] + pieces[3:])
    assert missing.value.index == 2
    tampered = list(pieces)
    tampered[1] = Piece(1, b"\0" * len(pieces[1].data), pieces[1].digest)
    with pytest.raises(DigestMismatchError) as bad:
        assemble(spec, tampered)
    assert bad.value.index == 1


def test_store_only_accepts_verified_pieces(small_file):
    data, spec, pieces = small_file
    store = PieceStore(spec)
    assert not store.add(0, b"garbage")
    assert not store.has(0)
    with pytest.raises(ChunkError):
        store.data(0)
    with pytest.raises(ChunkError):
        store.segments(0, 1250)
    for p in pieces:
        assert store.add(p.index, p.data)
    assert store.complete
    assert store.assemble() == data


def test_segments_share_fingerprints_across_stores(small_file):
    _, spec, pieces = small_file
    a = PieceStore.complete_copy(spec, pieces)
    b = PieceStore.complete_copy(spec, pieces)
    segs = a.segments(0, 1250)
    assert sum(s.length for s in segs) == spec.piece_length(0)
    assert len({s.fingerprint for s in segs}) == len(segs)
    assert [s.fingerprint for s in segs] == [s.fingerprint for s in b.segments(0, 1250)]
    assert len(file_segments(a, 1250)) == 4 * len(segs)


def test_synthetic_file_is_seeded():
    assert synthetic_file(4096, 1) == synthetic_file(4096, 1)
    assert synthetic_file(4096, 1) != synthetic_file(4096, 2)


def test_piece_table_for_real_file(tmp_path):
    path = tmp_path / "demo.bin"
    path.write_bytes(b"abcdefghij")
    rows = piece_table(path, piece_size=4, algorithm="sha256")
    assert [(r["index"], r["offset"], r["length"]) for r in rows] == [(0, 0, 4), (1, 4, 4), (2, 8, 2)]
    assert rows[0]["digest"] == compute_digest(b"abcd", "sha256")
    with pytest.raises(ChunkError):
        piece_table(tmp_path / "missing.bin")


def test_verify_piece(small_file):
    _, spec, pieces = small_file
    assert verify_piece(pieces[0], spec.piece_digests[0])
    assert not verify_piece(pieces[0], spec.piece_digests[1])
    assert not verify_piece(Piece(0, pieces[0].data[:-1], pieces[0].digest), spec.piece_digests[0])


@pytest.mark.parametrize("seed", range(20))
def test_random_sizes_reassemble_exactly(seed):
    rng = np.random.default_rng(seed)
    data = synthetic_file(int(rng.integers(1, 50_000)), seed=seed)
    spec, pieces = make_pieces(data, int(rng.integers(1, 8192)))
    order = rng.permutation(len(pieces))
    assert assemble(spec, [pieces[i] for i in order]) == data
    assert spec.matches(data)
    assert not spec.matches(data[:-1] + bytes([data[-1] ^ 1]))


def test_single_bit_flip_is_rejected(small_file):
    _, spec, pieces = small_file
    rng = np.random.default_rng(4)
    for piece in pieces:
        raw = bytearray(piece.data)
        pos = int(rng.integers(len(raw)))
        raw[pos] ^= 1 << int(rng.integers(8))
        flipped = Piece(piece.index, bytes(raw), piece.digest)
        assert not verify_piece(flipped, spec.piece_digests[piece.index])
        with pytest.raises(DigestMismatchError):
            assemble(spec, [flipped if p.index == piece.index else p for p in pieces])
