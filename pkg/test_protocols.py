"""握手状态机、选块、tracker 测试；含三主机小拓扑上的完整握手轨迹"""

from dataclasses import replace

import numpy as np
import pytest

from hybrid_cdn.chunking import PieceMap, PieceStore, make_pieces, synthetic_file
from hybrid_cdn.config import ProtocolSettings
from hybrid_cdn.engine import Simulator
from hybrid_cdn.errors import TrackerError
from hybrid_cdn.network import Network
from hybrid_cdn.protocols import (
    AvailabilityTable,
    HandshakeAgent,
    HandshakeKind,
    HandshakeMessage,
    HybridPeer,
    PortPool,
    RunContext,
    SelectionPhase,
    SwarmPeer,
    Tracker,
    dispatch_batches,
    handshake_respond,
    select_piece,
)
from hybrid_cdn.protocols.handshake import RequestState, SessionState
from hybrid_cdn.protocols.selection import selection_phase


def two_chunk_file():
    # 两个分块，每块一个分组
    return make_pieces(bytes(range(200)) * 5, 500, name="two.bin")


class HandshakeBench:
    """R 向 A、B 请求分块；B 有全部分块且只有 1 个上传端口，A 什么都没有"""

    def __init__(self, topology):
        self.spec, self.pieces = two_chunk_file()
        self.sim = Simulator(0)
        self.net = Network(self.sim, topology)
        self.trace = []
        self.stores = {
            "R": PieceStore(self.spec),
            "A": PieceStore(self.spec),
            "B": PieceStore.complete_copy(self.spec, self.pieces),
        }
        self.agents = {}
        for node, store in self.stores.items():
            protocol = ProtocolSettings(port_pool=1) if node == "B" else ProtocolSettings()
            agent = HandshakeAgent(node, self.net, store, protocol, trace=self.trace,
                                   candidates=lambda chunk: ["A", "B"])
            self.net.attach(node, agent.handle)
            self.agents[node] = agent


def test_handshake_golden_trace(micro_topology):
    bench = HandshakeBench(micro_topology)
    head = bench.agents["R"].head
    dispatch_batches(head, [0, 1], 2)
    bench.sim.schedule(1.0, bench.net.set_loss, "lan0-A", "lan0->A", 1.0)
    bench.sim.run(until=30.0)

    assert bench.trace == [
        ("Type1", "R", "A", 0),
        ("Type1", "R", "A", 1),
        ("Type3a", "A", "R", 0),
        ("Type3a", "A", "R", 1),
        ("Type1", "R", "B", 0),
        ("Type1", "R", "B", 1),
        ("Type2", "B", "R", 0),
        ("Type3b", "B", "R", 1),
        ("Type4", "R", "B", 0),
        ("retry", "R", None, 1),
        ("Type1", "R", "A", 1),
        ("timeout", "R", "A", 1),
        ("Type1", "R", "B", 1),
        ("Type2", "B", "R", 1),
        ("Type4", "R", "B", 1),
    ]
    assert bench.stores["R"].complete
    assert bench.stores["R"].assemble() == bench.stores["B"].assemble()
    assert sorted(head.completed) == [(0, "B"), (1, "B")]
    assert head.active == {}
    assert bench.agents["B"].pool.in_use == 0


def test_session_chains_follow_message_order(micro_topology):
    bench = HandshakeBench(micro_topology)
    head = bench.agents["R"].head
    dispatch_batches(head, [0, 1], 2)
    bench.sim.run(until=30.0)
    chains = [[k.value for k in s.chain] for s in head.sessions]
    assert ["Type1", "Type3a"] in chains
    assert ["Type1", "Type3b"] in chains
    assert ["Type1", "Type2", "Type4"] in chains
    assert all(s.finished_at is not None for s in bench.agents["B"].upload_sessions)


def test_batch_size_bounds_concurrent_requests(micro_topology):
    spec, pieces = make_pieces(bytes(4000), 500)
    sim = Simulator(0)
    net = Network(sim, micro_topology)
    stores = {"R": PieceStore(spec), "B": PieceStore.complete_copy(spec, pieces)}
    agents = {}
    for node, store in stores.items():
        agents[node] = HandshakeAgent(node, net, store, ProtocolSettings(port_pool=8), candidates=lambda c: ["B"])
        net.attach(node, agents[node].handle)
    head = agents["R"].head
    dispatch_batches(head, list(range(spec.piece_count)), 3)
    sim.run(until=60.0)
    assert stores["R"].complete
    assert head.max_concurrent == 3
    with pytest.raises(ValueError):
        dispatch_batches(head, [0], 0)


class FakeAgent:
    def __init__(self, chunks, choked=False, ports=1):
        self.chunks = set(chunks)
        self.choked = choked
        self.pool = PortPool(ports)

    def has(self, chunk):
        return chunk in self.chunks

    def is_choked(self, requester):
        return self.choked


def test_handshake_respond_outcomes():
    ask = HandshakeMessage(HandshakeKind.TYPE1, 3, "R", "U", nonce=1)
    assert handshake_respond(FakeAgent([]), ask).kind == HandshakeKind.TYPE3A
    assert handshake_respond(FakeAgent([3], choked=True), ask).kind == HandshakeKind.TYPE3B
    agent = FakeAgent([3], ports=1)
    accepted = handshake_respond(agent, ask)
    assert accepted.kind == HandshakeKind.TYPE2 and accepted.port == 0
    assert handshake_respond(agent, ask).kind == HandshakeKind.TYPE3B
    with pytest.raises(ValueError):
        handshake_respond(agent, accepted)


def test_message_port_field_rules():
    with pytest.raises(ValueError):
        HandshakeMessage(HandshakeKind.TYPE2, 0, "R", "U", 1)
    with pytest.raises(ValueError):
        HandshakeMessage(HandshakeKind.TYPE3A, 0, "R", "U", 1, port=4)
    confirm = HandshakeMessage(HandshakeKind.TYPE4, 0, "R", "U", 1, port=1024)
    assert (confirm.sender, confirm.receiver) == ("R", "U")


def test_port_pool_reuses_lowest_slot():
    pool = PortPool(2)
    assert [pool.acquire(), pool.acquire(), pool.acquire()] == [0, 1, None]
    pool.release(0)
    assert pool.acquire() == 0
    with pytest.raises(ValueError):
        PortPool(0)


def test_random_first_then_rarest_first():
    table = AvailabilityTable(4)
    table.add_bitfield("p1", [0, 1, 2])
    table.add_bitfield("p2", [0, 1])
    table.add("p3", 0)
    mine = PieceMap(4)
    rng = np.random.default_rng(0)
    assert selection_phase(mine) == SelectionPhase.RANDOM_FIRST
    assert select_piece(table, mine, rng) in {0, 1, 2}
    mine.mark_announced(1)
    assert selection_phase(mine) == SelectionPhase.RAREST_FIRST
    # 分块 2 只有一个持有者
    assert select_piece(table, mine, rng) == 2
    assert select_piece(table, mine, rng, exclude={2}) == 0
    assert select_piece(table, mine, rng, restrict=[3]) is None
    assert table.holders(0) == ["p1", "p2", "p3"]
    table.remove_peer("p1")
    assert table.count(2) == 0


def test_tracker_returns_random_others():
    tracker = Tracker(peer_list_size=3)
    for i in range(6):
        tracker.register(f"n{i}")
    rng = np.random.default_rng(1)
    peers = tracker.announce("n0", rng)
    assert len(peers) == 3
    assert "n0" not in peers and len(set(peers)) == 3
    small = Tracker(peer_list_size=20)
    small.register("solo")
    assert small.announce("solo", rng) == []
    with pytest.raises(TrackerError):
        tracker.announce("stranger", rng)


# ---- hybrid：认领竞争、多播抑制、多播到达后撤回单播 ----

def hybrid_island(topology, holder="A"):
    """R、A、B 同岛；只有 holder 持有全部 4 个分块（每块两个分组）"""
    spec, pieces = make_pieces(synthetic_file(4 * 2500, seed=3), 2500)
    sim = Simulator(0)
    ctx = RunContext(sim, topology)
    tracker = Tracker()
    peers = {}
    for node in ("R", "A", "B"):
        store = PieceStore.complete_copy(spec, pieces) if node == holder else PieceStore(spec)
        peers[node] = HybridPeer(ctx, node, store, tracker)
    return sim, peers


def test_claim_race_smaller_id_keeps_the_fetch(micro_topology):
    _, peers = hybrid_island(micro_topology)
    loser, winner = peers["R"], peers["B"]
    for peer in (loser, winner):
        peer.head.handshake_initiate(0, ["A"])
        peer.claims[0] = (peer.node, 0.0)

    loser._on_claim(0, "B")
    assert 0 not in loser.head.active
    assert loser.claims[0][0] == "B"
    assert loser.yielded == 1
    assert loser.head.sessions[0].state == SessionState.FAILED

    winner._on_claim(0, "R")
    assert 0 in winner.head.active
    assert winner.claims[0] == ("B", 0.0)
    assert winner.yielded == 0


def test_claim_does_not_cancel_a_transfer_in_progress(micro_topology):
    _, peers = hybrid_island(micro_topology)
    peer = peers["R"]
    req = peer.head.handshake_initiate(1, ["A"])
    peer.claims[1] = ("R", 0.0)
    req.state = RequestState.TRANSFERRING
    peer._on_claim(1, "B")
    assert 1 in peer.head.active
    assert peer.yielded == 0


def test_first_claim_is_recorded_without_side_effects(micro_topology):
    _, peers = hybrid_island(micro_topology)
    peer = peers["R"]
    peer._on_claim(2, "B")
    assert peer.claims[2][0] == "B"
    assert peer.head.active == {}


def test_holdoff_suppresses_when_island_already_saw_the_piece(micro_topology):
    sim, peers = hybrid_island(micro_topology)
    holder = peers["A"]
    holder.island_seen[0] = 1.0
    holder._after_holdoff(0, 0.5)
    assert holder.suppressed == 1
    assert holder.multicasts == 0

    holder._after_holdoff(1, 0.5)
    assert holder.multicasts == 1
    sim.run()
    for node in ("R", "B"):
        assert peers[node].store.has(1)
        assert not peers[node].store.has(0)


def test_multicast_arrival_withdraws_the_unicast_request(micro_topology):
    sim, peers = hybrid_island(micro_topology)
    fetcher, holder = peers["B"], peers["A"]
    fetcher.head.handshake_initiate(1, ["A"])
    holder._multicast_piece(1)
    sim.run()

    assert fetcher.store.has(1)
    assert 1 not in fetcher.head.active
    assert fetcher.head.sessions[0].state == SessionState.FAILED
    assert fetcher.repairs == 0


def test_assembled_file_is_checked_against_file_digest(micro_topology):
    spec, pieces = make_pieces(synthetic_file(5000, seed=5), 2500)
    for file_digest, completed in ((spec.file_digest, True), ("0" * 40, False)):
        ctx = RunContext(Simulator(0), micro_topology)
        store = PieceStore.complete_copy(replace(spec, file_digest=file_digest), pieces)
        peer = SwarmPeer(ctx, "R", store, Tracker())
        record = ctx.track("R", 0.0)
        peer.started = True
        peer.check_complete()
        assert record.completed is completed
        assert peer.failed is not completed
