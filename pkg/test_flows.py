"""可靠流测试：无损、有损重传、RST、重传上限、空闲路径时序与空流"""

import pytest

from hybrid_cdn.chunking import PieceStore, file_segments, make_pieces, synthetic_file
from hybrid_cdn.config import EngineSettings
from hybrid_cdn.engine import Simulator
from hybrid_cdn.errors import FlowFailure
from hybrid_cdn.flows import FlowReceiver, FlowState, ReliableFlow, flow_send
from hybrid_cdn.metrics import LinkLedger
from hybrid_cdn.network import Network
from hybrid_cdn.topology import parse_topology


def run_transfer(topology, store, loss=0.0, seed=0):
    sim = Simulator(seed)
    net = Network(sim, topology)
    if loss:
        net.set_loss("down", "r0->h1", loss)
    done = {}
    flow = flow_send(
        net, "h0", "h1", file_segments(store, net.settings.payload_bytes),
        on_complete=lambda f, r: done.update(flow=f, data=r.payload(), at=sim.now),
        on_failed=lambda f, e: done.update(error=e),
    )
    sim.run()
    return flow, done


def test_lossless_transfer_delivers_file(line_topology, seeder_store, small_file):
    flow, done = run_transfer(line_topology, seeder_store)
    assert "error" not in done
    assert done["data"] == small_file[0]
    assert flow.state == FlowState.DONE
    assert flow.retransmissions == 0
    assert flow.finish_time <= done["at"]


def test_lossy_transfer_retransmits(line_topology, seeder_store, small_file):
    flow, done = run_transfer(line_topology, seeder_store, loss=0.3, seed=5)
    assert done["data"] == small_file[0]
    assert flow.retransmissions > 0


def test_rto_is_scaled_idle_round_trip(line_topology, seeder_store):
    sim = Simulator()
    net = Network(sim, line_topology)
    flow = ReliableFlow(net, "h0", "h1", 4000, file_segments(seeder_store, 1250))
    # 去程 2 x (10 ms + 1300 B @ 1 Mbit/s)，回程 2 x (10 ms + 50 B @ 1 Mbit/s)
    assert flow.rto == pytest.approx(4.0 * (2 * (0.010 + 0.0104) + 2 * (0.010 + 0.0004)))
    assert flow._backoff(0) == pytest.approx(flow.rto)
    assert flow._backoff(3) == pytest.approx(8 * flow.rto)
    assert flow._backoff(20) == pytest.approx(64 * flow.rto)


def test_closed_port_fails_flow_immediately(line_topology, seeder_store):
    sim = Simulator()
    net = Network(sim, line_topology)
    errors = []
    flow = ReliableFlow(net, "h0", "h1", 4000, file_segments(seeder_store, 1250),
                        on_failed=lambda f, e: errors.append(e))
    flow.start()
    sim.run()
    assert flow.state == FlowState.FAILED
    assert len(errors) == 1 and isinstance(errors[0], FlowFailure)
    assert flow.finish_time < flow.rto


def test_gives_up_after_max_retries(line_topology, seeder_store):
    sim = Simulator()
    net = Network(sim, line_topology, settings=EngineSettings(max_retries=2))
    net.set_loss("down", "r0->h1", 1.0)
    receiver = FlowReceiver(net, "h1")
    errors = []
    flow = ReliableFlow(net, "h0", "h1", receiver.port, file_segments(seeder_store, 1250),
                        on_failed=lambda f, e: errors.append(e))
    flow.start()
    sim.run()
    assert flow.state == FlowState.FAILED
    assert errors[0].retries == 2
    assert flow.retransmissions >= 2
    assert receiver.bytes_received == 0


# 2 Mbit/s 接入 + 10 Mbit/s 下行，空闲路径
IDLE_PATH = """
node s kind=seeder
node r kind=core-router
node c kind=client
link s r bw=2mbps delay=1ms name=up
link r c bw=10mbps delay=1ms name=down
"""


def test_rto_floor_covers_a_window_at_the_bottleneck():
    sim = Simulator()
    net = Network(sim, parse_topology(IDLE_PATH))
    flow = ReliableFlow(net, "s", "c", 4000, [])
    rtt = (0.001 + 0.0052) + (0.001 + 0.00104) + (0.001 + 0.00004) + (0.001 + 0.0002)
    assert flow.rto == pytest.approx(rtt + 8 * 0.0052)
    assert flow.rto > 4.0 * rtt


def test_one_megabyte_over_idle_2mbps_path():
    data = synthetic_file(1 << 20, seed=3)
    spec, pieces = make_pieces(data, 256 * 1024)
    sim = Simulator(0)
    ledger = LinkLedger()
    net = Network(sim, parse_topology(IDLE_PATH), ledger=ledger)
    done = {}
    flow = flow_send(
        net, "s", "c", file_segments(PieceStore.complete_copy(spec, pieces), net.settings.payload_bytes),
        on_complete=lambda f, r: done.update(data=r.payload(), at=sim.now),
    )
    sim.run()
    assert done["data"] == data
    assert flow.retransmissions == 0
    # 8 * 2^20 / 2e6 = 4.19 s 载荷，加上每个分组 50 字节头部约 4.36 s
    assert 4.19 <= done["at"] <= 4.19 * 1.1
    assert done["at"] == pytest.approx(4.37, abs=0.03)
    assert ledger.stress("up", "s->r") == pytest.approx(1.0)


def test_empty_flow_completes_at_once(line_topology):
    sim = Simulator()
    net = Network(sim, line_topology)
    done = []
    flow = flow_send(net, "h0", "h1", [], on_complete=lambda f, r: done.append((f.state, r.payload(), r.complete)))
    sim.run()
    assert done == [(FlowState.DONE, b"", True)]
    assert not net.is_listening("h1", flow.receiver.port)

    receiver = FlowReceiver(net, "h1")
    fired = []
    receiver.on_complete = fired.append
    receiver.expect(0)
    assert receiver.complete and fired == [receiver]
