"""pytest 公共夹具：小拓扑、小文件、隔离的 JSON 存储"""

import pytest

from hybrid_cdn.chunking import PieceStore, make_pieces, synthetic_file
from hybrid_cdn.config import ConfigStore, RunHistory, build_config
from hybrid_cdn.topology import build_paper_topology, build_redundancy_scenario, parse_topology

# 一个岛、一个 LAN、三台主机，链路 1ms
MICRO_TOPOLOGY = """
node router0 kind=access-router
node lan0 kind=lan-switch
node R kind=client
node A kind=client
node B kind=client
link router0 lan0 bw=10mbps delay=1ms name=router0-lan0
link lan0 R bw=10mbps delay=1ms name=lan0-R
link lan0 A bw=10mbps delay=1ms name=lan0-A
link lan0 B bw=10mbps delay=1ms name=lan0-B
lan lan0 members=R,A,B
island router0 lans=lan0
"""

# 两台主机直连一个路由器，用于链路和流的时序测试
LINE_TOPOLOGY = """
node h0 kind=seeder
node r0 kind=core-router
node h1 kind=client
link h0 r0 bw=1mbps delay=10ms queue=2 kind=access name=up
link r0 h1 bw=1mbps delay=10ms queue=2 kind=access name=down
"""


@pytest.fixture
def micro_topology():
    return parse_topology(MICRO_TOPOLOGY)


@pytest.fixture
def line_topology():
    return parse_topology(LINE_TOPOLOGY)


@pytest.fixture(scope="session")
def paper_topology():
    return build_paper_topology()


@pytest.fixture(scope="session")
def scenario_topology():
    return build_redundancy_scenario()


@pytest.fixture
def small_file():
    """64 KiB 文件，4 个 16 KiB 分块"""
    data = synthetic_file(64 * 1024, seed=7)
    spec, pieces = make_pieces(data, 16 * 1024, name="small.bin")
    return data, spec, pieces


@pytest.fixture
def seeder_store(small_file):
    _, spec, pieces = small_file
    return PieceStore.complete_copy(spec, pieces)


@pytest.fixture
def small_config(tmp_path):
    def make(**overrides):
        data = {
            "topology": "builtin:scenario",
            "file_size": 64 * 1024,
            "piece_size": 16 * 1024,
            "runs": 1,
            "out_dir": str(tmp_path / "out"),
        }
        data.update(overrides)
        return build_config(data)

    return make


@pytest.fixture
def config_store(tmp_path):
    return ConfigStore(tmp_path / "saved_configs.json")


@pytest.fixture
def run_history(tmp_path):
    return RunHistory(tmp_path / "history.json")
