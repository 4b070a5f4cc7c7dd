"""拓扑、路由与多播范围测试"""

from collections import deque

import numpy as np
import pytest

from hybrid_cdn.errors import RoutingError, TopologySemanticError, TopologySyntaxError
from hybrid_cdn.topology import (
    LinkKind,
    NodeKind,
    compute_routes,
    load_topology,
    multicast_scope,
    parse_topology,
    serialize_topology,
)


def test_paper_topology_shape(paper_topology):
    t = paper_topology
    assert len(t.clients) == 36
    assert t.seeders == ("seeder",)
    assert len(t.islands) == 3
    assert len(t.links_of_kind(LinkKind.CORE)) == 6
    assert {l.name for l in t.links_of_kind(LinkKind.ACCESS)} == {"link0", "link1", "link2", "link3"}
    assert t.island_of("node5") == "router0"
    assert t.island_of("node12") == "router1"
    assert t.island_of("seeder") is None
    assert len(t.island_hosts("router2")) == 12


def test_serialize_then_parse_gives_same_topology(paper_topology):
    assert parse_topology(serialize_topology(paper_topology)) == paper_topology


def test_load_builtin_and_file(tmp_path, micro_topology):
    assert load_topology("builtin:scenario").seeders == ("server",)
    path = tmp_path / "micro.topo"
    path.write_text(serialize_topology(micro_topology), encoding="utf-8")
    assert load_topology(str(path)) == micro_topology
    with pytest.raises(TopologySemanticError):
        load_topology("builtin:nope")
    with pytest.raises(TopologySemanticError):
        load_topology(str(tmp_path / "missing.topo"))


def test_syntax_error_carries_line_number():
    text = "node a kind=client\n\n# 注释\nlink a\n"
    with pytest.raises(TopologySyntaxError) as exc:
        parse_topology(text)
    assert exc.value.line == 4


@pytest.mark.parametrize("text", [
    "node a kind=client\nnode a kind=client\n",
    "node a kind=client\nnode r kind=core-router\nlink a x bw=1mbps delay=1ms\n",
    "node a kind=client\nnode r kind=core-router\nnode s kind=core-router\n"
    "link a r bw=1mbps delay=1ms\nlink a s bw=1mbps delay=1ms\n",
    "node r kind=core-router\nnode s kind=core-router\n",
])
def test_semantic_errors(text):
    with pytest.raises(TopologySemanticError):
        parse_topology(text)


def test_unknown_kind_is_syntax_error():
    with pytest.raises(TopologySyntaxError):
        parse_topology("node a kind=laptop\n")


def test_link_kind_is_inferred(micro_topology):
    assert micro_topology.link("lan0-A").kind == LinkKind.LAN
    assert micro_topology.kind("router0") == NodeKind.ACCESS_ROUTER


def test_routes_are_symmetric_and_shortest(paper_topology):
    routes = compute_routes(paper_topology)
    down = routes.route("seeder", "node0")
    assert [h.link for h in down] == ["link3", "coreLink3", "link0", "router0-lan0", "lan0-node0"]
    up = routes.route("node0", "seeder")
    assert [(h.link, h.src, h.dst) for h in up] == [(h.link, h.dst, h.src) for h in reversed(down)]
    assert routes.hop_count("node0", "node1") == 2
    assert routes.route("node0", "node0") == ()
    with pytest.raises(RoutingError):
        routes.route("node0", "nowhere")


def test_downlink_points_away_from_seeder(paper_topology):
    assert paper_topology.downlink("coreLink3") == "coreRouter3->coreRouter0"
    assert paper_topology.downlink("link0") == "coreRouter0->router0"
    assert paper_topology.downlink("link3") == "seeder->coreRouter3"
    hops = paper_topology.hop_distances("seeder")
    assert hops["coreRouter3"] == 1 and hops["coreRouter0"] == 2 and hops["node0"] == 5


def test_multicast_scope_follows_ttl(paper_topology):
    same_lan = {"node1", "node2", "node3"}
    assert multicast_scope(paper_topology, "node0", 0) == set()
    assert multicast_scope(paper_topology, "node0", 1) == same_lan
    assert multicast_scope(paper_topology, "node0", 2) == same_lan
    island = set(paper_topology.island_hosts("router0")) - {"node0"}
    assert multicast_scope(paper_topology, "node0", 3) == island
    # 多播不进入核心网
    assert multicast_scope(paper_topology, "node0", 16) == island


def bfs_hops(topology, src):
    dist = {src: 0}
    queue = deque([src])
    while queue:
        node = queue.popleft()
        for nxt, _ in topology.neighbors(node):
            if nxt not in dist:
                dist[nxt] = dist[node] + 1
                queue.append(nxt)
    return dist


def test_every_route_is_minimal(paper_topology):
    routes = compute_routes(paper_topology)
    for src in paper_topology.node_ids:
        dist = bfs_hops(paper_topology, src)
        for dst in paper_topology.node_ids:
            route = routes.route(src, dst)
            assert len(route) == dist[dst]
            # 逐跳首尾相接
            at = src
            for hop in route:
                assert hop.src == at
                at = hop.dst
            assert at == dst


def test_multicast_never_leaves_the_island(paper_topology):
    for origin in paper_topology.hosts:
        island = paper_topology.island_of(origin)
        allowed = set(paper_topology.island_hosts(island)) if island else set()
        for ttl in range(6):
            assert multicast_scope(paper_topology, origin, ttl) <= allowed


def generated_topology(rng):
    lines = ["node core0 kind=core-router", "node core1 kind=core-router", "node src kind=seeder",
             f"link core0 core1 bw={int(rng.integers(1, 100))}mbps delay={int(rng.integers(0, 30))}ms",
             f"link src core1 bw={int(rng.integers(64, 4096))}kbps delay=5ms queue={int(rng.integers(1, 80))}"]
    n = 0
    for r in range(int(rng.integers(1, 4))):
        core = f"core{int(rng.integers(2))}"
        lines += [f"node gw{r} kind=access-router", f"link {core} gw{r} bw=2mbps delay=10ms name=access{r}"]
        lans = []
        for l in range(int(rng.integers(1, 3))):
            lan = f"sw{r}x{l}"
            lans.append(lan)
            members = [f"h{n + i}" for i in range(int(rng.integers(1, 5)))]
            n += len(members)
            lines += [f"node {lan} kind=lan-switch", f"link gw{r} {lan} bw=10mbps delay=0ms"]
            for m in members:
                lines += [f"node {m} kind=client", f"link {lan} {m} bw=10mbps delay=0ms"]
            lines.append(f"lan {lan} members={','.join(members)}")
        lines.append(f"island gw{r} lans={','.join(lans)}")
    return parse_topology("\n".join(lines))


@pytest.mark.parametrize("seed", range(25))
def test_generated_topologies_round_trip(seed):
    topology = generated_topology(np.random.default_rng(seed))
    text = serialize_topology(topology)
    assert parse_topology(text) == topology
    assert serialize_topology(parse_topology(text)) == text
