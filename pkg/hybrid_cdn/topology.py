"""
网络拓扑：节点/链路/LAN/岛的静态描述、最短跳数路由、TTL 限定的岛内多播范围，
以及内置实验拓扑的构建器和行式文本配置的解析/序列化。
"""

import re
from collections import deque
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

import networkx as nx

from .errors import RoutingError, TopologySemanticError, TopologySyntaxError

DEFAULT_QUEUE_CAPACITY = 50

Mbps = 1_000_000
Kbps = 1_000


class NodeKind(str, Enum):
    CLIENT = "client"
    ACCESS_ROUTER = "access-router"
    CORE_ROUTER = "core-router"
    SEEDER = "seeder"
    LAN_SWITCH = "lan-switch"


class LinkKind(str, Enum):
    CORE = "core"
    ACCESS = "access"
    LAN = "lan"


HOST_KINDS = frozenset({NodeKind.CLIENT, NodeKind.SEEDER})


@dataclass(frozen=True)
class NodeSpec:
    id: str
    kind: NodeKind

    @property
    def is_host(self) -> bool:
        return self.kind in HOST_KINDS


@dataclass(frozen=True)
class LinkSpec:
    """全双工链路；两个方向各有独立的队列和计数"""

    a: str
    b: str
    bandwidth: int
    delay_ms: int
    queue_capacity: int = DEFAULT_QUEUE_CAPACITY
    kind: LinkKind = LinkKind.CORE
    name: str = ""

    def __post_init__(self):
        if self.a == self.b:
            raise TopologySemanticError(f"链路 {self.a} 不能连接自身")
        if self.bandwidth <= 0:
            raise TopologySemanticError(f"链路 {self.a}-{self.b} 带宽必须 > 0")
        if self.delay_ms < 0:
            raise TopologySemanticError(f"链路 {self.a}-{self.b} 时延不能为负")
        if self.queue_capacity < 1:
            raise TopologySemanticError(f"链路 {self.a}-{self.b} 队列容量必须 >= 1")
        if not self.name:
            object.__setattr__(self, "name", f"{self.a}-{self.b}")

    @property
    def propagation_delay(self) -> float:
        return self.delay_ms / 1000.0

    @property
    def endpoints(self) -> Tuple[str, str]:
        return self.a, self.b

    def other(self, node: str) -> str:
        if node == self.a:
            return self.b
        if node == self.b:
            return self.a
        raise TopologySemanticError(f"{node} 不是链路 {self.name} 的端点")

    def direction(self, src: str) -> str:
        return f"{src}->{self.other(src)}"

    def serialization_delay(self, size_bytes: int) -> float:
        return 8.0 * size_bytes / self.bandwidth


@dataclass(frozen=True)
class Hop:
    link: str
    src: str
    dst: str

    @property
    def direction(self) -> str:
        return f"{self.src}->{self.dst}"


@dataclass(frozen=True)
class Topology:
    """构建后不可变，可在并发运行之间只读共享"""

    nodes: Tuple[NodeSpec, ...]
    links: Tuple[LinkSpec, ...]
    lans: Tuple[Tuple[str, Tuple[str, ...]], ...] = ()
    islands: Tuple[Tuple[str, Tuple[str, ...]], ...] = ()

    def __post_init__(self):
        self._validate()

    # ---- 校验 ----
    def _validate(self) -> None:
        ids: Set[str] = set()
        for node in self.nodes:
            if node.id in ids:
                raise TopologySemanticError(f"节点 id 重复: {node.id}")
            ids.add(node.id)

        names: Set[str] = set()
        for link in self.links:
            for end in link.endpoints:
                if end not in ids:
                    raise TopologySemanticError(f"链路 {link.name} 引用了未声明的节点: {end}")
            if link.name in names:
                raise TopologySemanticError(f"链路名称重复: {link.name}")
            names.add(link.name)

        kinds = {n.id: n.kind for n in self.nodes}
        seen_members: Dict[str, str] = {}
        lan_ids: Set[str] = set()
        for lan_id, members in self.lans:
            if lan_id not in kinds:
                raise TopologySemanticError(f"LAN 引用了未声明的节点: {lan_id}")
            if kinds[lan_id] != NodeKind.LAN_SWITCH:
                raise TopologySemanticError(f"LAN {lan_id} 必须是 lan-switch 节点")
            if lan_id in lan_ids:
                raise TopologySemanticError(f"LAN 重复声明: {lan_id}")
            lan_ids.add(lan_id)
            for member in members:
                if member not in kinds:
                    raise TopologySemanticError(f"LAN {lan_id} 引用了未声明的节点: {member}")
                if kinds[member] not in HOST_KINDS:
                    raise TopologySemanticError(f"LAN {lan_id} 的成员 {member} 不是主机")
                if member in seen_members:
                    raise TopologySemanticError(f"{member} 同时属于 {seen_members[member]} 和 {lan_id}")
                if not any(set(l.endpoints) == {lan_id, member} for l in self.links):
                    raise TopologySemanticError(f"{member} 没有连接到 LAN {lan_id}")
                seen_members[member] = lan_id

        lan_owner: Dict[str, str] = {}
        for router, lans in self.islands:
            if router not in kinds:
                raise TopologySemanticError(f"岛引用了未声明的节点: {router}")
            if kinds[router] != NodeKind.ACCESS_ROUTER:
                raise TopologySemanticError(f"岛 {router} 必须是 access-router 节点")
            if not lans:
                raise TopologySemanticError(f"岛 {router} 至少需要一个 LAN")
            for lan_id in lans:
                if lan_id not in lan_ids:
                    raise TopologySemanticError(f"岛 {router} 引用了未声明的 LAN: {lan_id}")
                if lan_id in lan_owner:
                    raise TopologySemanticError(f"LAN {lan_id} 属于多个岛")
                lan_owner[lan_id] = router
        for lan_id in lan_ids:
            if lan_id not in lan_owner:
                raise TopologySemanticError(f"LAN {lan_id} 不属于任何岛")

        degree: Dict[str, int] = {i: 0 for i in ids}
        for link in self.links:
            degree[link.a] += 1
            degree[link.b] += 1
        for node in self.nodes:
            if node.is_host and degree[node.id] != 1:
                raise TopologySemanticError(f"主机 {node.id} 必须恰好连接一条链路")

        if self.nodes and not nx.is_connected(self.graph):
            start = self.nodes[0].id
            missing = sorted(ids - nx.node_connected_component(self.graph, start))
            raise TopologySemanticError(f"拓扑不连通: {start} 无法到达 {', '.join(missing[:5])}")

    # ---- 查询 ----
    @cached_property
    def _kinds(self) -> Dict[str, NodeKind]:
        return {n.id: n.kind for n in self.nodes}

    @cached_property
    def _adjacency(self) -> Dict[str, Tuple[Tuple[str, LinkSpec], ...]]:
        adj: Dict[str, List[Tuple[str, LinkSpec]]] = {n.id: [] for n in self.nodes}
        for link in self.links:
            adj[link.a].append((link.b, link))
            adj[link.b].append((link.a, link))
        return {k: tuple(sorted(v, key=lambda item: (item[0], item[1].name))) for k, v in adj.items()}

    @cached_property
    def graph(self) -> nx.Graph:
        g = nx.Graph()
        g.add_nodes_from(n.id for n in self.nodes)
        g.add_edges_from((l.a, l.b, {"name": l.name}) for l in self.links)
        return g

    @cached_property
    def _links_by_name(self) -> Dict[str, LinkSpec]:
        return {l.name: l for l in self.links}

    @cached_property
    def _lan_members(self) -> Dict[str, Tuple[str, ...]]:
        return dict(self.lans)

    @cached_property
    def _host_lan(self) -> Dict[str, str]:
        return {m: lan for lan, members in self.lans for m in members}

    @cached_property
    def _lan_island(self) -> Dict[str, str]:
        return {lan: router for router, lans in self.islands for lan in lans}

    @cached_property
    def _island_lans(self) -> Dict[str, Tuple[str, ...]]:
        return dict(self.islands)

    def node(self, node_id: str) -> NodeSpec:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise TopologySemanticError(f"未知节点: {node_id}")

    def kind(self, node_id: str) -> NodeKind:
        try:
            return self._kinds[node_id]
        except KeyError:
            raise TopologySemanticError(f"未知节点: {node_id}") from None

    def link(self, name: str) -> LinkSpec:
        try:
            return self._links_by_name[name]
        except KeyError:
            raise TopologySemanticError(f"未知链路: {name}") from None

    def neighbors(self, node_id: str) -> Tuple[Tuple[str, LinkSpec], ...]:
        return self._adjacency[node_id]

    @property
    def node_ids(self) -> Tuple[str, ...]:
        return tuple(n.id for n in self.nodes)

    @property
    def clients(self) -> Tuple[str, ...]:
        return tuple(n.id for n in self.nodes if n.kind == NodeKind.CLIENT)

    @property
    def seeders(self) -> Tuple[str, ...]:
        return tuple(n.id for n in self.nodes if n.kind == NodeKind.SEEDER)

    @property
    def hosts(self) -> Tuple[str, ...]:
        return tuple(n.id for n in self.nodes if n.is_host)

    def links_of_kind(self, kind: LinkKind) -> Tuple[LinkSpec, ...]:
        return tuple(l for l in self.links if l.kind == kind)

    def lan_members(self, lan_id: str) -> Tuple[str, ...]:
        return self._lan_members.get(lan_id, ())

    def lan_of(self, host: str) -> Optional[str]:
        return self._host_lan.get(host)

    def island_of(self, node_id: str) -> Optional[str]:
        """返回节点所在岛（以接入路由器 id 标识）"""
        kind = self.kind(node_id)
        if kind in HOST_KINDS:
            lan = self._host_lan.get(node_id)
            return self._lan_island.get(lan) if lan else None
        if kind == NodeKind.LAN_SWITCH:
            return self._lan_island.get(node_id)
        if kind == NodeKind.ACCESS_ROUTER and node_id in self._island_lans:
            return node_id
        return None

    def island_hosts(self, router: str) -> Tuple[str, ...]:
        return tuple(m for lan in self._island_lans.get(router, ()) for m in self._lan_members[lan])

    def hop_distances(self, src: str) -> Dict[str, int]:
        return dict(nx.single_source_shortest_path_length(self.graph, src))

    def downlink(self, link_name: str) -> str:
        """远离 seeder 的方向；跳数相同则取声明顺序"""
        link = self.link(link_name)
        if self.seeders:
            dist = self.hop_distances(self.seeders[0])
            if dist[link.b] < dist[link.a]:
                return link.direction(link.b)
        return link.direction(link.a)

    def multicast_fanout(self, node_id: str, came_from: Optional[str]) -> List[str]:
        """多播转发的下一跳：交换机转发到成员与岛路由器，接入路由器只在本岛 LAN 之间转发，核心路由器不转发"""
        kind = self.kind(node_id)
        adj = self._adjacency[node_id]
        if kind in HOST_KINDS:
            return [n for n, _ in adj if n != came_from]
        if kind == NodeKind.LAN_SWITCH:
            targets = set(self._lan_members.get(node_id, ()))
            router = self._lan_island.get(node_id)
            if router:
                targets.add(router)
        elif kind == NodeKind.ACCESS_ROUTER:
            targets = set(self._island_lans.get(node_id, ()))
        else:
            return []
        return [n for n, _ in adj if n in targets and n != came_from]


class RoutingTable:
    """(源, 目的) -> 有序链路序列；静态、对称、最少跳数"""

    def __init__(self, routes: Dict[Tuple[str, str], Tuple[Hop, ...]]):
        self._routes = routes

    def route(self, src: str, dst: str) -> Tuple[Hop, ...]:
        try:
            return self._routes[(src, dst)]
        except KeyError:
            raise RoutingError(f"没有从 {src} 到 {dst} 的路由") from None

    def __contains__(self, pair: Tuple[str, str]) -> bool:
        return pair in self._routes

    def __len__(self) -> int:
        return len(self._routes)

    def hop_count(self, src: str, dst: str) -> int:
        return len(self.route(src, dst))


def compute_routes(t: Topology) -> RoutingTable:
    ids = sorted(t.node_ids)
    dist = {d: t.hop_distances(d) for d in ids}
    routes: Dict[Tuple[str, str], Tuple[Hop, ...]] = {}
    for i, a in enumerate(ids):
        routes[(a, a)] = ()
        for b in ids[i + 1:]:
            to_b = dist[b]
            if a not in to_b:
                raise RoutingError(f"内部错误: {a} 无法到达 {b}")
            hops: List[Hop] = []
            u = a
            while u != b:
                # 邻居已按 id 排序，第一个更靠近目的的邻居即字典序最小的下一跳
                nxt = next((v, link) for v, link in t.neighbors(u) if to_b.get(v) == to_b[u] - 1)
                hops.append(Hop(nxt[1].name, u, nxt[0]))
                u = nxt[0]
            forward = tuple(hops)
            routes[(a, b)] = forward
            routes[(b, a)] = tuple(Hop(h.link, h.dst, h.src) for h in reversed(forward))
    return RoutingTable(routes)


def multicast_scope(t: Topology, origin: str, ttl: int) -> Set[str]:
    """从 origin 以给定 TTL 多播能到达的主机集合（不含 origin）"""
    if t.kind(origin) not in HOST_KINDS:
        raise TopologySemanticError(f"多播源必须是主机: {origin}")
    reached: Set[str] = set()
    if ttl <= 0:
        return reached
    best: Dict[str, int] = {}
    frontier = deque((nxt, origin, ttl) for nxt in t.multicast_fanout(origin, None))
    while frontier:
        node, prev, remaining = frontier.popleft()
        if t.kind(node) in HOST_KINDS:
            if node != origin:
                reached.add(node)
            continue
        if remaining <= 0 or best.get(node, -1) >= remaining:
            continue
        best[node] = remaining
        for nxt in t.multicast_fanout(node, prev):
            frontier.append((nxt, node, remaining - 1))
    return reached


# ---- 内置拓扑 ----

def build_paper_topology(queue_capacity: int = DEFAULT_QUEUE_CAPACITY) -> Topology:
    """4 个全互联核心路由器、3 个岛（每岛 3 个 LAN，每 LAN 4 个客户端）、seeder 挂在 coreRouter3"""
    nodes: List[NodeSpec] = [NodeSpec(f"coreRouter{i}", NodeKind.CORE_ROUTER) for i in range(4)]
    nodes += [NodeSpec(f"router{i}", NodeKind.ACCESS_ROUTER) for i in range(3)]
    nodes += [NodeSpec(f"lan{i}", NodeKind.LAN_SWITCH) for i in range(9)]
    nodes += [NodeSpec(f"node{i}", NodeKind.CLIENT) for i in range(36)]
    nodes.append(NodeSpec("seeder", NodeKind.SEEDER))

    def core(name: str, a: str, b: str) -> LinkSpec:
        return LinkSpec(a, b, 10 * Mbps, 20, queue_capacity, LinkKind.CORE, name)

    def access(name: str, a: str, b: str) -> LinkSpec:
        return LinkSpec(a, b, 2 * Mbps, 10, queue_capacity, LinkKind.ACCESS, name)

    links = [
        core("coreLink0", "coreRouter0", "coreRouter1"),
        core("coreLink1", "coreRouter2", "coreRouter1"),
        core("coreLink2", "coreRouter0", "coreRouter2"),
        core("coreLink3", "coreRouter0", "coreRouter3"),
        core("coreLink4", "coreRouter1", "coreRouter3"),
        core("coreLink5", "coreRouter2", "coreRouter3"),
    ]
    links += [access(f"link{i}", f"coreRouter{i}", f"router{i}") for i in range(3)]
    links.append(access("link3", "coreRouter3", "seeder"))

    lans = []
    islands = []
    for r in range(3):
        island_lans = []
        for l in range(3 * r, 3 * r + 3):
            lan = f"lan{l}"
            links.append(LinkSpec(f"router{r}", lan, 10 * Mbps, 0, queue_capacity, LinkKind.LAN, f"router{r}-{lan}"))
            members = tuple(f"node{n}" for n in range(4 * l, 4 * l + 4))
            for m in members:
                links.append(LinkSpec(lan, m, 10 * Mbps, 0, queue_capacity, LinkKind.LAN, f"{lan}-{m}"))
            lans.append((lan, members))
            island_lans.append(lan)
        islands.append((f"router{r}", tuple(island_lans)))
    return Topology(tuple(nodes), tuple(links), tuple(lans), tuple(islands))


def build_redundancy_scenario(queue_capacity: int = DEFAULT_QUEUE_CAPACITY) -> Topology:
    """数据冗余示意场景：文件服务器 -> 核心路由器 -> 3 条接入链路，每岛一个 3 客户端 LAN"""
    nodes: List[NodeSpec] = [NodeSpec("coreRouter0", NodeKind.CORE_ROUTER), NodeSpec("server", NodeKind.SEEDER)]
    links: List[LinkSpec] = [LinkSpec("server", "coreRouter0", 2 * Mbps, 10, queue_capacity, LinkKind.ACCESS, "serverLink")]
    lans = []
    islands = []
    for r in range(3):
        router, lan = f"router{r}", f"lan{r}"
        nodes += [NodeSpec(router, NodeKind.ACCESS_ROUTER), NodeSpec(lan, NodeKind.LAN_SWITCH)]
        links.append(LinkSpec("coreRouter0", router, 2 * Mbps, 10, queue_capacity, LinkKind.ACCESS, f"link{r}"))
        links.append(LinkSpec(router, lan, 10 * Mbps, 0, queue_capacity, LinkKind.LAN, f"{router}-{lan}"))
        members = tuple(f"node{3 * r + i}" for i in range(3))
        for m in members:
            nodes.append(NodeSpec(m, NodeKind.CLIENT))
            links.append(LinkSpec(lan, m, 10 * Mbps, 0, queue_capacity, LinkKind.LAN, f"{lan}-{m}"))
        lans.append((lan, members))
        islands.append((router, (lan,)))
    return Topology(tuple(nodes), tuple(links), tuple(lans), tuple(islands))


BUILTIN_TOPOLOGIES = {
    "paper": build_paper_topology,
    "scenario": build_redundancy_scenario,
}


# ---- 文本格式 ----

def _format_bandwidth(bw: int) -> str:
    if bw % Mbps == 0:
        return f"{bw // Mbps}mbps"
    if bw % Kbps == 0:
        return f"{bw // Kbps}kbps"
    raise TopologySemanticError(f"带宽 {bw} bit/s 无法用 kbps/mbps 整数表示")


def serialize_topology(t: Topology) -> str:
    lines = ["# hybrid-cdn topology"]
    for n in t.nodes:
        lines.append(f"node {n.id} kind={n.kind.value}")
    for l in t.links:
        lines.append(
            f"link {l.a} {l.b} bw={_format_bandwidth(l.bandwidth)} delay={l.delay_ms}ms "
            f"queue={l.queue_capacity} kind={l.kind.value} name={l.name}"
        )
    for lan, members in t.lans:
        lines.append(f"lan {lan} members={','.join(members)}")
    for router, lans in t.islands:
        lines.append(f"island {router} lans={','.join(lans)}")
    return "\n".join(lines) + "\n"


_BW_RE = re.compile(r"^(\d+)(kbps|mbps)$", re.IGNORECASE)
_DELAY_RE = re.compile(r"^(\d+)ms$", re.IGNORECASE)
_ID_RE = re.compile(r"^[A-Za-z0-9_.:\-]+$")


def _split_options(lineno: int, tokens: Sequence[str], allowed: Iterable[str]) -> Dict[str, str]:
    allowed = set(allowed)
    opts: Dict[str, str] = {}
    for tok in tokens:
        if "=" not in tok:
            raise TopologySyntaxError(lineno, f"需要 key=value 形式: {tok!r}")
        key, value = tok.split("=", 1)
        if key not in allowed:
            raise TopologySyntaxError(lineno, f"未知参数: {key}")
        if key in opts:
            raise TopologySyntaxError(lineno, f"参数重复: {key}")
        if not value:
            raise TopologySyntaxError(lineno, f"参数 {key} 为空")
        opts[key] = value
    return opts


def _check_id(lineno: int, value: str) -> str:
    if not _ID_RE.match(value):
        raise TopologySyntaxError(lineno, f"非法 id: {value!r}")
    return value


def _id_list(lineno: int, value: str) -> Tuple[str, ...]:
    return tuple(_check_id(lineno, part) for part in value.split(","))


def _infer_link_kind(kinds: Dict[str, NodeKind], a: str, b: str) -> LinkKind:
    ends = {kinds.get(a), kinds.get(b)}
    if NodeKind.LAN_SWITCH in ends:
        return LinkKind.LAN
    if ends == {NodeKind.CORE_ROUTER}:
        return LinkKind.CORE
    return LinkKind.ACCESS


def parse_topology(text: str) -> Topology:
    nodes: List[NodeSpec] = []
    pending_links: List[Tuple[int, str, str, Dict[str, str]]] = []
    lans: List[Tuple[str, Tuple[str, ...]]] = []
    islands: List[Tuple[str, Tuple[str, ...]]] = []

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        directive, args = tokens[0], tokens[1:]
        if directive == "node":
            if len(args) < 1:
                raise TopologySyntaxError(lineno, "node 需要 id")
            opts = _split_options(lineno, args[1:], ("kind",))
            if "kind" not in opts:
                raise TopologySyntaxError(lineno, "node 缺少 kind=")
            try:
                kind = NodeKind(opts["kind"])
            except ValueError:
                raise TopologySyntaxError(lineno, f"未知节点类型: {opts['kind']}") from None
            nodes.append(NodeSpec(_check_id(lineno, args[0]), kind))
        elif directive == "link":
            if len(args) < 2:
                raise TopologySyntaxError(lineno, "link 需要两个端点")
            opts = _split_options(lineno, args[2:], ("bw", "delay", "queue", "kind", "name"))
            for required in ("bw", "delay"):
                if required not in opts:
                    raise TopologySyntaxError(lineno, f"link 缺少 {required}=")
            pending_links.append((lineno, _check_id(lineno, args[0]), _check_id(lineno, args[1]), opts))
        elif directive == "lan":
            if len(args) != 2:
                raise TopologySyntaxError(lineno, "lan 需要 id 和 members=")
            opts = _split_options(lineno, args[1:], ("members",))
            if "members" not in opts:
                raise TopologySyntaxError(lineno, "lan 缺少 members=")
            lans.append((_check_id(lineno, args[0]), _id_list(lineno, opts["members"])))
        elif directive == "island":
            if len(args) != 2:
                raise TopologySyntaxError(lineno, "island 需要路由器 id 和 lans=")
            opts = _split_options(lineno, args[1:], ("lans",))
            if "lans" not in opts:
                raise TopologySyntaxError(lineno, "island 缺少 lans=")
            islands.append((_check_id(lineno, args[0]), _id_list(lineno, opts["lans"])))
        else:
            raise TopologySyntaxError(lineno, f"未知指令: {directive}")

    kinds = {n.id: n.kind for n in nodes}
    links: List[LinkSpec] = []
    for lineno, a, b, opts in pending_links:
        bw = _BW_RE.match(opts["bw"])
        if not bw:
            raise TopologySyntaxError(lineno, f"带宽格式错误: {opts['bw']}")
        delay = _DELAY_RE.match(opts["delay"])
        if not delay:
            raise TopologySyntaxError(lineno, f"时延格式错误: {opts['delay']}")
        try:
            queue = int(opts.get("queue", DEFAULT_QUEUE_CAPACITY))
        except ValueError:
            raise TopologySyntaxError(lineno, f"队列容量必须是整数: {opts['queue']}") from None
        for end in (a, b):
            if end not in kinds:
                raise TopologySemanticError(f"第 {lineno} 行: 链路引用了未声明的节点: {end}")
        if "kind" in opts:
            try:
                link_kind = LinkKind(opts["kind"])
            except ValueError:
                raise TopologySyntaxError(lineno, f"未知链路类型: {opts['kind']}") from None
        else:
            link_kind = _infer_link_kind(kinds, a, b)
        unit = Mbps if bw.group(2).lower() == "mbps" else Kbps
        links.append(LinkSpec(
            a, b,
            bandwidth=int(bw.group(1)) * unit,
            delay_ms=int(delay.group(1)),
            queue_capacity=queue,
            kind=link_kind,
            name=opts.get("name", ""),
        ))
    return Topology(tuple(nodes), tuple(links), tuple(lans), tuple(islands))


def load_topology(source: str, queue_capacity: int = DEFAULT_QUEUE_CAPACITY) -> Topology:
    """builtin:paper / builtin:scenario 或配置文件路径"""
    if source.startswith("builtin:"):
        name = source.split(":", 1)[1]
        if name not in BUILTIN_TOPOLOGIES:
            raise TopologySemanticError(f"未知内置拓扑: {name}")
        return BUILTIN_TOPOLOGIES[name](queue_capacity)
    path = Path(source)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise TopologySemanticError(f"无法读取拓扑文件 {path}: {e}") from e
    return parse_topology(text)
