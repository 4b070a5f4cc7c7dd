"""三种分发模型的端到端测试：小场景、随机小拓扑的完整性与去重，以及 paper 拓扑上的完整规模验收"""

from collections import Counter, defaultdict

import numpy as np
import pytest

from hybrid_cdn.chunking import PieceStore, make_pieces, synthetic_file
from hybrid_cdn.config import ProtocolSettings, build_config
from hybrid_cdn.engine import Simulator
from hybrid_cdn.errors import ConfigError, ExperimentError
from hybrid_cdn.experiments import apply_loss, compare_models, simulate_once, sweep
from hybrid_cdn.metrics import LinkLedger, completion_cdf
from hybrid_cdn.protocols import RunContext, run_hybrid, run_p2p, run_www, runner_for
from hybrid_cdn.topology import parse_topology

ISLAND0 = ["node0", "node1", "node2"]


def run_model(runner, topology, store, clients=None, seed=0, ledger=None, loss=0.0):
    sim = Simulator(seed)
    ctx = RunContext(sim, topology, ledger=ledger)
    if loss:
        apply_loss(ctx.network, topology, loss)
    return runner(sim, topology, store, clients=clients, ctx=ctx)


def assert_integrity(outcome, data):
    assert outcome.failed == []
    for record in outcome.records:
        assert outcome.stores[record.client].assemble() == data


def test_www_island_clients_share_one_access_link(scenario_topology, small_file, seeder_store):
    outcome = run_model(run_www, scenario_topology, seeder_store, clients=ISLAND0)
    assert_integrity(outcome, small_file[0])
    # 3 个客户端各自取一份完整文件，没有多余的重传
    assert outcome.ledger.stress("link0", "coreRouter0->router0") == pytest.approx(3.0)
    for name in ("link1", "link2"):
        for direction in ("coreRouter0->" + name.replace("link", "router"),
                          name.replace("link", "router") + "->coreRouter0"):
            assert outcome.ledger.get(name, direction).content_bytes == 0


def test_unknown_client_is_rejected(scenario_topology, seeder_store):
    with pytest.raises(ExperimentError):
        run_model(run_www, scenario_topology, seeder_store, clients=["server"])


@pytest.mark.parametrize("runner", [run_p2p, run_hybrid])
def test_swarm_models_complete(runner, scenario_topology, small_file, seeder_store):
    outcome = run_model(runner, scenario_topology, seeder_store)
    assert_integrity(outcome, small_file[0])
    assert len(outcome.records) == len(scenario_topology.clients)
    assert all(r.finish >= r.start for r in outcome.records)
    assert outcome.sessions


def test_hybrid_uses_island_multicast(scenario_topology, small_file, seeder_store):
    outcome = run_model(run_hybrid, scenario_topology, seeder_store)
    assert_integrity(outcome, small_file[0])
    assert outcome.multicasts >= 1


def test_hybrid_repairs_multicast_lost_on_spokes(scenario_topology, small_file, seeder_store):
    sim = Simulator(4)
    ctx = RunContext(sim, scenario_topology)
    for node in ISLAND0:
        ctx.network.set_loss(f"lan0-{node}", f"lan0->{node}", 0.3)
    outcome = run_hybrid(sim, scenario_topology, seeder_store, ctx=ctx)
    assert_integrity(outcome, small_file[0])
    assert len(outcome.records) == len(scenario_topology.clients)
    assert outcome.repairs >= 1


def test_runner_lookup():
    assert runner_for("www") is run_www
    with pytest.raises(ConfigError):
        runner_for("ftp")


def test_same_seed_same_trace(small_config):
    config = small_config(model="hybrid")
    first = simulate_once(config, 0)
    second = simulate_once(config, 0)
    assert first.trace_digest == second.trace_digest
    assert first.integrity_ok and second.integrity_ok
    assert simulate_once(config, 1).seed == config.base_seed + 1


def test_run_with_unreachable_deadline_is_reported_not_raised(small_config):
    config = small_config(model="www", protocol=ProtocolSettings(max_sim_time=0.01).model_dump())
    result = simulate_once(config, 0)
    assert not result.ok
    assert all(r.failed for r in result.records)


# ---- 随机小拓扑上的完整性与去重性质 ----

def random_topology(rng):
    lines = [
        "node core kind=core-router",
        "node seeder kind=seeder",
        "link seeder core bw=2mbps delay=10ms name=seedLink",
    ]
    client = 0
    for r in range(int(rng.integers(1, 3))):
        router = f"router{r}"
        lines += [f"node {router} kind=access-router",
                  f"link core {router} bw=2mbps delay={int(rng.integers(1, 20))}ms name=link{r}"]
        lans = []
        for l in range(int(rng.integers(1, 3))):
            lan = f"lan{r}{l}"
            lans.append(lan)
            lines += [f"node {lan} kind=lan-switch", f"link {router} {lan} bw=10mbps delay=0ms"]
            members = []
            for _ in range(int(rng.integers(2, 4))):
                name = f"c{client}"
                client += 1
                members.append(name)
                lines += [f"node {name} kind=client", f"link {lan} {name} bw=10mbps delay=0ms"]
            lines.append(f"lan {lan} members={','.join(members)}")
        lines.append(f"island {router} lans={','.join(lans)}")
    return parse_topology("\n".join(lines))


RUNNERS = [run_www, run_p2p, run_hybrid]


@pytest.mark.parametrize("case", range(100))
def test_random_topologies_deliver_exact_copies(case):
    runner = RUNNERS[case % 3]
    rng = np.random.default_rng(100 + case)
    topology = random_topology(rng)
    data = synthetic_file(32 * 1024, seed=case)
    spec, pieces = make_pieces(data, 8 * 1024)
    ledger = LinkLedger(keep_log=True)
    loss = float(rng.uniform(0.0, 0.05))
    outcome = run_model(runner, topology, PieceStore.complete_copy(spec, pieces),
                        seed=case, ledger=ledger, loss=loss)

    assert outcome.failed == []
    assert sorted(r.client for r in outcome.completed) == sorted(topology.clients)
    for record in outcome.completed:
        assert outcome.stores[record.client].assemble() == data

    seen = defaultdict(Counter)
    for link, direction, fingerprint in ledger.log:
        seen[(link, direction)][fingerprint] += 1
    for key, entry in ledger.items():
        if entry.packets_total == 0:
            continue
        assert entry.stress >= 1.0
        assert entry.packets_unique == len(seen[key])
        assert entry.packets_total == sum(seen[key].values())


# ---- paper 拓扑，完整规模 ----

@pytest.fixture(scope="module")
def paper_comparison(tmp_path_factory):
    config = build_config({"topology": "builtin:paper", "runs": 5})
    return compare_models(config, out_dir=str(tmp_path_factory.mktemp("paper-compare")))


@pytest.mark.paper
def test_hybrid_beats_p2p_and_www(paper_comparison):
    www = paper_comparison.reports["www"].mean_completion
    p2p = paper_comparison.reports["p2p"].mean_completion
    hybrid = paper_comparison.reports["hybrid"].mean_completion
    assert hybrid <= 0.70 * p2p
    assert hybrid <= 0.30 * www


@pytest.mark.paper
def test_www_core_redundancy(paper_comparison):
    for run in paper_comparison.reports["www"].runs:
        bytes_total, content, stress = run.links[("coreLink3", "coreRouter3->coreRouter0")]
        assert stress == pytest.approx(12.0)
        assert content >= 12 * (1 << 20)
        for name in ("coreLink0", "coreLink1", "coreLink2"):
            assert all(v[1] == 0 for (link, _), v in run.links.items() if link == name)


@pytest.mark.paper
def test_p2p_core_stress_below_www(paper_comparison):
    www_runs = paper_comparison.reports["www"].runs
    p2p_runs = paper_comparison.reports["p2p"].runs
    for www, p2p in zip(www_runs, p2p_runs):
        assert p2p.core.mean_downlink_stress < www.core.mean_downlink_stress


@pytest.mark.paper
def test_hybrid_eliminates_redundancy(paper_comparison, paper_topology):
    hybrid = paper_comparison.reports["hybrid"]
    www = paper_comparison.reports["www"]
    for run in hybrid.runs:
        for i in range(3):
            entry = run.links.get((f"link{i}", paper_topology.downlink(f"link{i}")))
            assert entry is not None and entry[2] <= 1.5
    assert hybrid.mean_core_content_bytes <= 0.35 * www.mean_core_content_bytes


@pytest.mark.paper
def test_hybrid_loss_sweep_shape(tmp_path):
    config = build_config({
        "topology": "builtin:paper", "model": "hybrid", "runs": 3,
        "loss": [0.0, 0.01, 0.02, 0.03, 0.04, 0.05],
    })
    reports = sweep(config, out_dir=str(tmp_path))
    times = [r.mean_completion for r in reports]
    for prev, cur in zip(times, times[1:]):
        assert cur >= prev * 0.95
    assert times[-1] >= times[0] * 1.10


@pytest.mark.paper
def test_core_summary_matches_ledger(paper_topology):
    config = build_config({"topology": "builtin:paper", "model": "www", "runs": 1})
    result = simulate_once(config, 0)
    assert result.ok
    assert result.core.content_bytes == sum(
        v[1] for (link, _), v in result.links.items() if link.startswith("coreLink")
    )


def completed_by(cdf, t):
    return max((fraction for duration, fraction in cdf if duration <= t), default=0.0)


@pytest.mark.paper
def test_completion_cdf_checkpoints(paper_comparison):
    for hybrid, p2p in zip(paper_comparison.reports["hybrid"].runs, paper_comparison.reports["p2p"].runs):
        hybrid_cdf = completion_cdf(hybrid.records)
        p2p_cdf = completion_cdf(p2p.records)
        assert completed_by(hybrid_cdf, 45.0) == 1.0
        assert completed_by(p2p_cdf, 90.0) == 1.0
        assert completed_by(hybrid_cdf, 30.0) >= completed_by(p2p_cdf, 30.0)
