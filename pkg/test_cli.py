"""命令行入口测试：退出码、内置拓扑输出、预设与历史记录"""

import csv
import socket

from hybrid_cdn.cli import EXIT_CONFIG, EXIT_OK, main
from hybrid_cdn.topology import build_redundancy_scenario, parse_topology, serialize_topology

SMALL = ["--topology", "builtin:scenario", "--file-size", "65536", "--piece-size", "16384", "--runs", "1"]


def test_print_builtin_parses_back(capsys):
    assert main(["topology", "print-builtin", "--name", "scenario"]) == EXIT_OK
    text = capsys.readouterr().out
    assert serialize_topology(parse_topology(text)) == serialize_topology(build_redundancy_scenario())


def test_two_swept_axes_is_config_error(tmp_path, config_store, run_history):
    code = main(["simulate", *SMALL, "--loss", "0,1", "--cbr", "0,5", "--out", str(tmp_path)],
                store=config_store, history=run_history)
    assert code == EXIT_CONFIG
    assert run_history.load() == []


def test_bad_topology_file_is_config_error(tmp_path, config_store, run_history):
    bad = tmp_path / "bad.topo"
    bad.write_text("node a kind=client\nfrobnicate a\n", encoding="utf-8")
    code = main(["simulate", "--topology", str(bad), "--out", str(tmp_path / "out")],
                store=config_store, history=run_history)
    assert code == EXIT_CONFIG


def test_bad_percent_list_is_config_error(config_store, run_history):
    assert main(["simulate", *SMALL, "--loss", "one"], store=config_store, history=run_history) == EXIT_CONFIG


def test_simulate_writes_summary_and_history(tmp_path, config_store, run_history, capsys):
    out = tmp_path / "out"
    code = main(["simulate", *SMALL, "--model", "www", "--out", str(out)],
                store=config_store, history=run_history)
    assert code == EXIT_OK
    with open(out / "summary.csv", newline="", encoding="utf-8") as f:
        assert next(csv.reader(f))[0] == "metric"
    assert "www" in capsys.readouterr().out
    history = run_history.load()
    assert len(history) == 1 and history[0]["kind"] == "simulate"
    assert main(["history", "delete", history[0]["id"]], store=config_store, history=run_history) == EXIT_OK
    assert main(["history", "delete", "nope"], store=config_store, history=run_history) == EXIT_CONFIG


def test_presets_feed_simulate(tmp_path, config_store, run_history, capsys):
    assert main(["presets", "save", "tiny", *SMALL, "--model", "www"],
                store=config_store, history=run_history) == EXIT_OK
    preset_id = capsys.readouterr().out.strip()
    assert config_store.get("tiny").file_size == 65536

    out = tmp_path / "preset-run"
    assert main(["simulate", "--preset", "tiny", "--out", str(out)],
                store=config_store, history=run_history) == EXIT_OK
    assert (out / "run-0" / "links.csv").exists()

    assert main(["presets", "delete", preset_id], store=config_store, history=run_history) == EXIT_OK
    assert main(["simulate", "--preset", "tiny"], store=config_store, history=run_history) == EXIT_CONFIG


def test_pieces_table(tmp_path, capsys):
    path = tmp_path / "f.bin"
    path.write_bytes(b"x" * 10)
    assert main(["pieces", str(path), "--piece-size", "4"]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "index,offset,length,digest"
    assert [line.split(",")[:3] for line in lines[1:]] == [["0", "0", "4"], ["1", "4", "4"], ["2", "8", "2"]]
    assert main(["pieces", str(tmp_path / "missing.bin")]) == EXIT_CONFIG


def test_serve_starts_uvicorn(monkeypatch):
    import uvicorn

    calls = []
    monkeypatch.setattr(uvicorn, "run", lambda app, **kw: calls.append((app, kw)))
    assert main(["serve", "--host", "127.0.0.1", "--port", "0"]) == EXIT_OK
    assert calls == [("hybrid_cdn.api:app", {"host": "127.0.0.1", "port": 0, "reload": False})]


def test_serve_refuses_busy_port():
    with socket.socket(socket.AF_INET, socket.SOCK_STREAM) as s:
        s.bind(("127.0.0.1", 0))
        s.listen()
        port = s.getsockname()[1]
        assert main(["serve", "--host", "127.0.0.1", "--port", str(port)]) == EXIT_CONFIG
