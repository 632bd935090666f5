import socket
import threading
import time

import pytest

from darkabduce.abduction import abduce_top_k
from darkabduce.geospace import FeatureConfig, prepare_grid
from darkabduce.learner import learn
from darkabduce.stream import Server, ServeConfig, explanation_query, parse_record, tcp_lines
from darkabduce.synth import generate, two_route_world
from darkabduce.trajectories import Trajectory


@pytest.fixture(scope="module")
def world_setup():
    w = two_route_world(gap_prob=1.0)
    data = generate(w, 12, 30)
    grid = prepare_grid(data[:8], 0.025, FeatureConfig(port_locations=w.ports))
    rules = learn(data[:8], grid, 600).rules
    return data[8:], grid, rules


def feed_lines(trajs):
    recs = sorted((p.timestamp, t.agent_id, p) for t in trajs for p in t.points)
    return [f"{a} {ts!r} {p.location.lon!r} {p.location.lat!r} {p.sog} {p.cog}" for ts, a, p in recs]


def test_parse_record():
    agent, p = parse_record("V1, 2024-01-01T00:00:00Z, 30.5, 46.2, 10.5")
    assert agent == "V1" and p.location.lon == 30.5 and p.sog == 10.5 and p.cog is None
    for bad in ("V1 0 30.5", "V1 yesterday 30 46", "V1 0 30 95"):
        with pytest.raises(ValueError):
            parse_record(bad)


def test_replay_matches_batch(world_setup):
    test, grid, rules = world_setup
    cfg = ServeConfig(k=5, bin_seconds=600, ais_gap=3600.0)
    out = []
    server = Server(rules, grid, cfg, out.append)
    server.run(feed_lines(test))
    assert out, "the gappy feed must trigger emissions"
    by_agent = {t.agent_id: t for t in test}
    for em in out:
        traj = by_agent[em["agent"]]
        prefix = Trajectory(traj.agent_id, [p for p in traj.points if p.timestamp <= em["cut_timestamp"]])
        ex = abduce_top_k(explanation_query(traj.agent_id, prefix, rules, grid, cfg))
        assert [list(r.values()) for r in em["regions"]] == ex.to_rows(grid)
        assert em["horizon"] == ex.horizon
    # every agent with a mid-track gap is reported at the report just before it
    cuts = {(e["agent"], e["cut_timestamp"]) for e in out}
    for t in test:
        for a, b in zip(t.points, t.points[1:]):
            if b.timestamp - a.timestamp > cfg.ais_gap:
                assert (t.agent_id, a.timestamp) in cuts


def test_parallel_scoring_same_emissions(world_setup):
    test, grid, rules = world_setup
    lines = feed_lines(test)
    serial, parallel = [], []
    Server(rules, grid, ServeConfig(k=5, bin_seconds=600), serial.append).run(lines)
    Server(rules, grid, ServeConfig(k=5, bin_seconds=600, threads=4), parallel.append).run(lines)
    assert serial == parallel


def test_no_gap_no_emission(world_setup):
    _, grid, rules = world_setup
    lines = [f"{a} {600.0 * i} 30.3 46.3" for i in range(20) for a in ("A", "B")]
    out = []
    stats = Server(rules, grid, ServeConfig(bin_seconds=600), out.append).run(lines)
    assert out == [] and stats.accepted == 40


def test_bad_and_out_of_order_records_are_counted(world_setup):
    _, grid, rules = world_setup
    lines = ["A 0 30.3 46.3", "garbage", "", "# note", "A 0 30.3 46.3", "A -5 30.3 46.3", "A 600 30.31 46.3"]
    stats = Server(rules, grid, ServeConfig(bin_seconds=600), lambda e: None).run(lines)
    assert (stats.accepted, stats.malformed, stats.out_of_order) == (2, 1, 2)


def test_relearning(world_setup):
    test, grid, rules = world_setup
    lines = feed_lines(test)
    off = Server(rules, grid, ServeConfig(bin_seconds=600, relearn_every=0), lambda e: None)
    off.run(lines)
    assert off.stats.relearned == 0 and off.rules == tuple(rules)
    on = Server([], grid, ServeConfig(bin_seconds=600, relearn_every=50), lambda e: None)
    on.run(lines)
    assert on.stats.relearned == on.stats.accepted // 50
    assert on.rules_version == on.stats.relearned and len(on.rules) > 0


def test_serve_config_validation():
    with pytest.raises(ValueError):
        ServeConfig(relearn_every=-1)
    with pytest.raises(ValueError):
        ServeConfig(k=0)


def test_tcp_listener():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        port = s.getsockname()[1]
    got = []

    def reader():
        got.extend(tcp_lines("127.0.0.1", port))

    th = threading.Thread(target=reader)
    th.start()
    for _ in range(100):
        try:
            conn = socket.create_connection(("127.0.0.1", port))
            break
        except ConnectionRefusedError:
            time.sleep(0.02)
    with conn:
        conn.sendall(b"A 0 30 46\nA 600 30.1 46\n")
    th.join(5)
    assert got == ["A 0 30 46\n", "A 600 30.1 46\n"]
