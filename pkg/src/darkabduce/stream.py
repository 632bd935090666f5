"""Line-fed serving loop: watch per-agent feeds and query agents that go dark.

Records arrive one per line as ``agent_id timestamp lon lat [sog cog heading
draught]`` (whitespace or comma separated). The feed clock is the largest
timestamp seen so far. When an agent's last report is older than
``ais_gap`` seconds on that clock, the agent is considered dark and one
explanation is emitted for the prefix it reported up to then.
"""

from __future__ import annotations

import json
import logging
import re
import socket
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Sequence

from .abduction import AbductionQuery, Explanation, abduce_top_k
from .geospace import Location, RegionGrid
from .learner import learn
from .logic import SINGLE
from .trajectories import TimeBinning, Trajectory, TrajectoryPoint, parse_timestamp

log = logging.getLogger(__name__)

_SPLIT = re.compile(r"[,\s]+")


@dataclass(frozen=True)
class ServeConfig:
    k: int = 10
    horizon_offset: int = 1
    bin_seconds: int = 3600
    ais_gap: float = 3600.0
    relearn_every: int = 0  # 0 disables online relearning
    max_speed_kmh: float | None = None
    threads: int = 1
    hop: str = SINGLE
    min_support: int = 2
    min_confidence: float = 0.05
    max_hops: int | None = None

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if self.horizon_offset < 1:
            raise ValueError("horizon_offset must be at least 1")
        if self.relearn_every < 0:
            raise ValueError("relearn_every must be non-negative")


def parse_record(line: str) -> tuple:
    """``(agent, TrajectoryPoint)`` from one feed line; raises ValueError when malformed."""
    parts = [p for p in _SPLIT.split(line.strip()) if p]
    if len(parts) < 4:
        raise ValueError("expected agent_id timestamp lon lat")
    opt = [float(x) if x not in ("", "-", "nan") else None for x in parts[4:8]]
    opt += [None] * (4 - len(opt))
    return parts[0], TrajectoryPoint(parse_timestamp(parts[1]), Location(float(parts[2]), float(parts[3])), *opt)


def explanation_query(agent: str, prefix: Trajectory, rules, grid: RegionGrid, cfg: ServeConfig) -> AbductionQuery:
    """The query issued for a dark agent; batch callers use the same construction."""
    bins = TimeBinning(prefix.points[0].timestamp, cfg.bin_seconds)
    last = bins.timestep(prefix.points[-1].timestamp)
    return AbductionQuery(agent, prefix, tuple(rules), grid, bins, last + cfg.horizon_offset, cfg.k, cfg.max_speed_kmh)


def emission(ex: Explanation, grid: RegionGrid, cut_timestamp: float, rules_version: int) -> dict:
    return {
        "agent": ex.agent,
        "cut_timestamp": cut_timestamp,
        "horizon": ex.horizon,
        "rules_version": rules_version,
        "regions": [dict(zip(("rank", "region_id", "min_lon", "min_lat", "max_lon", "max_lat", "score", "labels",
                              "fired_rules"), row)) for row in ex.to_rows(grid)],
    }


@dataclass
class _AgentState:
    points: list = field(default_factory=list)
    emitted_for: float | None = None  # timestamp of the last report already queried


@dataclass
class ServeStats:
    accepted: int = 0
    malformed: int = 0
    out_of_order: int = 0
    emitted: int = 0
    failed: int = 0
    relearned: int = 0


class Server:
    """Single coordinator holding every agent's rolling prefix."""

    def __init__(self, rules: Sequence, grid: RegionGrid, cfg: ServeConfig = ServeConfig(),
                 emit: Callable[[dict], None] = print):
        self.rules = tuple(rules)
        self.rules_version = 0
        self.grid = grid
        self.cfg = cfg
        self.emit = emit
        self.agents: dict = {}
        self.clock: float | None = None
        self.stats = ServeStats()

    def feed_line(self, line: str) -> None:
        if not line.strip() or line.lstrip().startswith("#"):
            return
        try:
            agent, pt = parse_record(line)
        except (ValueError, TypeError) as e:
            self.stats.malformed += 1
            log.debug("malformed record %r: %s", line, e)
            return
        self.feed(agent, pt)

    def feed(self, agent: str, pt: TrajectoryPoint) -> None:
        state = self.agents.setdefault(agent, _AgentState())
        if state.points and pt.timestamp <= state.points[-1].timestamp:
            self.stats.out_of_order += 1
            return
        if self.clock is None or pt.timestamp > self.clock:
            self.clock = pt.timestamp
        self._check_dark()
        state.points.append(pt)
        self.stats.accepted += 1
        if self.cfg.relearn_every and self.stats.accepted % self.cfg.relearn_every == 0:
            self.relearn()

    def _check_dark(self) -> None:
        # sorted agent order keeps emissions deterministic when several go dark at once
        for agent in sorted(self.agents):
            state = self.agents[agent]
            if not state.points:
                continue
            last = state.points[-1].timestamp
            if state.emitted_for != last and self.clock - last > self.cfg.ais_gap:
                state.emitted_for = last
                self._explain(agent, state)

    def _explain(self, agent: str, state: _AgentState) -> None:
        prefix = Trajectory(agent, tuple(state.points))
        try:
            q = explanation_query(agent, prefix, self.rules, self.grid, self.cfg)
            ex = abduce_top_k(q, threads=self.cfg.threads)
        except ValueError as e:
            self.stats.failed += 1
            log.warning("%s: no explanation (%s)", agent, e)
            return
        self.stats.emitted += 1
        self.emit(emission(ex, self.grid, prefix.points[-1].timestamp, self.rules_version))

    def relearn(self) -> None:
        """Re-run the learner over every retained report and swap in the new rules."""
        trajs = [Trajectory(a, tuple(s.points)) for a, s in sorted(self.agents.items()) if s.points]
        cfg = self.cfg
        out = learn(trajs, self.grid, cfg.bin_seconds, cfg.hop, cfg.min_support, cfg.min_confidence, cfg.max_hops)
        self.rules = tuple(out.rules)
        self.rules_version += 1
        self.stats.relearned += 1
        log.info("relearned %d rules from %d agents", len(self.rules), len(trajs))

    def run(self, lines: Iterable[str]) -> ServeStats:
        for line in lines:
            self.feed_line(line)
        return self.stats


def json_emitter(stream) -> Callable[[dict], None]:
    def emit(obj):
        stream.write(json.dumps(obj) + "\n")
        stream.flush()

    return emit


def tcp_lines(host: str, port: int) -> Iterator[str]:
    """Accept one connection and yield its newline-framed lines."""
    with socket.create_server((host, port)) as srv:
        log.info("listening on %s:%d", host, srv.getsockname()[1])
        conn, addr = srv.accept()
        log.info("connection from %s", addr)
        with conn, conn.makefile("r", encoding="utf-8") as fh:
            yield from fh
