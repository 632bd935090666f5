"""Trajectory model, CSV ingestion, masking, time binning, region projection and clustering."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Iterable, Sequence

import numpy as np

from .geospace import FeatureConfig, Location, RegionGrid, find_dwells, haversine_np

log = logging.getLogger(__name__)

CSV_COLUMNS = ["agent_id", "timestamp_iso8601", "lon", "lat", "sog", "cog", "heading", "draught", "ais_on"]
MANDATORY = ("agent_id", "timestamp_iso8601", "lon", "lat")
OPTIONAL = ("sog", "cog", "heading", "draught")


@dataclass(frozen=True, slots=True)
class TrajectoryPoint:
    timestamp: float
    location: Location
    sog: float | None = None
    cog: float | None = None
    heading: float | None = None
    draught: float | None = None
    ais_on: bool = True

    def __post_init__(self):
        if not math.isfinite(self.timestamp):
            raise ValueError("timestamp must be finite")


@dataclass(frozen=True)
class Trajectory:
    agent_id: str
    points: tuple

    def __post_init__(self):
        pts = tuple(self.points)
        object.__setattr__(self, "points", pts)
        if not pts:
            raise ValueError("a trajectory needs at least one point")
        for a, b in zip(pts, pts[1:]):
            if not a.timestamp < b.timestamp:
                raise ValueError(f"{self.agent_id}: timestamps must strictly increase")

    def __len__(self):
        return len(self.points)

    @property
    def lons(self):
        return np.array([p.location.lon for p in self.points])

    @property
    def lats(self):
        return np.array([p.location.lat for p in self.points])


@dataclass(frozen=True)
class TimeBinning:
    origin: float
    bin_seconds: int = 3600

    def __post_init__(self):
        if self.bin_seconds <= 0:
            raise ValueError("bin_seconds must be positive")

    def timestep(self, ts: float) -> int:
        return math.floor((ts - self.origin) / self.bin_seconds)

    def start_of(self, step: int) -> float:
        return self.origin + step * self.bin_seconds


def parse_timestamp(text: str) -> float:
    """ISO-8601 (naive means UTC) or plain epoch seconds."""
    text = text.strip()
    try:
        return float(text)
    except ValueError:
        pass
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


def format_timestamp(ts: float) -> str:
    return datetime.fromtimestamp(ts, tz=timezone.utc).isoformat()


@dataclass
class IngestReport:
    trajectories: list
    rows: int = 0
    skipped: list = field(default_factory=list)  # (line number, reason)


def _opt_float(s):
    s = (s or "").strip()
    return float(s) if s else None


def _parse_bool(s):
    s = (s or "").strip().lower()
    if s in ("", "1", "true", "t", "yes", "y"):
        return True
    if s in ("0", "false", "f", "no", "n"):
        return False
    raise ValueError(f"bad boolean {s!r}")


def ingest_csv(path, schema: dict | None = None) -> IngestReport:
    """Read the trajectory CSV, group by agent and sort by time.

    ``schema`` maps canonical column names to the file's header names.
    Malformed rows and duplicate (agent, timestamp) rows are skipped and
    listed in the report.
    """
    names = {c: c for c in CSV_COLUMNS}
    names.update(schema or {})
    by_agent: dict = {}
    report = IngestReport([])
    with open(path, newline="") as fh:
        lines = (ln for ln in fh if not ln.startswith("#"))
        reader = csv.DictReader(lines)
        if reader.fieldnames is None:
            raise ValueError(f"{path}: empty file, header row required")
        missing = [c for c in MANDATORY if names[c] not in reader.fieldnames]
        if missing:
            raise ValueError(f"{path}: missing mandatory columns {missing}")
        for lineno, row in enumerate(reader, start=2):
            report.rows += 1
            try:
                agent = row[names["agent_id"]].strip()
                if not agent:
                    raise ValueError("empty agent id")
                ts = parse_timestamp(row[names["timestamp_iso8601"]])
                loc = Location(float(row[names["lon"]]), float(row[names["lat"]]))
                opts = {c: _opt_float(row.get(names[c])) for c in OPTIONAL}
                pt = TrajectoryPoint(ts, loc, ais_on=_parse_bool(row.get(names["ais_on"])), **opts)
            except (ValueError, TypeError, AttributeError) as e:
                report.skipped.append((lineno, str(e)))
                continue
            pts = by_agent.setdefault(agent, {})
            if ts in pts:
                report.skipped.append((lineno, f"duplicate timestamp for {agent}"))
                continue
            pts[ts] = pt
    for agent in sorted(by_agent):
        pts = by_agent[agent]
        report.trajectories.append(Trajectory(agent, tuple(pts[t] for t in sorted(pts))))
    if report.skipped:
        log.warning("%s: skipped %d malformed or duplicate rows", path, len(report.skipped))
    return report


def _fmt(x):
    return "" if x is None else repr(x)


def write_csv(path, trajectories: Iterable[Trajectory], header: Iterable[str] = ()) -> None:
    with open(path, "w", newline="") as fh:
        for h in header:
            fh.write(f"# {h}\n")
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for traj in trajectories:
            for p in traj.points:
                w.writerow([
                    traj.agent_id, format_timestamp(p.timestamp), repr(p.location.lon), repr(p.location.lat),
                    _fmt(p.sog), _fmt(p.cog), _fmt(p.heading), _fmt(p.draught), "1" if p.ais_on else "0",
                ])


MID50 = "mid50"
AIS_OFF = "ais_off"
STAY = "stay"
STRATEGIES = (MID50, AIS_OFF, STAY)


@dataclass(frozen=True)
class MaskedPair:
    prefix: Trajectory
    suffix: Trajectory
    split_reason: str
    fallback: bool = False


def _split(traj, n, reason, fallback=False):
    return MaskedPair(
        Trajectory(traj.agent_id, traj.points[:n]), Trajectory(traj.agent_id, traj.points[n:]), reason, fallback
    )


def mask(traj: Trajectory, strategy: str = MID50, cfg: FeatureConfig | None = None) -> MaskedPair:
    """Split a trajectory into an observed prefix and a hidden suffix."""
    if len(traj) < 4:
        raise ValueError("masking needs at least 4 points")
    cfg = cfg or FeatureConfig()
    pts = traj.points
    if strategy == AIS_OFF:
        for i in range(len(pts) - 1):
            if pts[i + 1].timestamp - pts[i].timestamp > cfg.ais_gap:
                return _split(traj, i + 1, AIS_OFF)
    elif strategy == STAY:
        dwells = find_dwells(
            [p.location.lon for p in pts], [p.location.lat for p in pts], cfg.stay_radius_km, cfg.stay_min_duration
        )
        if dwells and dwells[0][1] < len(pts):
            return _split(traj, dwells[0][1], STAY)
    elif strategy != MID50:
        raise ValueError(f"unknown masking strategy {strategy!r}")
    return _split(traj, len(pts) // 2, MID50, fallback=strategy != MID50)


def to_region_sequence(traj: Trajectory, grid: RegionGrid, bins: TimeBinning, return_dropped: bool = False):
    """``[(timestep, region id), ...]`` with the latest point winning inside a bin."""
    ids = grid.ids_for([p.location.lon for p in traj.points], [p.location.lat for p in traj.points])
    seq: dict = {}
    dropped = 0
    for p, rid in zip(traj.points, ids):
        if rid is None:
            dropped += 1
            continue
        seq[bins.timestep(p.timestamp)] = rid
    out = sorted(seq.items())
    if dropped:
        log.debug("%s: %d points outside the AOI", traj.agent_id, dropped)
    return (out, dropped) if return_dropped else out


def to_label_sequence(region_seq, grid: RegionGrid) -> list:
    return [(t, grid.labels_of(rid)) for t, rid in region_seq]


def resample(traj: Trajectory, n: int) -> np.ndarray:
    """``n`` (lon, lat) pairs evenly spaced along the track by arc length."""
    lons, lats = traj.lons, traj.lats
    if len(lons) == 1:
        return np.tile([lons[0], lats[0]], (n, 1))
    seg = haversine_np(lons[:-1], lats[:-1], lons[1:], lats[1:])
    s = np.concatenate([[0.0], np.cumsum(seg)])
    if s[-1] == 0:
        return np.tile([lons[0], lats[0]], (n, 1))
    targets = np.linspace(0.0, s[-1], n)
    return np.column_stack([np.interp(targets, s, lons), np.interp(targets, s, lats)])


def shape_distances(trajs: Sequence[Trajectory], resample_n: int = 16) -> np.ndarray:
    """Mean pointwise haversine distance (km) between resampled tracks."""
    shapes = np.stack([resample(t, resample_n) for t in trajs]) if trajs else np.zeros((0, resample_n, 2))
    a = shapes[:, None, :, :]
    b = shapes[None, :, :, :]
    return haversine_np(a[..., 0], a[..., 1], b[..., 0], b[..., 1]).mean(axis=-1)


@dataclass
class Clustering:
    labels: list  # cluster id per trajectory, -1 for noise
    core: list

    @property
    def clusters(self) -> list:
        ids = sorted({c for c in self.labels if c >= 0})
        return [[i for i, c in enumerate(self.labels) if c == k] for k in ids]

    @property
    def noise(self) -> list:
        return [i for i, c in enumerate(self.labels) if c < 0]


def dbscan(dist: np.ndarray, eps: float, min_pts: int) -> Clustering:
    """DBSCAN on a precomputed distance matrix, visiting points in index order."""
    if eps <= 0 or min_pts < 1:
        raise ValueError("eps must be positive and min_pts at least 1")
    n = len(dist)
    neighbours = [np.flatnonzero(dist[i] <= eps) for i in range(n)]
    core = [len(nb) >= min_pts for nb in neighbours]
    labels = [-1] * n
    visited = [False] * n
    cluster = -1
    for i in range(n):
        if visited[i] or not core[i]:
            continue
        cluster += 1
        queue = [i]
        visited[i] = True
        while queue:
            j = queue.pop(0)
            labels[j] = cluster
            if not core[j]:
                continue
            for k in neighbours[j]:
                k = int(k)
                if not visited[k]:
                    visited[k] = True
                    queue.append(k)
                elif labels[k] == -1:
                    labels[k] = cluster
    return Clustering(labels, core)


def cluster_trajectories(trajs: Sequence[Trajectory], eps: float, min_pts: int, resample_n: int = 16) -> Clustering:
    if resample_n < 2:
        raise ValueError("resample_n must be at least 2")
    if eps <= 0 or min_pts < 1:
        raise ValueError("eps must be positive and min_pts at least 1")
    return dbscan(shape_distances(trajs, resample_n), eps, min_pts)


def write_clusters(path, trajs: Sequence[Trajectory], clustering: Clustering) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["agent_id", "traj_index", "cluster_id"])
        for i, (t, c) in enumerate(zip(trajs, clustering.labels)):
            w.writerow([t.agent_id, i, c])
