"""AOI geometry: locations, rectangular regions, the cell grid and its feature labels."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

log = logging.getLogger(__name__)

EARTH_RADIUS_KM = 6371.0088


@dataclass(frozen=True, slots=True)
class Location:
    lon: float
    lat: float

    def __post_init__(self):
        if not (-180.0 <= self.lon <= 180.0 and -90.0 <= self.lat <= 90.0):
            raise ValueError(f"location out of range: ({self.lon}, {self.lat})")


def haversine_km(a: Location, b: Location) -> float:
    lon1, lat1, lon2, lat2 = map(math.radians, (a.lon, a.lat, b.lon, b.lat))
    h = math.sin((lat2 - lat1) / 2) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin((lon2 - lon1) / 2) ** 2
    return 2 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(h)))


def haversine_np(lon1, lat1, lon2, lat2):
    """Vectorised great-circle distance in km (arguments in degrees)."""
    lon1, lat1, lon2, lat2 = (np.radians(np.asarray(x, dtype=float)) for x in (lon1, lat1, lon2, lat2))
    h = np.sin((lat2 - lat1) / 2) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2) ** 2
    return 2 * EARTH_RADIUS_KM * np.arcsin(np.minimum(1.0, np.sqrt(h)))


def km_to_degrees(dx_km, dy_km, lat):
    """Convert an east/north offset in km to (dlon, dlat) degrees at latitude ``lat``."""
    dlat = np.degrees(np.asarray(dy_km) / EARTH_RADIUS_KM)
    dlon = np.degrees(np.asarray(dx_km) / (EARTH_RADIUS_KM * np.cos(np.radians(lat))))
    return dlon, dlat


@dataclass(frozen=True, slots=True)
class Region:
    """Axis-aligned box, half-open: ``min <= p < max`` on both axes."""

    id: str
    min_corner: Location
    max_corner: Location

    def __post_init__(self):
        if not (self.min_corner.lon < self.max_corner.lon and self.min_corner.lat < self.max_corner.lat):
            raise ValueError(f"degenerate region {self.id}")

    def contains(self, loc: Location) -> bool:
        return (
            self.min_corner.lon <= loc.lon < self.max_corner.lon
            and self.min_corner.lat <= loc.lat < self.max_corner.lat
        )

    @property
    def center(self) -> Location:
        return Location(
            (self.min_corner.lon + self.max_corner.lon) / 2, (self.min_corner.lat + self.max_corner.lat) / 2
        )

    def area_km2(self) -> float:
        """Exact area of the lon/lat box on a sphere."""
        dlon = math.radians(self.max_corner.lon - self.min_corner.lon)
        return EARTH_RADIUS_KM**2 * dlon * (
            math.sin(math.radians(self.max_corner.lat)) - math.sin(math.radians(self.min_corner.lat))
        )

    def distance_km(self, loc: Location) -> float:
        """Great-circle distance from ``loc`` to the nearest point of the (closed) box."""
        lon = min(max(loc.lon, self.min_corner.lon), self.max_corner.lon)
        lat = min(max(loc.lat, self.min_corner.lat), self.max_corner.lat)
        return haversine_km(loc, Location(lon, lat))


def cell_id(row: int, col: int) -> str:
    return f"R_{row:03d}_{col:03d}"


@dataclass(frozen=True)
class RegionGrid:
    aoi: Region
    cell_size_deg: float
    lon_edges: tuple
    lat_edges: tuple
    cells: Mapping[str, Region]
    candidate_ids: frozenset = frozenset()
    labels: Mapping[str, frozenset] = field(default_factory=dict)

    @property
    def shape(self) -> tuple:
        return len(self.lat_edges) - 1, len(self.lon_edges) - 1

    def __len__(self):
        return len(self.cells)

    def locate(self, loc: Location) -> str | None:
        """Id of the cell owning ``loc``, or None outside the AOI."""
        rows, cols = self.locate_many([loc.lon], [loc.lat])
        if rows[0] < 0:
            return None
        return cell_id(int(rows[0]), int(cols[0]))

    def locate_many(self, lons, lats):
        """Row and column indices for many points; -1 marks points outside the AOI."""
        lon_e = np.asarray(self.lon_edges)
        lat_e = np.asarray(self.lat_edges)
        cols = np.searchsorted(lon_e, np.asarray(lons, dtype=float), side="right") - 1
        rows = np.searchsorted(lat_e, np.asarray(lats, dtype=float), side="right") - 1
        n_rows, n_cols = self.shape
        bad = (cols < 0) | (cols >= n_cols) | (rows < 0) | (rows >= n_rows)
        rows = np.where(bad, -1, rows)
        cols = np.where(bad, -1, cols)
        return rows, cols

    def ids_for(self, lons, lats) -> list:
        rows, cols = self.locate_many(lons, lats)
        return [None if r < 0 else cell_id(int(r), int(c)) for r, c in zip(rows, cols)]

    def labels_of(self, rid: str) -> frozenset:
        if rid not in self.cells:
            raise KeyError(f"unknown region id {rid!r}")
        return self.labels.get(rid, frozenset())

    def cell_area_km2(self, rid: str) -> float:
        return self.cells[rid].area_km2()

    def with_candidates(self, ids: Iterable[str]) -> "RegionGrid":
        ids = frozenset(ids)
        unknown = ids - set(self.cells)
        if unknown:
            raise KeyError(f"candidate ids not in grid: {sorted(unknown)[:5]}")
        return replace(self, candidate_ids=ids)

    def with_labels(self, labels: Mapping[str, Iterable[str]]) -> "RegionGrid":
        return replace(self, labels={k: frozenset(v) for k, v in labels.items() if v})

    def to_csv(self, path, header: Iterable[str] = ()) -> None:
        """Write candidate cells as ``id,min_lon,min_lat,max_lon,max_lat,labels``.

        The grid geometry goes into a leading ``#`` line so the file round-trips.
        """
        a = self.aoi
        with open(path, "w", newline="") as fh:
            for h in header:
                fh.write(f"# {h}\n")
            fh.write(
                f"# grid aoi={a.min_corner.lon!r},{a.min_corner.lat!r},{a.max_corner.lon!r},{a.max_corner.lat!r}"
                f" cell_size={self.cell_size_deg!r}\n"
            )
            w = csv.writer(fh)
            w.writerow(["id", "min_lon", "min_lat", "max_lon", "max_lat", "labels"])
            for rid in sorted(self.candidate_ids):
                c = self.cells[rid]
                w.writerow([
                    rid, repr(c.min_corner.lon), repr(c.min_corner.lat), repr(c.max_corner.lon),
                    repr(c.max_corner.lat), "|".join(sorted(self.labels.get(rid, ()))),
                ])

    @classmethod
    def from_csv(cls, path) -> "RegionGrid":
        geometry = None
        rows = []
        with open(path, newline="") as fh:
            body = []
            for line in fh:
                if line.startswith("# grid "):
                    geometry = dict(kv.split("=", 1) for kv in line[7:].split())
                elif not line.startswith("#"):
                    body.append(line)
            rows = list(csv.DictReader(body))
        if geometry is None:
            raise ValueError(f"{path}: missing '# grid' geometry line")
        x0, y0, x1, y1 = (float(v) for v in geometry["aoi"].split(","))
        grid = build_grid(Region("AOI", Location(x0, y0), Location(x1, y1)), float(geometry["cell_size"]))
        labels = {r["id"]: [x for x in r["labels"].split("|") if x] for r in rows}
        return grid.with_candidates(labels).with_labels(labels)


def build_grid(aoi: Region, cell_size_deg: float) -> RegionGrid:
    """Tile ``aoi`` row-major with square cells; the last row/column is clipped."""
    if cell_size_deg <= 0:
        raise ValueError("cell size must be positive")
    span_lon = aoi.max_corner.lon - aoi.min_corner.lon
    span_lat = aoi.max_corner.lat - aoi.min_corner.lat
    if span_lon <= 0 or span_lat <= 0:
        raise ValueError("degenerate AOI")
    n_cols = max(1, math.ceil(span_lon / cell_size_deg - 1e-9))
    n_rows = max(1, math.ceil(span_lat / cell_size_deg - 1e-9))
    lon_edges = [aoi.min_corner.lon + i * cell_size_deg for i in range(n_cols)] + [aoi.max_corner.lon]
    lat_edges = [aoi.min_corner.lat + i * cell_size_deg for i in range(n_rows)] + [aoi.max_corner.lat]
    cells = {}
    for r in range(n_rows):
        for c in range(n_cols):
            rid = cell_id(r, c)
            cells[rid] = Region(
                rid, Location(lon_edges[c], lat_edges[r]), Location(lon_edges[c + 1], lat_edges[r + 1])
            )
    return RegionGrid(aoi, cell_size_deg, tuple(lon_edges), tuple(lat_edges), cells)


def bounding_aoi(trajectories, pad_deg: float = 0.0) -> Region:
    lons = [p.location.lon for t in trajectories for p in t.points]
    lats = [p.location.lat for t in trajectories for p in t.points]
    if not lons:
        raise ValueError("no points to bound")
    # nudge the max edge so the extreme points fall inside the half-open box
    return Region(
        "AOI",
        Location(max(-180.0, min(lons) - pad_deg), max(-90.0, min(lats) - pad_deg)),
        Location(min(180.0, max(lons) + pad_deg + 1e-9), min(90.0, max(lats) + pad_deg + 1e-9)),
    )


def candidate_regions(grid: RegionGrid, train) -> frozenset:
    """Cells visited by at least one training point."""
    ids = set()
    for traj in train:
        lons = [p.location.lon for p in traj.points]
        lats = [p.location.lat for p in traj.points]
        ids.update(i for i in grid.ids_for(lons, lats) if i is not None)
    if not ids:
        log.warning("no candidate regions: empty training set or all points outside the AOI")
    return frozenset(ids)


@dataclass(frozen=True)
class FeatureConfig:
    port_locations: tuple = ()
    port_radius_km: float = 10.0
    hotspot_density_quantile: float = 0.9
    speed_sigma: float = 1.0
    course_change_deg: float = 30.0
    stay_radius_km: float = 0.5
    stay_min_duration: int = 6
    ais_gap: float = 3600.0
    draught_delta: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.hotspot_density_quantile < 1.0:
            raise ValueError("hotspot_density_quantile must be in (0,1)")
        for f in fields(self):
            if f.name not in ("port_locations", "hotspot_density_quantile") and getattr(self, f.name) <= 0:
                raise ValueError(f"{f.name} must be positive")

    @classmethod
    def from_mapping(cls, values: Mapping[str, str], ports=()) -> "FeatureConfig":
        kwargs = {}
        for f in fields(cls):
            if f.name in values and f.name != "port_locations":
                kwargs[f.name] = int(values[f.name]) if f.name == "stay_min_duration" else float(values[f.name])
        return cls(port_locations=tuple(ports), **kwargs)


def read_key_values(path) -> dict:
    """Flat ``key = value`` file; ``#`` comments and blank lines ignored."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value")
        k, v = line.split("=", 1)
        out[k.strip().replace("-", "_")] = v.strip()
    return out


def read_ports(path) -> list:
    with open(path, newline="") as fh:
        return [Location(float(r["lon"]), float(r["lat"])) for r in csv.DictReader(fh)]


def find_dwells(lons, lats, radius_km: float, min_points: int) -> list:
    """Maximal runs ``[start, end)`` of at least ``min_points`` reports within ``radius_km`` of the run's first point."""
    out = []
    n = len(lons)
    i = 0
    while i < n:
        j = i + 1
        while j < n and haversine_km(Location(lons[i], lats[i]), Location(lons[j], lats[j])) <= radius_km:
            j += 1
        if j - i >= min_points:
            out.append((i, j))
            i = j
        else:
            i += 1
    return out


def _turn(a, b):
    d = abs(a - b) % 360.0
    return min(d, 360.0 - d)


def label_regions(grid: RegionGrid, train, cfg: FeatureConfig) -> RegionGrid:
    """Attach feature labels to candidate cells from training statistics."""
    cand = grid.candidate_ids
    labels: dict = {rid: set() for rid in cand}

    for rid in cand:
        c = grid.cells[rid].center
        if any(haversine_km(c, port) <= cfg.port_radius_km for port in cfg.port_locations):
            labels[rid].add("nearport")

    counts: dict = {}
    speed_sum: dict = {}
    speed_n: dict = {}
    all_sog = []
    for traj in sorted(train, key=lambda t: t.agent_id):
        pts = traj.points
        ids = grid.ids_for([p.location.lon for p in pts], [p.location.lat for p in pts])
        for k, (p, rid) in enumerate(zip(pts, ids)):
            if p.sog is not None:
                all_sog.append(p.sog)
            if rid is None or rid not in cand:
                continue
            counts[rid] = counts.get(rid, 0) + 1
            if p.sog is not None:
                speed_sum[rid] = speed_sum.get(rid, 0.0) + p.sog
                speed_n[rid] = speed_n.get(rid, 0) + 1
            if k == 0:
                continue
            prev = pts[k - 1]
            if p.cog is not None and prev.cog is not None and _turn(p.cog, prev.cog) > cfg.course_change_deg:
                labels[rid].add("change-direction")
            if (p.draught is not None and prev.draught is not None
                    and abs(p.draught - prev.draught) >= cfg.draught_delta):
                labels[rid].add("draught")
        for k in range(len(pts) - 1):
            rid = ids[k]
            if rid in cand and pts[k + 1].timestamp - pts[k].timestamp > cfg.ais_gap:
                labels[rid].add("ais-off")
        lons = [p.location.lon for p in pts]
        lats = [p.location.lat for p in pts]
        for s, e in find_dwells(lons, lats, cfg.stay_radius_km, cfg.stay_min_duration):
            for rid in ids[s:e]:
                if rid in cand:
                    labels[rid].add("stay")

    if counts:
        threshold = float(np.quantile(np.array(sorted(counts.values()), dtype=float), cfg.hotspot_density_quantile))
        for rid, n in counts.items():
            if n > threshold:
                labels[rid].add("hotspot")

    if len(all_sog) > 1:
        mean = float(np.mean(all_sog))
        sigma = float(np.std(all_sog))
        if sigma >= 1e-9:
            for rid, n in speed_n.items():
                cell_mean = speed_sum[rid] / n
                if cell_mean > mean + cfg.speed_sigma * sigma:
                    labels[rid].add("high-speed")
                elif cell_mean < mean - cfg.speed_sigma * sigma:
                    labels[rid].add("low-speed")

    return grid.with_labels(labels)


def feasible_regions(grid: RegionGrid, last: Location, last_timestep: int, horizon: int,
                     max_speed_kmh: float, bin_seconds: float = 3600.0) -> frozenset:
    """Candidate cells reachable from ``last`` by the horizon at ``max_speed_kmh``."""
    if max_speed_kmh <= 0:
        raise ValueError("max speed must be positive")
    if horizon < last_timestep:
        raise ValueError("horizon precedes the last observation")
    reach = max_speed_kmh * (horizon - last_timestep) * bin_seconds / 3600.0
    if math.isinf(reach):
        return frozenset(grid.candidate_ids)
    out = set()
    for rid in grid.candidate_ids:
        c = grid.cells[rid]
        if reach == 0:
            if c.contains(last):
                out.add(rid)
        elif c.distance_km(last) <= reach:
            out.add(rid)
    return frozenset(out)


def prepare_grid(train, cell_size_deg: float, cfg: FeatureConfig, aoi: Region | None = None) -> RegionGrid:
    """Build the grid, mark visited cells as candidates and label them."""
    if aoi is None:
        aoi = bounding_aoi(train, pad_deg=cell_size_deg)
    grid = build_grid(aoi, cell_size_deg)
    grid = grid.with_candidates(candidate_regions(grid, train))
    return label_regions(grid, train, cfg)
