"""Synthetic vessel traffic with planted port/hotspot structure.

Vessels leave a port, follow one of the world's routes at per-leg speeds,
slow down inside hotspot boxes and loiter at the final waypoint. Positions
carry isotropic Gaussian noise (km) and are clipped to the AOI.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geospace import Location, Region, km_to_degrees, haversine_km
from .trajectories import Trajectory, TrajectoryPoint

KNOT_KMH = 1.852


@dataclass(frozen=True)
class Route:
    waypoints: tuple  # Location, at least two
    leg_speeds: tuple  # (min_kn, max_kn) per leg

    def __post_init__(self):
        if len(self.waypoints) < 2:
            raise ValueError("a route needs at least two waypoints")
        if len(self.leg_speeds) != len(self.waypoints) - 1:
            raise ValueError("one speed range per leg required")
        for lo, hi in self.leg_speeds:
            if not 0 < lo <= hi:
                raise ValueError(f"bad speed range {lo}:{hi}")


@dataclass(frozen=True)
class SynthWorld:
    aoi: Region
    ports: tuple = ()
    hotspots: tuple = ()
    routes: tuple = ()
    noise_km: float = 0.2
    seed: int = 0
    hotspot_speed_factor: float = 0.35
    max_port_dwell: int = 4  # steps a vessel may idle at the start before departing
    gap_prob: float = 0.0  # chance that a vessel has one reporting gap
    gap_steps: int = 6
    dwell_prob: float = 0.0  # chance that a vessel stops on entering its first hotspot
    dwell_steps: int = 8
    start_time: float = 1_700_000_000.0

    def __post_init__(self):
        if self.noise_km < 0:
            raise ValueError("noise_km must be non-negative")
        if not self.routes:
            raise ValueError("a world needs at least one route")
        for route in self.routes:
            for wp in route.waypoints:
                if not _inside(self.aoi, wp):
                    raise ValueError(f"waypoint ({wp.lon}, {wp.lat}) outside the AOI")
        for name in ("gap_prob", "dwell_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0,1]")


def _inside(aoi: Region, loc: Location) -> bool:
    return aoi.min_corner.lon <= loc.lon <= aoi.max_corner.lon and aoi.min_corner.lat <= loc.lat <= aoi.max_corner.lat


def _floats(text, n=None):
    vals = [float(x) for x in text.replace(" ", "").split(",") if x]
    if n is not None and len(vals) != n:
        raise ValueError(f"expected {n} numbers in {text!r}")
    return vals


def _parse_route(text):
    # 30.1,46.1 -> 30.5,46.4 -> 30.9,46.5 @ 8:12, 6:10
    path, _, speeds = text.partition("@")
    wps = tuple(Location(*_floats(p, 2)) for p in path.split("->"))
    legs = []
    for s in speeds.split(","):
        if s.strip():
            lo, _, hi = s.partition(":")
            legs.append((float(lo), float(hi or lo)))
    if not legs:
        legs = [(8.0, 12.0)] * (len(wps) - 1)
    elif len(legs) == 1:
        legs = legs * (len(wps) - 1)
    return Route(wps, tuple(legs))


def parse_world(text: str) -> SynthWorld:
    """Flat ``key = value`` world spec; ``port``, ``hotspot`` and ``route`` may repeat."""
    ports, hotspots, routes = [], [], []
    scalars = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        try:
            if key == "port":
                ports.append(Location(*_floats(value, 2)))
            elif key == "hotspot":
                x0, y0, x1, y1 = _floats(value, 4)
                hotspots.append(Region(f"H{len(hotspots)}", Location(x0, y0), Location(x1, y1)))
            elif key == "route":
                routes.append(_parse_route(value))
            else:
                scalars[key] = value
        except ValueError as e:
            raise ValueError(f"line {lineno}: {e}") from None
    if "aoi" not in scalars:
        raise ValueError("world spec needs an 'aoi = min_lon,min_lat,max_lon,max_lat' line")
    x0, y0, x1, y1 = _floats(scalars.pop("aoi"), 4)
    kwargs = {}
    casts = {"noise_km": float, "seed": int, "hotspot_speed_factor": float, "max_port_dwell": int,
             "gap_prob": float, "gap_steps": int, "dwell_prob": float, "dwell_steps": int, "start_time": float}
    for k, v in scalars.items():
        if k not in casts:
            raise ValueError(f"unknown world key {k!r}")
        kwargs[k] = casts[k](v)
    return SynthWorld(Region("AOI", Location(x0, y0), Location(x1, y1)), tuple(ports), tuple(hotspots),
                      tuple(routes), **kwargs)


def load_world(path) -> SynthWorld:
    return parse_world(Path(path).read_text())


def _bearing(a: Location, b: Location) -> float:
    lat1, lat2 = math.radians(a.lat), math.radians(b.lat)
    dlon = math.radians(b.lon - a.lon)
    x = math.sin(dlon) * math.cos(lat2)
    y = math.cos(lat1) * math.sin(lat2) - math.sin(lat1) * math.cos(lat2) * math.cos(dlon)
    return math.degrees(math.atan2(x, y)) % 360.0


def _advance(a: Location, b: Location, frac: float) -> Location:
    return Location(a.lon + (b.lon - a.lon) * frac, a.lat + (b.lat - a.lat) * frac)


def _path(world: SynthWorld, route: Route, rng, n_points: int, bin_seconds: float):
    """Noise-free positions, speeds (kn) and courses, one per step."""
    pos = route.waypoints[0]
    leg = 0
    leg_speed = [rng.uniform(lo, hi) for lo, hi in route.leg_speeds]
    out = []
    idle = int(rng.integers(0, world.max_port_dwell + 1)) if world.max_port_dwell > 0 else 0
    course = _bearing(route.waypoints[0], route.waypoints[1])
    will_dwell = world.dwell_prob > 0 and rng.random() < world.dwell_prob
    dwell_left = None  # None until the first hotspot is reached
    for step in range(n_points):
        if step < idle or leg >= len(route.leg_speeds):
            out.append((pos, 0.0, course))
            continue
        speed = leg_speed[leg]
        if any(h.contains(pos) for h in world.hotspots):
            speed *= world.hotspot_speed_factor
            if will_dwell and dwell_left is None:
                dwell_left = world.dwell_steps
        if dwell_left:
            dwell_left -= 1
            out.append((pos, 0.0, course))
            continue
        out.append((pos, speed, course))
        budget = speed * KNOT_KMH * bin_seconds / 3600.0
        while budget > 0 and leg < len(route.leg_speeds):
            target = route.waypoints[leg + 1]
            d = haversine_km(pos, target)
            if d <= budget:
                budget -= d
                pos = target
                leg += 1
                if leg < len(route.leg_speeds):
                    course = _bearing(pos, route.waypoints[leg + 1])
            else:
                pos = _advance(pos, target, budget / d)
                course = _bearing(pos, target)
                budget = 0.0
    return out


def _vessel(world: SynthWorld, index: int, n_points: int, bin_seconds: float) -> Trajectory:
    rng = np.random.default_rng(world.seed + index)
    route = world.routes[int(rng.integers(len(world.routes)))]
    path = _path(world, route, rng, n_points, bin_seconds)
    t0 = world.start_time + float(rng.integers(0, 86_400 // int(bin_seconds) + 1)) * bin_seconds
    draught = round(float(rng.uniform(5.0, 9.0)), 1)
    noise = rng.standard_normal((n_points, 2)) * world.noise_km
    skip = set()
    if world.gap_prob > 0 and rng.random() < world.gap_prob and n_points > world.gap_steps + 4:
        start = int(rng.integers(2, n_points - world.gap_steps - 1))
        skip = set(range(start, start + world.gap_steps))
    a = world.aoi
    eps = 1e-9
    pts = []
    for step, ((loc, speed, course), (dx, dy)) in enumerate(zip(path, noise)):
        if step in skip:
            continue
        dlon, dlat = km_to_degrees(dx, dy, loc.lat)
        lon = min(max(loc.lon + float(dlon), a.min_corner.lon), a.max_corner.lon - eps)
        lat = min(max(loc.lat + float(dlat), a.min_corner.lat), a.max_corner.lat - eps)
        sog = max(0.0, speed + float(rng.normal(0.0, 0.3)))
        pts.append(TrajectoryPoint(
            t0 + step * bin_seconds, Location(lon, lat), sog=round(sog, 2), cog=round(course, 1),
            heading=round(course, 1), draught=draught,
        ))
    return Trajectory(f"V{index:04d}", pts)


def generate(world: SynthWorld, n_vessels: int, points_per_traj: int, bin_seconds: float = 600.0,
             first_index: int = 0) -> list:
    """``n_vessels`` trajectories; vessel ``i`` draws from seed ``world.seed + i``."""
    if n_vessels < 1:
        raise ValueError("n_vessels must be at least 1")
    if points_per_traj < 4:
        raise ValueError("points_per_traj must be at least 4")
    if bin_seconds <= 0:
        raise ValueError("bin_seconds must be positive")
    return [_vessel(world, first_index + i, points_per_traj, bin_seconds) for i in range(n_vessels)]


def two_route_world(seed: int = 7, noise_km: float = 0.1, gap_prob: float = 0.0, dwell_prob: float = 0.0) -> SynthWorld:
    """A port with two diverging lanes, each passing one hotspot."""
    port = Location(30.10, 46.10)
    north = Route((port, Location(30.30, 46.32), Location(30.55, 46.42), Location(30.90, 46.50)),
                  ((9.0, 12.0), (7.0, 10.0), (9.0, 12.0)))
    south = Route((port, Location(30.35, 46.08), Location(30.60, 46.16), Location(30.90, 46.12)),
                  ((9.0, 12.0), (7.0, 10.0), (9.0, 12.0)))
    hotspots = (
        Region("H0", Location(30.42, 46.34), Location(30.52, 46.42)),
        Region("H1", Location(30.45, 46.09), Location(30.55, 46.16)),
    )
    return SynthWorld(Region("AOI", Location(30.0, 46.0), Location(31.0, 46.6)), (port,), hotspots,
                      (north, south), noise_km=noise_km, seed=seed, gap_prob=gap_prob,
                      dwell_prob=dwell_prob)


WORLD_TEMPLATE = """\
# synthetic world: one port, two lanes, one hotspot per lane
aoi = 30.0,46.0,31.0,46.6
port = 30.10,46.10
hotspot = 30.42,46.34,30.52,46.42
hotspot = 30.45,46.09,30.55,46.16
route = 30.10,46.10 -> 30.30,46.32 -> 30.55,46.42 -> 30.90,46.50 @ 9:12, 7:10, 9:12
route = 30.10,46.10 -> 30.35,46.08 -> 30.60,46.16 -> 30.90,46.12 @ 9:12, 7:10, 9:12
noise_km = 0.1
seed = 7
"""
