import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from darkabduce.geospace import (
    FeatureConfig,
    Location,
    Region,
    RegionGrid,
    build_grid,
    candidate_regions,
    feasible_regions,
    find_dwells,
    haversine_km,
    km_to_degrees,
    label_regions,
    read_key_values,
    read_ports,
)
from darkabduce.trajectories import Trajectory, TrajectoryPoint


def box(x0, y0, x1, y1, rid="AOI"):
    return Region(rid, Location(x0, y0), Location(x1, y1))


def track(agent, coords, sog=None, cog=None, dt=600.0, t0=0.0):
    pts = []
    for i, (lon, lat) in enumerate(coords):
        pts.append(TrajectoryPoint(t0 + i * dt, Location(lon, lat),
                                   sog=None if sog is None else sog[i], cog=None if cog is None else cog[i]))
    return Trajectory(agent, pts)


def test_haversine_reference_values():
    # one degree of latitude on the mean sphere
    assert haversine_km(Location(30, 46), Location(30, 47)) == pytest.approx(111.195, abs=1e-3)
    assert haversine_km(Location(0, 0), Location(180, 0)) == pytest.approx(math.pi * 6371.0088)
    assert haversine_km(Location(30, 46), Location(30, 46)) == 0.0


def test_km_to_degrees_round_trip():
    dlon, dlat = km_to_degrees(10.0, 5.0, 46.0)
    assert haversine_km(Location(30, 46), Location(30, 46 + dlat)) == pytest.approx(5.0, rel=1e-6)
    assert haversine_km(Location(30, 46), Location(30 + dlon, 46)) == pytest.approx(10.0, rel=1e-3)


def test_grid_counts_and_ids():
    g = build_grid(box(30, 46, 31, 47), 0.025)
    assert len(g) == 1600
    assert g.shape == (40, 40)
    assert g.locate(Location(30.0, 46.0)) == "R_000_000"
    assert g.locate(Location(30.03, 46.99)) == "R_039_001"
    assert g.locate(Location(31.0, 46.5)) is None


def test_degenerate_aoi():
    with pytest.raises(ValueError):
        box(30, 46, 30, 47)
    with pytest.raises(ValueError):
        build_grid(box(30, 46, 31, 47), 0.0)


def test_single_cell_grid_is_half_open():
    g = build_grid(box(30, 46, 30.025, 46.025), 0.025)
    assert len(g) == 1
    cell = g.cells["R_000_000"]
    assert cell.contains(Location(30, 46))
    assert not cell.contains(Location(30.025, 46.025))


def test_clipped_last_column():
    g = build_grid(box(30, 46, 30.06, 46.05), 0.025)
    assert g.shape == (2, 3)
    last = g.cells["R_000_002"]
    assert last.max_corner.lon == 30.06
    assert last.min_corner.lon == pytest.approx(30.05)


def test_cell_area_at_46n():
    g = build_grid(box(30, 45.9875, 30.025, 46.0125), 0.025)
    assert g.cell_area_km2("R_000_000") == pytest.approx(5.45, abs=0.3)


@pytest.mark.parametrize("lat", [0.0, 20.0, 46.0, 60.0, 75.0])
def test_area_matches_cosine_approximation(lat):
    cell = box(30, lat, 30.025, lat + 0.025)
    approx = 0.025**2 * 111.32**2 * math.cos(math.radians(lat + 0.0125))
    assert cell.area_km2() == pytest.approx(approx, rel=0.01)


def test_partition_of_random_points():
    g = build_grid(box(30, 46, 30.5, 46.3), 0.025)
    rng = np.random.default_rng(7)
    lons = rng.uniform(30, 30.5, 10_000)
    lats = rng.uniform(46, 46.3, 10_000)
    # include exact interior edges
    lons[:50] = 30 + 0.025 * rng.integers(0, 20, 50)
    ids = g.ids_for(lons, lats)
    for lon, lat, rid in zip(lons[:2000], lats[:2000], ids[:2000]):
        owners = [r for r, c in g.cells.items() if c.contains(Location(lon, lat))]
        assert owners == [rid]
    assert all(i is not None for i in ids)


def test_candidate_regions_straight_line():
    g = build_grid(box(30, 46, 30.1, 46.1), 0.025)
    t = track("v", [(30.01, 46.01), (30.03, 46.01), (30.06, 46.01), (30.062, 46.012)])
    assert candidate_regions(g, [t]) == {"R_000_000", "R_000_001", "R_000_002"}
    assert candidate_regions(g, []) == frozenset()


def test_candidate_regions_all_cells():
    g = build_grid(box(30, 46, 30.05, 46.05), 0.025)
    t = track("v", [(30.01, 46.01), (30.03, 46.01), (30.03, 46.03), (30.01, 46.03)])
    assert candidate_regions(g, [t]) == set(g.cells)


def _labeled(train, **cfg):
    g = build_grid(box(30, 46, 30.2, 46.1), 0.025)
    g = g.with_candidates(candidate_regions(g, train))
    return label_regions(g, train, FeatureConfig(**cfg))


def test_nearport_label():
    t = track("v", [(30.01, 46.01), (30.15, 46.01)])
    g = _labeled([t], port_locations=(Location(30.012, 46.012),), port_radius_km=5.0)
    assert "nearport" in g.labels_of("R_000_000")
    assert "nearport" not in g.labels_of("R_000_006")


def test_uniform_speed_has_no_speed_labels():
    t = track("v", [(30.01 + 0.02 * i, 46.01) for i in range(8)], sog=[10.0] * 8)
    g = _labeled([t])
    assert not any({"high-speed", "low-speed"} & g.labels_of(r) for r in g.candidate_ids)


def test_speed_labels():
    t = track("v", [(30.01, 46.01), (30.01, 46.011), (30.1, 46.01), (30.15, 46.01), (30.19, 46.01)],
              sog=[1.0, 1.0, 10.0, 10.0, 20.0])
    g = _labeled([t])
    assert "low-speed" in g.labels_of("R_000_000")
    assert "high-speed" in g.labels_of("R_000_007")


def test_hotspot_from_dense_cell():
    dense = [(30.01 + 0.0001 * i, 46.01) for i in range(45)]
    sparse = [(30.03 + 0.025 * i, 46.01) for i in range(5)]
    g = _labeled([track("v", dense + sparse)], stay_min_duration=1000)
    hot = {r for r in g.candidate_ids if "hotspot" in g.labels_of(r)}
    assert hot == {"R_000_000"}


def test_course_stay_gap_and_draught_labels():
    pts = [
        TrajectoryPoint(0, Location(30.01, 46.01), cog=90.0, draught=5.0),
        TrajectoryPoint(600, Location(30.03, 46.01), cog=180.0, draught=5.0),
        TrajectoryPoint(9000, Location(30.06, 46.01), cog=185.0, draught=6.0),
    ]
    g = _labeled([Trajectory("v", pts)], stay_min_duration=2, stay_radius_km=0.1)
    assert "change-direction" in g.labels_of("R_000_001")
    assert "ais-off" in g.labels_of("R_000_001")
    assert "draught" in g.labels_of("R_000_002")
    assert "stay" not in g.labels_of("R_000_000")


def test_stay_label():
    pts = [(30.011, 46.011)] * 1 + [(30.011 + 1e-4 * i, 46.011) for i in range(1, 7)] + [(30.1, 46.01)]
    g = _labeled([track("v", pts)])
    assert "stay" in g.labels_of("R_000_000")
    assert find_dwells([p[0] for p in pts], [p[1] for p in pts], 0.5, 6) == [(0, 7)]


def test_labels_are_permutation_invariant():
    rng = np.random.default_rng(3)
    trajs = [
        track(f"v{i}", [(30.01 + x, 46.01 + y) for x, y in rng.uniform(0, 0.15, (10, 2)) * [1, 0.5]],
              sog=list(rng.uniform(0, 20, 10)), cog=list(rng.uniform(0, 360, 10)))
        for i in range(6)
    ]
    a = _labeled(trajs)
    b = _labeled(trajs[::-1])
    assert a.labels == b.labels


def test_labels_of_unknown_id():
    g = build_grid(box(30, 46, 30.05, 46.05), 0.025)
    with pytest.raises(KeyError):
        g.labels_of("R_999_999")


def test_feature_config_validation():
    with pytest.raises(ValueError):
        FeatureConfig(hotspot_density_quantile=1.0)
    with pytest.raises(ValueError):
        FeatureConfig(port_radius_km=0.0)


def test_config_and_ports_files(tmp_path):
    cfg = tmp_path / "features.conf"
    cfg.write_text("# thresholds\nport_radius_km = 5\nstay-min-duration = 4\n")
    ports = tmp_path / "ports.csv"
    ports.write_text("name,lon,lat\nodesa,30.7,46.5\n")
    fc = FeatureConfig.from_mapping(read_key_values(cfg), read_ports(ports))
    assert fc.port_radius_km == 5.0
    assert fc.stay_min_duration == 4
    assert fc.port_locations == (Location(30.7, 46.5),)


def _feasibility_grid():
    # a row of cells eastward from 30.0E at 46N
    g = build_grid(box(30, 46, 30.5, 46.025), 0.025)
    return g.with_candidates(g.cells)


def test_feasible_regions_limits():
    g = _feasibility_grid()
    last = Location(30.001, 46.01)
    assert feasible_regions(g, last, 0, 2, math.inf) == g.candidate_ids
    assert feasible_regions(g, last, 2, 2, 10.0) == {"R_000_000"}
    with pytest.raises(ValueError):
        feasible_regions(g, last, 0, 2, 0.0)
    with pytest.raises(ValueError):
        feasible_regions(g, last, 3, 2, 10.0)


def test_feasible_regions_15_and_25_km():
    last = Location(30.0, 46.0)
    dlon15, _ = km_to_degrees(15.0, 0.0, 46.0)
    dlon25, _ = km_to_degrees(25.0, 0.0, 46.0)
    cells = {
        "A": box(30 + float(dlon15), 45.99, 30 + float(dlon15) + 0.01, 46.01, "A"),
        "B": box(30 + float(dlon25), 45.99, 30 + float(dlon25) + 0.01, 46.01, "B"),
        "C": box(29.99, 45.99, 30.01, 46.01, "C"),
    }
    g = RegionGrid(box(29, 45, 31, 47), 0.01, (), (), cells, frozenset(cells))
    assert feasible_regions(g, last, 0, 2, 10.0) == {"A", "C"}


@settings(max_examples=40, deadline=None)
@given(st.floats(0.5, 50), st.floats(0.5, 50), st.integers(1, 4), st.integers(1, 4))
def test_feasible_regions_monotone(s1, s2, h1, h2):
    g = _feasibility_grid()
    last = Location(30.2, 46.01)
    lo_s, hi_s = sorted((s1, s2))
    lo_h, hi_h = sorted((h1, h2))
    assert feasible_regions(g, last, 0, lo_h, lo_s) <= feasible_regions(g, last, 0, lo_h, hi_s)
    assert feasible_regions(g, last, 0, lo_h, lo_s) <= feasible_regions(g, last, 0, hi_h, lo_s)


def test_grid_csv_round_trip(tmp_path):
    t = track("v", [(30.01, 46.01), (30.03, 46.01), (30.06, 46.01)], cog=[0, 90, 90])
    g = _labeled([t])
    path = tmp_path / "grid.csv"
    g.to_csv(path, header=["seed=1"])
    back = RegionGrid.from_csv(path)
    assert back.candidate_ids == g.candidate_ids
    assert back.labels == g.labels
    assert back.lon_edges == g.lon_edges
