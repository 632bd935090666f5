import csv
import random

import pytest

from darkabduce.abduction import (
    EXPLANATION_COLUMNS,
    AbductionQuery,
    abduce_top_k,
    build_init_program,
    check_explanation,
    query_program,
    score_candidates,
)
from darkabduce.geospace import Location, Region, RegionGrid, build_grid
from darkabduce.learner import transition_rule
from darkabduce.logic import (
    MULTI,
    SINGLE,
    TRUE,
    Interval,
    Program,
    TemporalFact,
    at,
    feature,
    minimal_model,
    normal,
    parsimony,
)
from darkabduce.trajectories import TimeBinning, Trajectory, TrajectoryPoint
from oracles import brute_force_top_k, random_abduction_case

BINS = TimeBinning(0.0, 3600)


def line_grid(labels):
    """Five cells in a row; ``labels`` maps column index to a label set."""
    g = build_grid(Region("AOI", Location(30.0, 46.0), Location(30.05, 46.01)), 0.01)
    g = g.with_candidates(g.cells)
    return g.with_labels({f"R_000_{c:03d}": v for c, v in labels.items()})


def prefix_through(grid, cols, t0=0):
    pts = [TrajectoryPoint(3600.0 * (t0 + i) + 1.0, grid.cells[f"R_000_{c:03d}"].center) for i, c in enumerate(cols)]
    return Trajectory("agt", pts)


def test_init_program_one_point():
    g = line_grid({0: {"nearport"}, 3: {"hotspot", "stay"}})
    p = build_init_program("agt", prefix_through(g, [1]), g, BINS, horizon=2)
    facts = list(p.facts())
    assert facts == [TemporalFact(at("agt", "R_000_001"), TRUE, 0)]
    assert len(p.persistent) == 3
    assert p.max_timestep == 2


def test_init_program_outside_aoi():
    g = line_grid({})
    t = Trajectory("agt", [TrajectoryPoint(0.0, Location(35.0, 40.0))])
    with pytest.raises(ValueError):
        build_init_program("agt", t, g, BINS)


def test_query_validation():
    g = line_grid({})
    pre = prefix_through(g, [0, 1])
    with pytest.raises(ValueError):
        AbductionQuery("agt", pre, (), g, BINS, horizon=1, k=3)
    with pytest.raises(ValueError):
        AbductionQuery("agt", pre, (), g, BINS, horizon=3, k=0)


def test_no_rules_scores_zero():
    g = line_grid({0: {"nearport"}, 2: {"hotspot"}})
    p = build_init_program("agt", prefix_through(g, [0]), g, BINS, horizon=1)
    assert parsimony("agt", p.extend([TemporalFact(at("agt", "R_000_002"), TRUE, 1)]), 1) == 0.0


def test_two_firing_rules_take_max_lower_bound():
    g = line_grid({0: {"nearport", "low-speed"}, 2: {"hotspot"}})
    rules = [transition_rule("nearport", "hotspot", 0.8, SINGLE), transition_rule("low-speed", "hotspot", 0.9, SINGLE)]
    p = build_init_program("agt", prefix_through(g, [0]), g, BINS, horizon=1).with_rules(rules)
    assert parsimony("agt", p.extend([TemporalFact(at("agt", "R_000_002"), TRUE, 1)]), 1) == 0.9


def _three_candidate_query(k):
    g = line_grid({0: {"nearport"}, 1: {"low-speed"}, 2: {"hotspot"}, 3: {"change-direction"}})
    g = g.with_candidates(["R_000_001", "R_000_002", "R_000_003", "R_000_004"])
    g = g.with_labels({"R_000_001": {"nearport", "low-speed"}, "R_000_002": {"hotspot"},
                       "R_000_003": {"change-direction"}})
    rules = (transition_rule("low-speed", "change-direction", 0.9, SINGLE),
             transition_rule("nearport", "hotspot", 0.8, MULTI))
    return AbductionQuery("agt", prefix_through(g, [1]), rules, g, BINS, horizon=1, k=k)


def test_top_k_three_candidates():
    ex = abduce_top_k(_three_candidate_query(2))
    assert [(r.region, r.score) for r in ex.regions] == [("R_000_003", 0.9), ("R_000_002", 0.8)]
    assert ex.regions[0].fired_rules == ("low-speed>change-direction@0.9",)
    everything = abduce_top_k(_three_candidate_query(10))
    assert [r.region for r in everything.regions] == ["R_000_003", "R_000_002", "R_000_001", "R_000_004"]
    assert [r.score for r in everything.regions][2:] == [0.0, 0.0]


def test_explanation_csv(tmp_path):
    q = _three_candidate_query(2)
    ex = abduce_top_k(q)
    path = tmp_path / "regions.csv"
    ex.write_csv(path, q.grid, header=["k=2"])
    rows = [r for r in csv.reader(open(path)) if not r[0].startswith("#")]
    assert rows[0] == EXPLANATION_COLUMNS
    assert rows[1][:2] == ["1", "R_000_003"]
    assert rows[1][6:] == ["0.9", "change-direction", "low-speed>change-direction@0.9"]


def test_inconsistent_candidates_are_discarded():
    q = _three_candidate_query(5)
    base = query_program(q).extend([TemporalFact(normal("agt"), Interval(0.0, 0.85), 1)])
    scored = dict(score_candidates(base, "agt", 1, ["R_000_002", "R_000_003", "R_000_004"]))
    assert scored == {"R_000_002": 0.8, "R_000_003": None, "R_000_004": 0.0}


def test_inconsistent_flag_scores_zero(monkeypatch):
    import darkabduce.abduction as abd

    real = abd.score_candidates

    def with_conflict(base, agent, horizon, candidates, threads=1):
        return [(r, None if r == "R_000_003" else s) for r, s in real(base, agent, horizon, candidates, threads)]

    monkeypatch.setattr(abd, "score_candidates", with_conflict)
    q = _three_candidate_query(10)
    dropped = abduce_top_k(q)
    assert dropped.discarded == ("R_000_003",)
    assert "R_000_003" not in dropped.region_ids
    kept = abduce_top_k(q, score_inconsistent_as_zero=True)
    assert kept.region_ids == ["R_000_002", "R_000_001", "R_000_003", "R_000_004"]


def test_feasibility_filter():
    q = _three_candidate_query(10)
    near = AbductionQuery(q.agent, q.prefix, q.rules, q.grid, q.bins, q.horizon, q.k, max_speed_kmh=1.0)
    assert abduce_top_k(near).region_ids == ["R_000_002", "R_000_001"]


@pytest.mark.parametrize("seed", range(40))
def test_top_k_matches_oracle(seed):
    q, args = random_abduction_case(random.Random(seed))
    got = [(r.region, r.score) for r in abduce_top_k(q).regions]
    assert got == brute_force_top_k(*args)


@pytest.mark.parametrize("seed", range(10))
def test_top_k_nesting_and_threads(seed):
    q, _ = random_abduction_case(random.Random(1000 + seed))
    full = abduce_top_k(AbductionQuery(q.agent, q.prefix, q.rules, q.grid, q.bins, q.horizon, len(q.grid.cells)))
    for k in range(1, len(full.regions) + 1):
        qk = AbductionQuery(q.agent, q.prefix, q.rules, q.grid, q.bins, q.horizon, k)
        assert abduce_top_k(qk).regions == full.regions[:k]
    assert abduce_top_k(q, threads=4).regions == abduce_top_k(q, threads=1).regions
    assert all(0.0 <= r.score <= 1.0 for r in full.regions)


def test_candidate_fact_never_lowers_other_cells():
    q = _three_candidate_query(5)
    base = query_program(q)
    m0 = minimal_model(base)
    for rid in ["R_000_002", "R_000_003"]:
        assert m0.leq(minimal_model(base.extend([TemporalFact(at("agt", rid), TRUE, 1)])))


# Example trajectory with regions written as r_(max corner),(min corner)
def _named(x1, y1, x0, y0):
    return Region(f"r_({x1},{y1}),({x0},{y0})", Location(x0, y0), Location(x1, y1))


EX_INIT = [_named(31.14, 46.12, 31.11, 46.09), _named(30.88, 46.48, 30.86, 46.45)]
EX_PRED = [
    _named(30.87, 46.51, 30.85, 46.48),
    _named(30.82, 46.51, 30.79, 46.48),
    _named(30.88, 46.48, 30.85, 46.45),
    _named(30.87, 46.50, 30.84, 46.47),
    _named(30.87, 46.49, 30.84, 46.47),
]


def _example_setup():
    cells = {r.id: r for r in EX_INIT + EX_PRED}
    grid = RegionGrid(Region("AOI", Location(30.0, 45.5), Location(32.0, 47.0)), 0.03, (), (), cells,
                      frozenset(cells))
    init = Program([TemporalFact(at("agt", EX_INIT[0].id), TRUE, 0), TemporalFact(at("agt", EX_INIT[1].id), TRUE, 1)])
    pred = Program([TemporalFact(at("agt", r.id), TRUE, 2) for r in EX_PRED])
    return grid, init, pred


def test_example_suffix_is_entailed():
    grid, init, pred = _example_setup()
    # both hidden points fall into the horizon bin
    suffix = Trajectory("agt", [TrajectoryPoint(2 * 3600.0 + 10, Location(30.85, 46.48)),
                                TrajectoryPoint(2 * 3600.0 + 20, Location(30.81, 46.49))])
    assert check_explanation(init, pred, suffix, grid, BINS)
    observed = Trajectory("agt", [TrajectoryPoint(3600.0 + 5, Location(30.87, 46.47))])
    assert check_explanation(init, pred, observed, grid, BINS)


def test_uncovered_point_is_not_entailed():
    grid, init, pred = _example_setup()
    stray = Trajectory("agt", [TrajectoryPoint(2 * 3600.0 + 10, Location(30.95, 46.48))])
    assert not check_explanation(init, pred, stray, grid, BINS)
    # the first listed point lies 0.09 degrees south of its stated region
    first = Trajectory("agt", [TrajectoryPoint(5.0, Location(31.11, 46.00))])
    assert not check_explanation(init, pred, first, grid, BINS)


def test_inconsistent_union_is_not_an_explanation():
    grid, init, pred = _example_setup()
    rule = transition_rule("hotspot", "hotspot", 0.9, SINGLE)
    labeled = Program([TemporalFact(at("agt", EX_INIT[1].id), TRUE, 1),
                       TemporalFact(normal("agt"), Interval(0.0, 0.5), 2)], [rule], max_timestep=2,
                      persistent={feature("hotspot", r.id): TRUE for r in EX_INIT + EX_PRED})
    suffix = Trajectory("agt", [TrajectoryPoint(2 * 3600.0 + 10, Location(30.85, 46.48))])
    assert not check_explanation(labeled, pred, suffix, grid, BINS)
    assert check_explanation(labeled.with_rules([]), pred, suffix, grid, BINS)

