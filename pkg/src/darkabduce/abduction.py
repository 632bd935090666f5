"""Top-k abduction of future regions for a vessel that went dark."""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .geospace import RegionGrid, feasible_regions
from .logic import (
    TRUE,
    After,
    GroundAtom,
    Inconsistent,
    Program,
    Rule,
    TemporalFact,
    _num,
    at,
    entails_trajectory,
    fired_rules,
    minimal_model,
    normal,
)
from .trajectories import TimeBinning, Trajectory, to_region_sequence


@dataclass(frozen=True)
class AbductionQuery:
    agent: str
    prefix: Trajectory
    rules: Sequence[Rule]
    grid: RegionGrid
    bins: TimeBinning
    horizon: int
    k: int
    max_speed_kmh: float | None = None

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be at least 1")
        last = self.bins.timestep(self.prefix.points[-1].timestamp)
        if self.horizon <= last:
            raise ValueError(f"horizon {self.horizon} must follow the last observed step {last}")


@dataclass(frozen=True)
class ScoredRegion:
    region: str
    score: float
    fired_rules: tuple = ()


@dataclass
class Explanation:
    agent: str
    horizon: int
    regions: list = field(default_factory=list)
    discarded: tuple = ()  # inconsistent candidates

    @property
    def region_ids(self) -> list:
        return [r.region for r in self.regions]

    def pred_program(self) -> Program:
        """One ``at`` fact per returned region at the horizon."""
        return Program([TemporalFact(at(self.agent, r.region), TRUE, self.horizon) for r in self.regions])

    def to_rows(self, grid: RegionGrid) -> list:
        rows = []
        for rank, sr in enumerate(self.regions, start=1):
            c = grid.cells[sr.region]
            rows.append([
                rank, sr.region, repr(c.min_corner.lon), repr(c.min_corner.lat), repr(c.max_corner.lon),
                repr(c.max_corner.lat), repr(sr.score), "|".join(sorted(grid.labels.get(sr.region, ()))),
                "|".join(sr.fired_rules),
            ])
        return rows

    def write_csv(self, path, grid: RegionGrid, header: Iterable[str] = ()) -> None:
        with open(path, "w", newline="") as fh:
            for h in header:
                fh.write(f"# {h}\n")
            w = csv.writer(fh)
            w.writerow(EXPLANATION_COLUMNS)
            w.writerows(self.to_rows(grid))


EXPLANATION_COLUMNS = ["rank", "region_id", "min_lon", "min_lat", "max_lon", "max_lat", "score", "labels",
                       "fired_rules"]


def rule_token(rule: Rule) -> str:
    """``m0>m1@conf`` for transition rules, the body predicates otherwise."""
    conf = _num(rule.head_annotation.lower)
    for e in rule.body:
        if isinstance(e, After):
            return f"{e.second}>{e.first}@{conf}"
    return "&".join(e.atom.predicate for e in rule.body) + f"@{conf}"


def build_init_program(agent: str, prefix: Trajectory, grid: RegionGrid, bins: TimeBinning,
                       horizon: int | None = None) -> Program:
    """``at`` facts for the observed prefix plus feature facts of every labeled candidate cell.

    Feature facts hold at every step up to the horizon and are stored as
    persistent atoms.
    """
    if not prefix.points:
        raise ValueError("empty prefix")
    seq = to_region_sequence(prefix, grid, bins)
    if not seq:
        raise ValueError(f"{agent}: every prefix point lies outside the AOI")
    if seq[0][0] < 0:
        raise ValueError("prefix starts before the binning origin")
    facts = [TemporalFact(at(agent, rid), TRUE, t) for t, rid in seq]
    persistent = {
        GroundAtom(label, (rid,)): TRUE
        for rid in sorted(grid.candidate_ids)
        for label in sorted(grid.labels.get(rid, ()))
    }
    last = seq[-1][0]
    return Program(facts, max_timestep=max(last, horizon if horizon is not None else last), persistent=persistent)


def query_program(q: AbductionQuery) -> Program:
    return build_init_program(q.agent, q.prefix, q.grid, q.bins, q.horizon).with_rules(q.rules)


def candidate_pool(q: AbductionQuery) -> list:
    if q.max_speed_kmh is None:
        pool = q.grid.candidate_ids
    else:
        last = q.prefix.points[-1]
        pool = feasible_regions(q.grid, last.location, q.bins.timestep(last.timestamp), q.horizon,
                                q.max_speed_kmh, q.bins.bin_seconds)
    return sorted(pool)


def _candidate(base: Program, agent: str, rid: str, horizon: int) -> Program:
    return base.extend([TemporalFact(at(agent, rid), TRUE, horizon)])


def score_candidates(base: Program, agent: str, horizon: int, candidates: Sequence[str],
                     threads: int = 1) -> list:
    """``(region, score or None)`` per candidate, None marking an inconsistent extension."""
    minimal_model(base)
    head = normal(agent)

    def score(rid):
        try:
            return rid, minimal_model(_candidate(base, agent, rid, horizon)).value(head, horizon).lower
        except Inconsistent:
            return rid, None

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(score, candidates))
    return [score(rid) for rid in candidates]


def abduce_top_k(q: AbductionQuery, threads: int = 1, score_inconsistent_as_zero: bool = False) -> Explanation:
    """Score every candidate singleton extension and keep the k best.

    Ties break on ascending region id. Each returned region also carries the
    rules that fired into ``normal(agent)`` at the horizon.
    """
    candidates = candidate_pool(q)
    if not candidates:
        raise ValueError(f"{q.agent}: no candidate regions")
    base = query_program(q)
    scored = score_candidates(base, q.agent, q.horizon, candidates, threads)
    discarded = tuple(r for r, s in scored if s is None)
    if score_inconsistent_as_zero:
        ranked = [(r, 0.0 if s is None else s) for r, s in scored]
    else:
        ranked = [(r, s) for r, s in scored if s is not None]
    ranked.sort(key=lambda rs: (-rs[1], rs[0]))
    out = Explanation(q.agent, q.horizon, discarded=discarded)
    for rid, s in ranked[: q.k]:
        out.regions.append(ScoredRegion(rid, s, explain_region(base, q.agent, rid, q.horizon)))
    return out


def explain_region(base: Program, agent: str, rid: str, horizon: int) -> tuple:
    """Rule tokens that fire into ``normal(agent)`` at the horizon for this candidate."""
    try:
        model = minimal_model(_candidate(base, agent, rid, horizon))
    except Inconsistent:
        return ()
    return tuple(rule_token(r) for r in fired_rules(model, base.rules, agent, horizon))


def check_explanation(init: Program, pred: Program, suffix: Trajectory, grid: RegionGrid,
                      bins: TimeBinning) -> bool:
    """``init ∪ pred`` covers every suffix point and ``init ∪ pred`` (with its rules) is consistent."""
    combined = init.extend(pred.facts(), max_timestep=max(init.max_timestep, pred.max_timestep))
    if not entails_trajectory(combined, suffix, grid.cells, bins):
        return False
    try:
        minimal_model(combined)
    except Inconsistent:
        return False
    return True
