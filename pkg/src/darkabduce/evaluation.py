"""Metrics, the random baseline and the experiment suites."""

from __future__ import annotations

import csv
import gc
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .abduction import AbductionQuery, abduce_top_k
from .geospace import FeatureConfig, Region, RegionGrid, bounding_aoi, prepare_grid
from .learner import learn
from .logic import MULTI, SINGLE
from .trajectories import MID50, STRATEGIES, TimeBinning, Trajectory, cluster_trajectories, mask

log = logging.getLogger(__name__)

AT_HORIZON = "at_horizon"
FULL_SUFFIX = "full_suffix"
ABD = "ABD"
RND = "RND"

SUITES = (
    "f1_vs_k",
    "recall_vs_area",
    "recall_per_km2_vs_k",
    "f1_vs_horizon",
    "region_size_sweep",
    "rule_type_ablation",
    "masking_ablation",
    "data_efficiency",
    "runtime_vs_k",
)


@dataclass(frozen=True)
class EvalWindow:
    mode: str = AT_HORIZON
    width: int = 1

    def __post_init__(self):
        if self.mode not in (AT_HORIZON, FULL_SUFFIX):
            raise ValueError(f"unknown window mode {self.mode!r}")
        if self.width < 0:
            raise ValueError("window width must be non-negative")

    def __str__(self):
        return FULL_SUFFIX if self.mode == FULL_SUFFIX else f"{AT_HORIZON}({self.width})"


def ground_truth_cells(suffix: Trajectory, grid: RegionGrid, bins: TimeBinning, horizon: int,
                       window: EvalWindow = EvalWindow()) -> frozenset:
    """Distinct grid cells holding suffix points inside the window."""
    pts = suffix.points
    if window.mode == AT_HORIZON:
        pts = [p for p in pts if abs(bins.timestep(p.timestamp) - horizon) <= window.width]
    ids = grid.ids_for([p.location.lon for p in pts], [p.location.lat for p in pts])
    return frozenset(i for i in ids if i is not None)


def precision_at_k(returned: Sequence[str], truth: Iterable[str]) -> float:
    if not returned:
        raise ValueError("precision is undefined for an empty result")
    truth = set(truth)
    return sum(1 for r in returned if r in truth) / len(returned)


def recall_at_k(returned: Sequence[str], truth: Iterable[str]) -> float:
    truth = set(truth)
    if not truth:
        raise ValueError("recall is undefined without ground-truth cells")
    return len(truth & set(returned)) / len(truth)


def f1_score(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def area_of(returned: Iterable[str], grid: RegionGrid) -> float:
    return sum(grid.cell_area_km2(r) for r in returned)


def recall_per_km2(recall: float, area_km2: float) -> float:
    if area_km2 <= 0:
        raise ValueError("area must be positive")
    return recall / area_km2


@dataclass(frozen=True)
class Scores:
    precision: float
    recall: float
    f1: float
    area_km2: float
    recall_per_km2: float


def score(returned: Sequence[str], truth, grid: RegionGrid) -> Scores:
    p = precision_at_k(returned, truth)
    r = recall_at_k(returned, truth)
    area = area_of(returned, grid)
    return Scores(p, r, f1_score(p, r), area, recall_per_km2(r, area))


def _mean_scores(items: Sequence[Scores]) -> Scores:
    return Scores(*(float(np.mean([getattr(s, f) for s in items])) for f in Scores.__dataclass_fields__))


def random_baseline(grid: RegionGrid, k: int, truth, seed: int, query: int, trials: int = 3) -> Scores:
    """Average scores of ``trials`` uniform draws of ``k`` distinct grid cells.

    Trial ``j`` of query ``q`` uses the generator seeded with ``(seed, j, q)``.
    """
    ids = sorted(grid.cells)
    if k < 1 or k > len(ids):
        raise ValueError(f"k must lie in 1..{len(ids)}")
    if trials < 1:
        raise ValueError("trials must be at least 1")
    out = []
    for trial in range(trials):
        rng = np.random.default_rng([seed, trial, query])
        pick = rng.choice(len(ids), size=k, replace=False)
        out.append(score([ids[i] for i in sorted(pick)], truth, grid))
    return _mean_scores(out)


@dataclass(frozen=True)
class ExperimentConfig:
    cell_size_deg: float = 0.025
    bin_seconds: int = 3600
    hop: str = SINGLE
    min_support: int = 2
    min_confidence: float = 0.05
    max_hops: int | None = None
    k_values: tuple = tuple(range(1, 16))
    k: int = 10  # fixed k for sweeps over other parameters
    horizon_offset: int = 1
    horizon_offsets: tuple = (1, 2, 3, 4, 6)
    window: EvalWindow = EvalWindow()
    masking: str = MID50
    max_speed_kmh: float | None = 46.3  # 25 knots
    cell_sizes: tuple = (0.025 * math.sqrt(0.2), 0.025)
    train_sizes: tuple = (1, None)  # None means every training trajectory
    runtime_k: tuple = tuple(range(1, 51))
    runtime_repeats: int = 3
    rnd_trials: int = 3
    cluster_eps_km: float | None = None
    cluster_min_pts: int = 3
    aoi_pad_deg: float = 0.05
    threads: int = 1
    seed: int = 0
    features: FeatureConfig = FeatureConfig()

    def __post_init__(self):
        if self.hop not in (SINGLE, MULTI):
            raise ValueError(f"unknown hop {self.hop!r}")
        if self.masking not in STRATEGIES:
            raise ValueError(f"unknown masking strategy {self.masking!r}")
        if self.horizon_offset < 1:
            raise ValueError("horizon_offset must be at least 1")

    def header(self) -> list:
        d = asdict(self)
        d["window"] = str(self.window)
        d["features"] = ";".join(f"{k}={v}" for k, v in asdict(self.features).items())
        return [f"{k}={v}" for k, v in d.items()]


@dataclass
class Model:
    """Grid plus rules trained for one group of trajectories."""

    grid: RegionGrid
    rules: tuple


def train_model(train: Sequence[Trajectory], aoi: Region, cfg: ExperimentConfig, cell_size: float | None = None,
                hop: str | None = None) -> Model:
    grid = prepare_grid(train, cell_size or cfg.cell_size_deg, cfg.features, aoi)
    rules = learn(train, grid, cfg.bin_seconds, hop or cfg.hop, cfg.min_support, cfg.min_confidence, cfg.max_hops)
    return Model(grid, tuple(rules.rules))


@dataclass(frozen=True)
class Case:
    """One masked test trajectory turned into a query setup."""

    index: int
    agent: str
    prefix: Trajectory
    suffix: Trajectory
    bins: TimeBinning
    last_step: int
    first_hidden_step: int


def make_case(index: int, traj: Trajectory, strategy: str, cfg: ExperimentConfig) -> Case:
    pair = mask(traj, strategy, cfg.features)
    bins = TimeBinning(pair.prefix.points[0].timestamp, cfg.bin_seconds)
    return Case(index, traj.agent_id, pair.prefix, pair.suffix, bins,
                bins.timestep(pair.prefix.points[-1].timestamp), bins.timestep(pair.suffix.points[0].timestamp))


def query_horizon(case: Case, offset: int) -> int:
    """Horizon ``offset`` steps after the first hidden report's step minus one.

    With regular reporting this is ``last observed step + offset``; after a
    reporting gap it lands on the step where the vessel resurfaces.
    """
    return max(case.last_step + offset, case.first_hidden_step + offset - 1)


@dataclass
class EvalReport:
    suite: str
    rows: list = field(default_factory=list)
    aggregate: list = field(default_factory=list)
    skipped: list = field(default_factory=list)  # (agent, reason)
    header: list = field(default_factory=list)
    fit: dict = field(default_factory=dict)

    ROW_COLUMNS = ("suite", "method", "param", "value", "k", "group", "query", "agent", "horizon", "precision",
                   "recall", "f1", "area_km2", "recall_per_km2", "runtime_ms")
    AGG_COLUMNS = ("suite", "method", "param", "value", "k", "groups", "queries", "precision", "recall", "f1",
                   "area_km2", "recall_per_km2", "runtime_ms")

    def mean(self, metric: str, method: str = ABD, **match) -> float:
        rows = [a for a in self.aggregate if a["method"] == method and all(a[k] == v for k, v in match.items())]
        if not rows:
            raise KeyError(f"no aggregate rows for {method} {match}")
        return float(np.mean([a[metric] for a in rows]))

    def median(self, metric: str, method: str = ABD, **match) -> float:
        """Median of a per-query metric over matching rows."""
        vals = [r[metric] for r in self.rows if r["method"] == method and all(r[k] == v for k, v in match.items())]
        if not vals:
            raise KeyError(f"no rows for {method} {match}")
        return float(np.median(vals))

    def write(self, out_dir, prefix: str | None = None) -> tuple:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        stem = prefix or self.suite
        paths = (out_dir / f"{stem}_rows.csv", out_dir / f"{stem}_aggregate.csv")
        extra = [f"skipped_queries={len(self.skipped)}"] + [f"{k}={v!r}" for k, v in self.fit.items()]
        for path, cols, rows in ((paths[0], self.ROW_COLUMNS, self.rows),
                                 (paths[1], self.AGG_COLUMNS, self.aggregate)):
            with open(path, "w", newline="") as fh:
                for h in self.header + extra:
                    fh.write(f"# {h}\n")
                w = csv.writer(fh)
                w.writerow(cols)
                for r in rows:
                    w.writerow([_cell(r.get(c)) for c in cols])
        return paths


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _aggregate(suite: str, rows: list) -> list:
    """Mean per group, then the unweighted mean across groups."""
    keyed: dict = {}
    for r in rows:
        key = (r["method"], r["param"], r["value"], r["k"])
        keyed.setdefault(key, {}).setdefault(r["group"], []).append(r)
    out = []
    metrics = ("precision", "recall", "f1", "area_km2", "recall_per_km2", "runtime_ms")
    for key in sorted(keyed, key=lambda k: (k[0], k[1], str(k[2]), k[3])):
        groups = keyed[key]
        agg = dict(zip(("method", "param", "value", "k"), key))
        agg["suite"] = suite
        agg["groups"] = len(groups)
        agg["queries"] = sum(len(g) for g in groups.values())
        for m in metrics:
            per_group = [np.mean([r[m] for r in g if r.get(m) is not None]) for g in groups.values()
                         if any(r.get(m) is not None for r in g)]
            agg[m] = float(np.mean(per_group)) if per_group else None
        out.append(agg)
    return out


def linear_fit(xs, ys) -> dict:
    """Least-squares line with coefficient of determination."""
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float((resid**2).sum()) / ss_tot if ss_tot > 0 else 1.0
    return {"slope": float(slope), "intercept": float(intercept), "r2": r2}


class _Runner:
    def __init__(self, suite: str, train: Sequence[Trajectory], test: Sequence[Trajectory], cfg: ExperimentConfig):
        if not test:
            raise ValueError("empty test set")
        if not train:
            raise ValueError("empty training set")
        self.suite = suite
        self.cfg = cfg
        self.train = list(train)
        self.test = list(test)
        self.aoi = bounding_aoi(self.train + self.test, cfg.aoi_pad_deg)
        self.report = EvalReport(suite, header=[f"suite={suite}"] + cfg.header())
        self._groups = self._split_groups()

    def _split_groups(self) -> list:
        """``[(group id, train list, test indices)]``; one group unless clustering is on."""
        cfg = self.cfg
        if cfg.cluster_eps_km is None:
            return [(0, self.train, list(range(len(self.test))))]
        allt = self.train + self.test
        clustering = cluster_trajectories(allt, cfg.cluster_eps_km, cfg.cluster_min_pts)
        n = len(self.train)
        groups = []
        for gid, members in enumerate(clustering.clusters):
            tr = [allt[i] for i in members if i < n]
            te = [i - n for i in members if i >= n]
            if not te:
                continue
            if not tr:
                for i in te:
                    self.report.skipped.append((self.test[i].agent_id, f"cluster {gid} has no training data"))
                continue
            groups.append((gid, tr, te))
        for i in clustering.noise:
            if i >= n:
                self.report.skipped.append((self.test[i - n].agent_id, "noise trajectory"))
        return groups

    def cases(self, strategy: str | None = None) -> dict:
        out = {}
        for i, traj in enumerate(self.test):
            try:
                out[i] = make_case(i, traj, strategy or self.cfg.masking, self.cfg)
            except ValueError as e:
                self.report.skipped.append((traj.agent_id, str(e)))
        return out

    def query(self, case: Case, model: Model, horizon: int, k: int, filtered: bool = True):
        grid = model.grid
        speed = self.cfg.max_speed_kmh if filtered else None
        q = AbductionQuery(case.agent, case.prefix, model.rules, grid, case.bins, horizon, k, speed)
        try:
            return abduce_top_k(q, threads=self.cfg.threads)
        except ValueError:
            if speed is None:
                raise
            # nothing reachable: fall back to the whole candidate set
            return abduce_top_k(replace(q, max_speed_kmh=None), threads=self.cfg.threads)

    def evaluate(self, model: Model, gid: int, cases: dict, indices, param: str, value, ks, offset: int | None = None,
                 methods=(ABD, RND)):
        cfg = self.cfg
        offset = cfg.horizon_offset if offset is None else offset
        for i in indices:
            case = cases.get(i)
            if case is None:
                continue
            horizon = query_horizon(case, offset)
            truth = ground_truth_cells(case.suffix, model.grid, case.bins, horizon, cfg.window)
            if not truth:
                self.report.skipped.append((case.agent, f"no ground truth in window ({param}={value})"))
                continue
            base = dict(suite=self.suite, param=param, value=value, group=gid, query=i, agent=case.agent,
                        horizon=horizon)
            if ABD in methods:
                if not model.grid.candidate_ids:
                    self.report.skipped.append((case.agent, "no candidate regions"))
                    continue
                ranked = self.query(case, model, horizon, max(ks)).region_ids
                for k in ks:
                    got = ranked[:k]
                    if got:
                        self.report.rows.append({**base, "method": ABD, "k": k, **asdict(score(got, truth, model.grid))})
            if RND in methods:
                for k in ks:
                    if k <= len(model.grid):
                        s = random_baseline(model.grid, k, truth, cfg.seed, i, cfg.rnd_trials)
                        self.report.rows.append({**base, "method": RND, "k": k, **asdict(s)})

    def run_standard(self, param="-", value="-", ks=None, offset=None, cell_size=None, hop=None, strategy=None,
                     train_size=None, methods=(ABD, RND)):
        cases = self.cases(strategy)
        for gid, train, indices in self._groups:
            if train_size is not None:
                train = train[:train_size]
            model = train_model(train, self.aoi, self.cfg, cell_size, hop)
            self.evaluate(model, gid, cases, indices, param, value, ks or self.cfg.k_values, offset, methods)

    def run_runtime(self):
        """Wall-clock of one query per k, summed over test queries.

        Repeats run as outer sweeps over all k so a slow spell hits scattered
        k values, and each k keeps its fastest repeat.
        """
        cfg = self.cfg
        cases = self.cases()
        best: dict = {}
        for gid, train, indices in self._groups:
            model = train_model(train, self.aoi, cfg)
            for i in indices:
                case = cases.get(i)
                if case is None:
                    continue
                horizon = query_horizon(case, cfg.horizon_offset)
                for _ in range(cfg.runtime_repeats):
                    for k in cfg.runtime_k:
                        gc.collect()
                        gc.disable()
                        try:
                            t0 = time.perf_counter()
                            self.query(case, model, horizon, k, filtered=False)
                            ms = (time.perf_counter() - t0) * 1000.0
                        finally:
                            gc.enable()
                        key = (gid, i, k)
                        best[key] = min(best.get(key, math.inf), ms)
        for k in cfg.runtime_k:
            times = [v for (_, _, kk), v in best.items() if kk == k]
            if times:
                self.report.rows.append(dict(suite=self.suite, method=ABD, param="k", value=k, k=k, group=0,
                                             query="all", agent="all", runtime_ms=float(sum(times))))
        pts = [(r["k"], r["runtime_ms"]) for r in self.report.rows]
        if len(pts) >= 2:
            self.report.fit = linear_fit(*zip(*pts))


def run_experiment(suite: str, train: Sequence[Trajectory], test: Sequence[Trajectory],
                   config: ExperimentConfig = ExperimentConfig()) -> EvalReport:
    """Run one suite and return its per-query rows and aggregate table."""
    if suite not in SUITES:
        raise ValueError(f"unknown suite {suite!r}; choose from {', '.join(SUITES)}")
    r = _Runner(suite, train, test, config)
    cfg = config
    if suite in ("f1_vs_k", "recall_vs_area", "recall_per_km2_vs_k"):
        r.run_standard()
    elif suite == "f1_vs_horizon":
        for off in cfg.horizon_offsets:
            r.run_standard("horizon_offset", off, ks=(cfg.k,), offset=off)
    elif suite == "region_size_sweep":
        for size in cfg.cell_sizes:
            r.run_standard("cell_size_deg", size, cell_size=size)
    elif suite == "rule_type_ablation":
        for hop in (SINGLE, MULTI):
            r.run_standard("hop", hop, hop=hop, methods=(ABD,))
    elif suite == "masking_ablation":
        for strategy in STRATEGIES:
            r.run_standard("masking", strategy, ks=(cfg.k,), strategy=strategy, methods=(ABD,))
    elif suite == "data_efficiency":
        for size in cfg.train_sizes:
            r.run_standard("train_size", "all" if size is None else size, ks=(cfg.k,), train_size=size)
    elif suite == "runtime_vs_k":
        r.run_runtime()
    r.report.aggregate = _aggregate(suite, r.report.rows)
    if r.report.skipped:
        log.info("%s: skipped %d queries", suite, len(r.report.skipped))
    return r.report


def split_dataset(trajs: Sequence[Trajectory], test_fraction: float = 0.25, seed: int = 0) -> tuple:
    """Seeded shuffle split into (train, test)."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie in (0,1)")
    order = np.random.default_rng(seed).permutation(len(trajs))
    n_test = max(1, int(round(len(trajs) * test_fraction)))
    test = [trajs[i] for i in sorted(order[:n_test])]
    train = [trajs[i] for i in sorted(order[n_test:])]
    return train, test
