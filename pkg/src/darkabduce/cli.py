"""``darkabduce`` command line: learn, abduce, eval, synth and serve.

Settings resolve as built-in defaults, then ``--config`` file entries, then
command-line flags. Every output file starts with ``#`` lines holding the
resolved settings. Exit codes: 0 success, 1 user error, 2 internal error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from . import __version__
from .abduction import abduce_top_k
from .evaluation import SUITES, EvalWindow, ExperimentConfig, run_experiment, split_dataset
from .geospace import FeatureConfig, RegionGrid, prepare_grid, read_key_values, read_ports
from .learner import learn
from .logic import MULTI, SINGLE
from .stream import Server, ServeConfig, explanation_query, json_emitter, tcp_lines
from .synth import WORLD_TEMPLATE, generate, load_world
from .syntax import load_rules
from .trajectories import ingest_csv, write_csv

log = logging.getLogger("darkabduce")

OK, USER_ERROR, INTERNAL_ERROR = 0, 1, 2


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class RunConfig:
    grid_size: float = 0.025
    bin_seconds: int = 3600
    seed: int = 0
    threads: int = 1
    hop: str = SINGLE
    min_support: int = 2
    min_confidence: float = 0.05
    max_hops: int | None = None
    k: int = 10
    horizon: int | None = None
    horizon_offset: int = 1
    max_speed_kmh: float | None = None
    window: str = "at_horizon"
    window_width: int = 1
    rnd_trials: int = 3
    test_fraction: float = 0.25
    cluster_eps_km: float | None = None
    cluster_min_pts: int = 3
    relearn_every: int = 0
    ports: str | None = None
    features: FeatureConfig = field(default_factory=FeatureConfig)

    def header(self, command: str) -> list:
        out = [f"darkabduce {__version__} {command}"]
        for f in fields(self):
            if f.name == "features":
                feats = asdict(self.features)
                feats["port_locations"] = len(self.features.port_locations)
                out.extend(f"{k}={v}" for k, v in feats.items())
            else:
                out.append(f"{f.name}={getattr(self, f.name)}")
        return out


def _cast(f, value: str):
    kind = str(f.type)
    if value.lower() in ("none", ""):
        if "None" in kind:
            return None
        raise ValueError(f"{f.name} cannot be empty")
    if kind.startswith("int"):
        return int(value)
    if kind.startswith("float"):
        return float(value)
    return value


def resolve_config(args) -> RunConfig:
    """Merge defaults, the optional config file and explicit flags."""
    values: dict = {}
    feature_values: dict = {}
    run_fields = {f.name: f for f in fields(RunConfig) if f.name != "features"}
    feature_names = {f.name for f in fields(FeatureConfig)}
    if args.config:
        for key, raw in read_key_values(args.config).items():
            if key in run_fields:
                values[key] = _cast(run_fields[key], raw)
            elif key in feature_names:
                feature_values[key] = raw
            else:
                raise UsageError(f"{args.config}: unknown setting {key!r}")
    for name, f in run_fields.items():
        flag = getattr(args, name, None)
        if flag is not None:
            values[name] = flag
    if values.get("hop", SINGLE) not in (SINGLE, MULTI):
        raise UsageError(f"hop must be {SINGLE} or {MULTI}")
    ports = read_ports(values["ports"]) if values.get("ports") else ()
    return RunConfig(**values, features=FeatureConfig.from_mapping(feature_values, ports))


def _read_trajectories(path):
    report = ingest_csv(path)
    if not report.trajectories:
        raise UsageError(f"{path}: no usable trajectory rows")
    return report.trajectories


def cmd_learn(args, cfg: RunConfig) -> int:
    train = _read_trajectories(args.train)
    grid = prepare_grid(train, cfg.grid_size, cfg.features)
    rules = learn(train, grid, cfg.bin_seconds, cfg.hop, cfg.min_support, cfg.min_confidence, cfg.max_hops)
    header = cfg.header("learn") + [f"train={Path(args.train).name}", f"trajectories={len(train)}"]
    rules.write(args.rules, args.provenance, header)
    grid.to_csv(args.grid, header)
    log.info("learned %d rules over %d candidate cells", len(rules), len(grid.candidate_ids))
    return OK


def cmd_abduce(args, cfg: RunConfig) -> int:
    rules = load_rules(args.rules)
    grid = RegionGrid.from_csv(args.grid)
    trajs = _read_trajectories(args.prefix)
    if args.agent is not None:
        trajs = [t for t in trajs if t.agent_id == args.agent]
        if not trajs:
            raise UsageError(f"agent {args.agent!r} not in {args.prefix}")
    elif len(trajs) > 1:
        raise UsageError(f"{args.prefix} holds {len(trajs)} agents; pick one with --agent")
    prefix = trajs[0]
    serve_cfg = _serve_config(cfg)
    q = explanation_query(prefix.agent_id, prefix, rules, grid, serve_cfg)
    if cfg.horizon is not None:
        q = replace(q, horizon=cfg.horizon)
    ex = abduce_top_k(q, threads=cfg.threads, score_inconsistent_as_zero=args.score_inconsistent_as_zero)
    header = cfg.header("abduce") + [f"agent={q.agent}", f"horizon={q.horizon}",
                                     f"origin={prefix.points[0].timestamp!r}",
                                     f"discarded={'|'.join(ex.discarded)}"]
    ex.write_csv(args.out, grid, header)
    log.info("%s: %d regions at horizon %d", q.agent, len(ex.regions), q.horizon)
    return OK


def _experiment_config(cfg: RunConfig) -> ExperimentConfig:
    window = EvalWindow("full_suffix", 0) if cfg.window == "full_suffix" else EvalWindow(cfg.window, cfg.window_width)
    base = ExperimentConfig()
    return replace(
        base, cell_size_deg=cfg.grid_size, bin_seconds=cfg.bin_seconds, hop=cfg.hop, min_support=cfg.min_support,
        min_confidence=cfg.min_confidence, max_hops=cfg.max_hops, k=cfg.k, horizon_offset=cfg.horizon_offset,
        window=window, max_speed_kmh=cfg.max_speed_kmh if cfg.max_speed_kmh is not None else base.max_speed_kmh,
        rnd_trials=cfg.rnd_trials, cluster_eps_km=cfg.cluster_eps_km, cluster_min_pts=cfg.cluster_min_pts,
        threads=cfg.threads, seed=cfg.seed, features=cfg.features, aoi_pad_deg=cfg.grid_size,
    )


def cmd_eval(args, cfg: RunConfig) -> int:
    if args.suite not in SUITES:
        raise UsageError(f"unknown suite {args.suite!r}; choose from {', '.join(SUITES)}")
    data = _read_trajectories(args.data)
    if len(data) < 2:
        raise UsageError("evaluation needs at least two trajectories")
    train, test = split_dataset(data, cfg.test_fraction, cfg.seed)
    exp = _experiment_config(cfg)
    if args.k_max is not None:
        exp = replace(exp, k_values=tuple(range(1, args.k_max + 1)))
    report = run_experiment(args.suite, train, test, exp)
    report.header = cfg.header("eval") + [f"data={Path(args.data).name}", f"train={len(train)}",
                                          f"test={len(test)}"] + report.header
    rows, agg = report.write(args.out)
    log.info("wrote %s and %s (%d skipped queries)", rows, agg, len(report.skipped))
    return OK


def cmd_synth(args, cfg: RunConfig) -> int:
    if args.print_template:
        sys.stdout.write(WORLD_TEMPLATE)
        return OK
    if args.world is None or args.out is None:
        raise UsageError("synth needs WORLD and --out (or --print-template)")
    world = load_world(args.world)
    if args.seed is not None:
        world = replace(world, seed=args.seed)
    bin_seconds = args.bin_seconds if args.bin_seconds is not None else args.synth_bin_seconds
    trajs = generate(world, args.vessels, args.points, bin_seconds)
    header = [f"darkabduce {__version__} synth", f"world={Path(args.world).name}", f"seed={world.seed}",
              f"vessels={args.vessels}", f"points={args.points}", f"bin_seconds={bin_seconds}"]
    write_csv(args.out, trajs, header)
    log.info("wrote %d trajectories to %s", len(trajs), args.out)
    return OK


def _serve_config(cfg: RunConfig) -> ServeConfig:
    return ServeConfig(
        k=cfg.k, horizon_offset=cfg.horizon_offset, bin_seconds=cfg.bin_seconds, ais_gap=cfg.features.ais_gap,
        relearn_every=cfg.relearn_every, max_speed_kmh=cfg.max_speed_kmh, threads=cfg.threads, hop=cfg.hop,
        min_support=cfg.min_support, min_confidence=cfg.min_confidence, max_hops=cfg.max_hops,
    )


def cmd_serve(args, cfg: RunConfig) -> int:
    rules = load_rules(args.rules)
    grid = RegionGrid.from_csv(args.grid)
    out = open(args.out, "w") if args.out else sys.stdout
    try:
        server = Server(rules, grid, _serve_config(cfg), json_emitter(out))
        if args.listen:
            host, _, port = args.listen.rpartition(":")
            lines = tcp_lines(host or "127.0.0.1", int(port))
        else:
            lines = sys.stdin
        stats = server.run(lines)
    finally:
        if out is not sys.stdout:
            out.close()
    log.info("serve: %s", stats)
    return OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    g = common.add_argument_group("global options")
    g.add_argument("--config", metavar="PATH", help="key = value settings file")
    g.add_argument("--seed", type=int)
    g.add_argument("--threads", type=int)
    g.add_argument("--grid-size", dest="grid_size", type=float, metavar="DEG")
    g.add_argument("--bin-seconds", dest="bin_seconds", type=int, metavar="S")
    g.add_argument("-v", "--verbose", action="count", default=0)

    p = _Parser(prog="darkabduce", description="Abductive search for vessels that stop reporting.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def learner_flags(sp):
        sp.add_argument("--hop", choices=(SINGLE, MULTI))
        sp.add_argument("--min-support", dest="min_support", type=int)
        sp.add_argument("--min-confidence", dest="min_confidence", type=float)
        sp.add_argument("--max-hops", dest="max_hops", type=int)
        sp.add_argument("--ports", metavar="CSV", help="port locations with lon,lat columns")

    sp = sub.add_parser("learn", parents=[common], help="build the labeled grid and learn rules")
    sp.add_argument("train")
    sp.add_argument("--rules", default="rules.txt")
    sp.add_argument("--provenance", default="provenance.csv")
    sp.add_argument("--grid", default="grid.csv")
    learner_flags(sp)
    sp.set_defaults(func=cmd_learn)

    sp = sub.add_parser("abduce", parents=[common], help="top-k regions for one observed prefix")
    sp.add_argument("rules")
    sp.add_argument("prefix")
    sp.add_argument("--grid", required=True)
    sp.add_argument("--agent")
    sp.add_argument("--k", type=int)
    sp.add_argument("--horizon", type=int, help="absolute timestep counted from the first prefix report")
    sp.add_argument("--horizon-offset", dest="horizon_offset", type=int)
    sp.add_argument("--max-speed-kmh", dest="max_speed_kmh", type=float)
    sp.add_argument("--score-inconsistent-as-zero", action="store_true")
    sp.add_argument("--out", default="regions.csv")
    sp.set_defaults(func=cmd_abduce)

    sp = sub.add_parser("eval", parents=[common], help="run one evaluation suite")
    sp.add_argument("suite", help=", ".join(SUITES))
    sp.add_argument("data")
    sp.add_argument("--out", default="report")
    sp.add_argument("--k", type=int)
    sp.add_argument("--k-max", dest="k_max", type=int)
    sp.add_argument("--horizon-offset", dest="horizon_offset", type=int)
    sp.add_argument("--max-speed-kmh", dest="max_speed_kmh", type=float)
    sp.add_argument("--window", choices=("at_horizon", "full_suffix"))
    sp.add_argument("--window-width", dest="window_width", type=int)
    sp.add_argument("--test-fraction", dest="test_fraction", type=float)
    sp.add_argument("--cluster-eps-km", dest="cluster_eps_km", type=float)
    sp.add_argument("--cluster-min-pts", dest="cluster_min_pts", type=int)
    learner_flags(sp)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("synth", parents=[common], help="generate synthetic trajectories")
    sp.add_argument("world", nargs="?")
    sp.add_argument("--out")
    sp.add_argument("--vessels", type=int, default=100)
    sp.add_argument("--points", type=int, default=40)
    sp.add_argument("--print-template", action="store_true", help="print an example world file and exit")
    sp.set_defaults(func=cmd_synth, synth_bin_seconds=600)

    sp = sub.add_parser("serve", parents=[common], help="watch a line feed and query agents that go dark")
    sp.add_argument("rules")
    sp.add_argument("--grid", required=True)
    sp.add_argument("--listen", metavar="HOST:PORT", help="accept one TCP connection instead of reading stdin")
    sp.add_argument("--k", type=int)
    sp.add_argument("--horizon-offset", dest="horizon_offset", type=int)
    sp.add_argument("--relearn-every", dest="relearn_every", type=int, metavar="N")
    sp.add_argument("--max-speed-kmh", dest="max_speed_kmh", type=float)
    sp.add_argument("--out", help="write JSON lines here instead of stdout")
    learner_flags(sp)
    sp.set_defaults(func=cmd_serve)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return USER_ERROR
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
        return args.func(args, cfg)
    except (UsageError, ValueError, KeyError, FileNotFoundError, IsADirectoryError) as e:
        print(f"error: {e}", file=sys.stderr)
        return USER_ERROR
    except Exception as e:  # noqa: BLE001
        log.exception("internal error: %s", e)
        return INTERNAL_ERROR


if __name__ == "__main__":
    sys.exit(main())
