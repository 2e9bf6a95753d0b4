"""``coverpath`` command line: gen, train, eval, bench, plot.

Configuration files hold one ``section.key=value`` per line (``#`` starts a
comment). Sections map onto the library's config dataclasses:

    env      EnvConfig          agent    SacConfig and TrunkConfig
    planner  PlannerConfig      map      MapSpec
    sweep    episodes / runs / algorithm for ``bench --sweep-weights``

Command-line flags and ``--set section.key=value`` override file values.
Every command that writes a directory drops the fully resolved configuration
into it as ``config.txt``, in the same format, so a run can be repeated with
``--config <dir>/config.txt``.

Exit codes: 0 success, 2 usage or configuration error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import ast
import csv
import dataclasses
import os
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from .baselines import PlannerConfig, evaluate_planner
from .gridworld import ConfigurationError, EnvConfig, GridMap, GridWorld, format_map, load_map, parse_map
from .mapgen import GenerationError, MapSpec, builtin_map, builtin_map_text, generate
from .metrics import EpisodeStats, aggregate, coverage_rate, energy_efficiency
from .nn.layers import ShapeError
from .nn.network import TrunkConfig
from .nn.tensor import NumericError
from .report import line_plot_svg, moving_average
from .sac import GREEDY, LOG_FIELDS, SacAgent, SacConfig, read_log, run_episode, train, write_log

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3

# the six reward-weight settings of the sensitivity study, default included
SWEEP_WEIGHTS = (
    (0.5, 0.5, 0.7),
    (1.0, 0.3, 0.7),
    (1.0, 0.5, 0.5),
    (1.0, 0.5, 0.7),
    (1.0, 0.7, 0.7),
    (1.2, 0.5, 0.7),
)


@dataclasses.dataclass(frozen=True)
class SweepConfig:
    episodes: int = 200
    runs: int = 5
    algorithm: str = "sac"

    def __post_init__(self):
        if self.episodes < 1 or self.runs < 1:
            raise ConfigurationError("sweep.episodes and sweep.runs must be >= 1")
        if self.algorithm not in ("sac", "rrt", "aco", "pso"):
            raise ConfigurationError(f"unknown sweep.algorithm {self.algorithm!r}")


SECTIONS = {
    "env": (EnvConfig,),
    "agent": (SacConfig, TrunkConfig),
    "planner": (PlannerConfig,),
    "map": (MapSpec,),
    "sweep": (SweepConfig,),
}


class UsageFailure(Exception):
    """Raised for anything that should end the process with exit code 2."""


# ---------------------------------------------------------------------------
# config documents


def _field_owner(section: str, key: str):
    for cls in SECTIONS[section]:
        if key in {f.name for f in dataclasses.fields(cls)}:
            return cls
    return None


def _coerce(raw: str, default):
    try:
        value = ast.literal_eval(raw)
    except (ValueError, SyntaxError):
        value = raw
    if isinstance(default, bool) and isinstance(value, str):
        if value.lower() in ("true", "false"):
            return value.lower() == "true"
    if isinstance(default, float) and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if hasattr(default, "value") and isinstance(value, str):  # enums
        return type(default)(value)
    return value


def parse_overrides(lines: Sequence[str], origin: str = "<config>") -> Dict[str, Dict[str, object]]:
    """``section.key=value`` lines into {section: {key: value}}; unknown keys rejected."""
    out: Dict[str, Dict[str, object]] = {}
    for lineno, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line or "." not in line.split("=", 1)[0]:
            raise UsageFailure(f"{origin}:{lineno}: expected 'section.key=value', got {line!r}")
        lhs, raw = line.split("=", 1)
        section, key = (s.strip() for s in lhs.split(".", 1))
        if section not in SECTIONS:
            raise UsageFailure(f"{origin}:{lineno}: unknown section {section!r}")
        cls = _field_owner(section, key)
        if cls is None:
            raise UsageFailure(f"{origin}:{lineno}: unknown key {section}.{key}")
        default = {f.name: f.default for f in dataclasses.fields(cls)}[key]
        out.setdefault(section, {})[key] = _coerce(raw.strip(), default)
    return out


@dataclasses.dataclass
class RunConfig:
    env: EnvConfig
    agent: SacConfig
    network: TrunkConfig
    planner: PlannerConfig
    map: MapSpec
    sweep: SweepConfig

    @classmethod
    def build(cls, values: Dict[str, Dict[str, object]]) -> "RunConfig":
        def make(section, klass):
            mine = {k: v for k, v in values.get(section, {}).items() if _field_owner(section, k) is klass}
            try:
                return klass(**mine)
            except (TypeError, ValueError) as exc:
                raise UsageFailure(f"invalid {section} configuration: {exc}") from exc

        return cls(
            env=make("env", EnvConfig),
            agent=make("agent", SacConfig),
            network=make("agent", TrunkConfig),
            planner=make("planner", PlannerConfig),
            map=make("map", MapSpec),
            sweep=make("sweep", SweepConfig),
        )

    def lines(self) -> List[str]:
        out = []
        pairs = [
            ("env", self.env),
            ("agent", self.agent),
            ("agent", self.network),
            ("planner", self.planner),
            ("map", self.map),
            ("sweep", self.sweep),
        ]
        for section, obj in pairs:
            for f in dataclasses.fields(obj):
                v = getattr(obj, f.name)
                if hasattr(v, "value"):
                    v = v.value
                out.append(f"{section}.{f.name}={v!r}" if isinstance(v, str) else f"{section}.{f.name}={v}")
        return out

    def write(self, directory: Path, extra: Optional[Dict[str, object]] = None) -> Path:
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / "config.txt"
        text = [f"# coverpath {__version__}"]
        for k, v in (extra or {}).items():
            text.append(f"# {k}: {v}")
        path.write_text("\n".join(text + self.lines()) + "\n")
        return path


def load_run_config(args) -> RunConfig:
    values: Dict[str, Dict[str, object]] = {}
    if getattr(args, "config", None):
        p = Path(args.config)
        if not p.exists():
            raise UsageFailure(f"config file not found: {p}")
        for section, kv in parse_overrides(p.read_text().splitlines(), str(p)).items():
            values.setdefault(section, {}).update(kv)
    for section, kv in parse_overrides(getattr(args, "set", None) or [], "--set").items():
        values.setdefault(section, {}).update(kv)
    return RunConfig.build(values)


def default_seed() -> int:
    raw = os.environ.get("COVERPATH_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageFailure(f"COVERPATH_SEED must be an integer, got {raw!r}") from None


def resolve_map(ref: str) -> GridMap:
    """A map file path, or ``builtin:K`` for a shipped map."""
    if ref.startswith("builtin:"):
        try:
            return builtin_map(int(ref.split(":", 1)[1]))
        except ValueError as exc:
            raise UsageFailure(str(exc)) from exc
    p = Path(ref)
    if not p.exists():
        raise UsageFailure(f"map file not found: {p}")
    return load_map(p)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


# ---------------------------------------------------------------------------
# commands


def cmd_gen(args) -> int:
    rc = load_run_config(args)
    if args.builtin is not None:
        text = builtin_map_text(args.builtin)
    else:
        spec_kw = dataclasses.asdict(rc.map)
        for key, flag in (("size", "size"), ("density", "density"), ("stations", "stations"), ("layout", "layout")):
            if getattr(args, flag) is not None:
                spec_kw[key] = getattr(args, flag)
        spec_kw["seed"] = args.seed
        try:
            spec = MapSpec(**spec_kw)
        except (ValueError, ConfigurationError) as exc:
            raise UsageFailure(f"invalid map spec: {exc}") from exc
        text = format_map(generate(spec))
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text)
    print(out)
    return EXIT_OK


def _make_agent(rc: RunConfig, grid: GridMap, seed: int) -> SacAgent:
    net = rc.network
    if net.grid_size != grid.size:
        net = dataclasses.replace(net, grid_size=grid.size)
    return SacAgent(net, rc.agent, seed=seed)


def cmd_train(args) -> int:
    rc = load_run_config(args)
    grid = resolve_map(args.map)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / "training.csv"
    if args.resume:
        ck = Path(args.resume)
        if not ck.exists():
            raise UsageFailure(f"checkpoint not found: {ck}")
        agent, meta = SacAgent.load(ck)
        if agent.trunk.grid_size != grid.size:
            raise UsageFailure(f"checkpoint expects a {agent.trunk.grid_size}x{agent.trunk.grid_size} map, got {grid.size}")
        start = int(meta.get("episode", 0)) + 1
        rc = dataclasses.replace(rc, agent=agent.config, network=agent.trunk)
        # drop rows past the checkpoint so numbering continues without gaps or repeats
        if log_path.exists():
            rows = log_path.read_text().splitlines()
            keep = [rows[0]] + [r for r in rows[1:] if int(r.split(",", 1)[0]) < start]
            log_path.write_text("\n".join(keep) + "\n")
        else:
            write_log([], log_path)
    else:
        agent = _make_agent(rc, grid, args.seed)
        start = 1
        write_log([], log_path)
    rc.write(out, {"command": "train", "map": args.map, "episodes": args.episodes, "seed": args.seed})
    (out / "map.map").write_text(format_map(grid))
    env = GridWorld(grid, rc.env)
    every = args.checkpoint_every

    def on_episode(rec, ag):
        write_log([rec], log_path, append=True)
        if every and rec.episode % every == 0:
            ag.save(out / f"ckpt_{rec.episode:06d}.npz", episode=rec.episode, map=args.map)
        if args.verbose and rec.episode % max(1, args.verbose) == 0:
            print(f"episode {rec.episode}: reward {rec.reward:.1f} coverage {rec.coverage_pct:.1f}%", file=sys.stderr)

    last = start + args.episodes - 1
    train(env, agent, args.episodes, [on_episode], start_episode=start, diagnostic_path=out / "diverged.npz")
    agent.save(out / "final.npz", episode=last, map=args.map)
    print(out / "final.npz")
    return EXIT_OK


EVAL_FIELDS = (
    "run",
    "seed",
    "coverage_pct",
    "violations",
    "energy_consumed",
    "energy_efficiency",
    "total_reward",
    "steps",
    "failed",
    "done_reason",
)
_AGG_KEYS = {
    "coverage_pct": "coverage_pct",
    "violations": "violations",
    "energy_consumed": "energy_consumed",
    "energy_efficiency": "energy_efficiency",
    "total_reward": "total_reward",
    "steps": "steps",
    "failed": "failed",
}


def _stats_row(run, seed, s: EpisodeStats) -> List[str]:
    return [
        str(run),
        str(seed),
        _fmt(coverage_rate(s)),
        str(s.violation_steps),
        _fmt(float(s.energy_consumed)),
        _fmt(energy_efficiency(s)),
        _fmt(float(s.total_reward)),
        str(s.steps),
        str(int(s.failed)),
        s.done_reason,
    ]


def write_eval_csv(path: Path, seeds: Sequence[int], runs: Sequence[EpisodeStats]) -> Dict:
    agg = aggregate(runs)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(EVAL_FIELDS) + [f"{k}_std" for k in _AGG_KEYS])
        for i, (seed, s) in enumerate(zip(seeds, runs)):
            w.writerow(_stats_row(i, seed, s) + [""] * len(_AGG_KEYS))
        row = ["aggregate", ""]
        for k in EVAL_FIELDS[2:-1]:
            row.append(_fmt(agg[_AGG_KEYS[k]].mean) if _AGG_KEYS[k] in agg else "")
        row.append("")
        row += [_fmt(agg[v].std) if v in agg else "" for v in _AGG_KEYS.values()]
        w.writerow(row)
    return agg


def _load_agent(path: str, grid: GridMap) -> SacAgent:
    p = Path(path)
    if not p.exists():
        raise UsageFailure(f"checkpoint not found: {p}")
    agent, _ = SacAgent.load(p)
    if agent.trunk.grid_size != grid.size:
        raise UsageFailure(
            f"checkpoint expects a {agent.trunk.grid_size}x{agent.trunk.grid_size} map, got {grid.size}x{grid.size}"
        )
    return agent


def sac_eval_runs(agent: SacAgent, grid: GridMap, env_config: EnvConfig, runs: int, seed: int):
    env = GridWorld(grid, env_config)
    seeds = [seed + i for i in range(runs)]
    return seeds, [run_episode(env, agent, GREEDY, seed=s)[0] for s in seeds]


def cmd_eval(args) -> int:
    rc = load_run_config(args)
    grid = resolve_map(args.map)
    agent = _load_agent(args.checkpoint, grid)
    if args.runs < 1:
        raise UsageFailure("--runs must be >= 1")
    seeds, runs = sac_eval_runs(agent, grid, rc.env, args.runs, args.seed)
    out = Path(args.out)
    rc.write(out, {"command": "eval", "map": args.map, "checkpoint": args.checkpoint, "runs": args.runs, "seed": args.seed})
    agg = write_eval_csv(out / "eval.csv", seeds, runs)
    print(f"coverage {agg['coverage_pct']}  violations {agg['violations']}")
    return EXIT_OK


BENCH_FIELDS = (
    "map",
    "algorithm",
    "runs",
    "coverage_mean",
    "coverage_std",
    "violations_mean",
    "violations_std",
    "energy_efficiency_mean",
    "energy_efficiency_std",
    "energy_consumed_mean",
    "failed",
)


def _bench_row(map_name, algo, agg, n) -> List[str]:
    eff = agg.get("energy_efficiency")
    return [
        map_name,
        algo,
        str(n),
        _fmt(agg["coverage_pct"].mean),
        _fmt(agg["coverage_pct"].std),
        _fmt(agg["violations"].mean),
        _fmt(agg["violations"].std),
        _fmt(eff.mean if eff else None),
        _fmt(eff.std if eff else None),
        _fmt(agg["energy_consumed"].mean),
        _fmt(agg["failed"].mean * agg["failed"].n),
    ]


def run_algorithm(algo, grid, rc: RunConfig, env_config, runs, seed, checkpoint=None):
    if algo == "sac":
        if checkpoint is None:
            raise UsageFailure("algorithm 'sac' needs a checkpoint for every map")
        agent = _load_agent(checkpoint, grid)
        _, stats = sac_eval_runs(agent, grid, env_config, runs, seed)
        return aggregate(stats), stats
    cfg = dataclasses.replace(rc.planner, algorithm=algo, seed=seed)
    return evaluate_planner(grid, cfg, runs, env_config)


def _sweep(args, rc: RunConfig, maps, out: Path) -> None:
    rows = []
    for p1, p2, p3 in SWEEP_WEIGHTS:
        env_cfg = dataclasses.replace(rc.env, psi1=p1, psi2=p2, psi3=p3)
        for name, grid in maps:
            if rc.sweep.algorithm == "sac":
                agent = _make_agent(rc, grid, args.seed)
                train(GridWorld(grid, env_cfg), agent, rc.sweep.episodes)
                _, stats = sac_eval_runs(agent, grid, env_cfg, rc.sweep.runs, args.seed)
                agg = aggregate(stats)
            else:
                agg, _ = run_algorithm(rc.sweep.algorithm, grid, rc, env_cfg, rc.sweep.runs, args.seed)
            rows.append([repr(p1), repr(p2), repr(p3)] + _bench_row(name, rc.sweep.algorithm, agg, rc.sweep.runs))
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["psi1", "psi2", "psi3"] + list(BENCH_FIELDS))
        w.writerows(rows)


def cmd_bench(args) -> int:
    rc = load_run_config(args)
    maps = [(ref, resolve_map(ref)) for ref in args.maps]
    algos = [a.lower() for a in args.algorithms]
    for a in algos:
        if a not in ("rrt", "aco", "pso", "sac"):
            raise UsageFailure(f"unknown algorithm {a!r}")
    checkpoints = args.checkpoints or []
    if "sac" in algos and len(checkpoints) not in (1, len(maps)):
        raise UsageFailure("give one --checkpoints entry per map (or a single one for all maps)")
    for t in args.training_csv or []:
        if not Path(t).exists():
            raise UsageFailure(f"training CSV not found: {t}")
    if "sac" in algos and not args.sweep_weights:
        # fail before any long planner runs
        for i, (_, grid) in enumerate(maps):
            _load_agent(checkpoints[i] if len(checkpoints) == len(maps) else checkpoints[0], grid)
    out = Path(args.out)
    rc.write(out, {"command": "bench", "maps": " ".join(args.maps), "algorithms": " ".join(algos), "runs": args.runs, "seed": args.seed})
    if args.sweep_weights:
        _sweep(args, rc, maps, out)
    else:
        rows = []
        for i, (name, grid) in enumerate(maps):
            for algo in algos:
                ck = None
                if algo == "sac":
                    ck = checkpoints[i] if len(checkpoints) == len(maps) else checkpoints[0]
                agg, _ = run_algorithm(algo, grid, rc, rc.env, args.runs, args.seed, ck)
                rows.append(_bench_row(name, algo, agg, args.runs))
        with open(out / "bench.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(BENCH_FIELDS)
            w.writerows(rows)
    if args.training_csv:
        write_training_plots(args.training_csv, out, args.smooth)
    print(out)
    return EXIT_OK


def write_training_plots(csvs: Sequence[str], out: Path, smooth: int = 20) -> List[Path]:
    out.mkdir(parents=True, exist_ok=True)
    logs = {Path(p).parent.name or Path(p).stem: read_log(p) for p in csvs}
    written = []
    for column, ylabel, fname in (("reward", "Reward", "rewards.svg"), ("coverage_pct", "Coverage (%)", "coverage.svg")):
        series = {}
        for label, rows in logs.items():
            x = [r["episode"] for r in rows]
            series[label] = (x, moving_average([r[column] for r in rows], smooth))
        path = out / fname
        path.write_text(line_plot_svg(series, title=f"{ylabel} per episode", xlabel="Episode", ylabel=ylabel))
        written.append(path)
    return written


def cmd_plot(args) -> int:
    for t in args.training_csv:
        p = Path(t)
        if not p.exists():
            raise UsageFailure(f"training CSV not found: {p}")
        with open(p) as fh:
            header = fh.readline().strip().split(",")
        if tuple(header) != LOG_FIELDS:
            raise UsageFailure(f"{p} is not a training log")
    for path in write_training_plots(args.training_csv, Path(args.out), args.smooth):
        print(path)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="coverpath", description="Energy-aware coverage path planning.")
    parser.add_argument("--version", action="version", version=f"coverpath {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=True):
        p.add_argument("--config", help="file of section.key=value lines")
        p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override one config value")
        if seed:
            p.add_argument("--seed", type=int, default=None, help="default: $COVERPATH_SEED or 0")

    g = sub.add_parser("gen", help="generate a map file")
    common(g)
    g.add_argument("--size", type=int)
    g.add_argument("--density", type=float)
    g.add_argument("--stations", type=int)
    g.add_argument("--layout", choices=["strategic", "random", "path_constrained", "sparse"])
    g.add_argument("--builtin", type=int, choices=[1, 2, 3], help="copy a shipped map instead")
    g.add_argument("-o", "--output", required=True)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train a SAC agent")
    common(t)
    t.add_argument("--map", required=True, help="map file or builtin:K")
    t.add_argument("--episodes", type=int, required=True)
    t.add_argument("--out", default="runs/train")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--checkpoint-every", type=int, default=100)
    t.add_argument("--verbose", type=int, default=0, help="progress line every K episodes")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="greedy evaluation of a checkpoint")
    common(e)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--map", required=True)
    e.add_argument("--runs", type=int, default=20)
    e.add_argument("--out", default="runs/eval")
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench", help="compare algorithms across maps")
    common(b)
    b.add_argument("--maps", nargs="+", default=["builtin:1", "builtin:2", "builtin:3"])
    b.add_argument("--algorithms", nargs="+", default=["rrt", "aco", "pso"])
    b.add_argument("--checkpoints", nargs="+", help="SAC checkpoints, one per map")
    b.add_argument("--runs", type=int, default=20)
    b.add_argument("--training-csv", nargs="+", help="training logs to plot alongside")
    b.add_argument("--smooth", type=int, default=20)
    b.add_argument("--sweep-weights", action="store_true", help="run the six reward-weight settings instead")
    b.add_argument("--out", default="runs/bench")
    b.set_defaults(func=cmd_bench)

    p = sub.add_parser("plot", help="SVG reward and coverage curves from training logs")
    p.add_argument("training_csv", nargs="+")
    p.add_argument("--smooth", type=int, default=20)
    p.add_argument("--out", default="runs/plots")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse uses 2 for usage errors already
        return int(exc.code or 0)
    try:
        if getattr(args, "seed", 0) is None:
            args.seed = default_seed()
        return args.func(args)
    except (UsageFailure, ConfigurationError, GenerationError, ShapeError, ValueError) as exc:
        print(f"coverpath {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"coverpath {args.command}: numeric failure: {exc}", file=sys.stderr)
        ck = getattr(exc, "checkpoint", None)
        if ck:
            print(f"diagnostic checkpoint written to {ck}", file=sys.stderr)
        return EXIT_NUMERIC


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
