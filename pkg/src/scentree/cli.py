"""Operator surface: config files, price CSVs, experiments, exports.

One JSON config file fully determines a run; all randomness flows from the
seeds it names (or the --seed override). Exit codes: 0 success, 1 usage or
configuration error, 2 data error, 3 solver failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from dataclasses import dataclass, replace
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

from .environment import BatteryParams
from .errors import (
    InvalidInputError,
    PriceDataError,
    ScentreeError,
    SolverFailureError,
)
from .harness import PolicyKind, aggregate_report, run_episode
from .optimizer import OptimizerConfig, formulate_tree_lp, solve_lp
from .samplers import (
    BootstrapSampler,
    ConstantSampler,
    ExternalSampler,
    GaussianARParams,
    GaussianARSampler,
    RegimeMixtureParams,
    RegimeMixtureSampler,
    ReplaySampler,
    SamplerRequest,
    TrajectorySampler,
)
from .seeding import mix_seed
from .tree import TreeConfig, build_tree, export_dot, tree_to_json


class UsageError(ScentreeError):
    """Bad flags or malformed configuration."""


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class RunConfig:
    """Parsed run configuration plus the normalized document it came from."""

    tree: TreeConfig
    battery: BatteryParams
    optimizer: OptimizerConfig
    sampler_spec: dict
    policies: list[dict]
    data_path: str | None
    trading_column: str | None
    output_dir: str
    seeds: list[int]
    soc0: float | None
    start: int | None
    raw: dict

    @classmethod
    def from_dict(cls, doc: dict, base_dir: Path | None = None) -> "RunConfig":
        try:
            tree = TreeConfig(**doc["tree"])
            battery = BatteryParams(**doc["battery"])
            optimizer = OptimizerConfig(**doc.get("optimizer", {}))
        except KeyError as exc:
            raise UsageError(f"config missing required section: {exc}") from exc
        except TypeError as exc:
            raise UsageError(f"config field error: {exc}") from exc
        sampler_spec = doc.get("sampler", {"kind": "replay"})
        policies = [
            {"kind": p} if isinstance(p, str) else dict(p)
            for p in doc.get("policies", ["dst_smpc"])
        ]
        data = doc.get("data", {})
        data_path = data.get("path")
        if data_path is not None and base_dir is not None:
            path = Path(data_path)
            if not path.is_absolute():
                data_path = str(base_dir / path)
        return cls(
            tree=tree,
            battery=battery,
            optimizer=optimizer,
            sampler_spec=sampler_spec,
            policies=policies,
            data_path=data_path,
            trading_column=data.get("trading_column"),
            output_dir=doc.get("output", "out"),
            seeds=[int(s) for s in doc.get("seeds", [0])],
            soc0=doc.get("soc0"),
            start=doc.get("start"),
            raw=doc,
        )

    def to_dict(self) -> dict:
        """Normalized document; parse -> serialize -> parse is the identity."""
        doc = {
            "tree": {
                "depth": self.tree.depth,
                "stage_horizon": self.tree.stage_horizon,
                "samples_per_node": self.tree.samples_per_node,
                "clusters": self.tree.clusters,
                "keep_children": self.tree.keep_children,
                "series_dim": self.tree.series_dim,
                "master_seed": self.tree.master_seed,
            },
            "battery": {
                "capacity": self.battery.capacity,
                "soc_min": self.battery.soc_min,
                "soc_max": self.battery.soc_max,
                "p_max": self.battery.p_max,
                "eta_c": self.battery.eta_c,
                "eta_d": self.battery.eta_d,
                "c_deg": self.battery.c_deg,
                "dt": self.battery.dt,
            },
            "optimizer": {
                "discount": self.optimizer.discount,
                "solver_tolerance": self.optimizer.solver_tolerance,
                "terminal_value_rate": self.optimizer.terminal_value_rate,
            },
            "sampler": self.sampler_spec,
            "policies": self.policies,
            "data": {"path": self.data_path, "trading_column": self.trading_column},
            "output": self.output_dir,
            "seeds": self.seeds,
            "soc0": self.soc0,
            "start": self.start,
        }
        return doc


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path} is not valid JSON: {exc}") from exc
    return RunConfig.from_dict(doc, base_dir=path.parent)


def make_sampler(
    spec: dict,
    series: np.ndarray | None = None,
    stage_horizon: int | None = None,
) -> TrajectorySampler:
    """Instantiate the sampler named by a config fragment.

    `series` feeds the data-driven kinds (replay, bootstrap); bootstrap cuts
    the history into whole stage-horizon blocks.
    """
    kind = spec.get("kind")
    if kind == "gaussian_ar":
        params = GaussianARParams(
            transition=np.asarray(spec["transition"], dtype=float),
            intercept=np.asarray(spec["intercept"], dtype=float),
            noise_scale=np.asarray(spec["noise_scale"], dtype=float),
        )
        return GaussianARSampler(params)
    if kind == "regime_mixture":
        params = RegimeMixtureParams(
            weights=np.asarray(spec["weights"], dtype=float),
            drifts=np.asarray(spec["drifts"], dtype=float),
            noise_scale=float(spec.get("noise_scale", 0.0)),
        )
        return RegimeMixtureSampler(params)
    if kind == "constant":
        return ConstantSampler(np.asarray(spec["block"], dtype=float))
    if kind == "replay":
        if series is None:
            raise UsageError("replay sampler needs price data")
        return ReplaySampler(series)
    if kind == "bootstrap":
        if series is None or stage_horizon is None:
            raise UsageError("bootstrap sampler needs price data")
        n_blocks = series.shape[0] // stage_horizon
        if n_blocks == 0:
            raise UsageError("price data shorter than one stage horizon")
        blocks = series[: n_blocks * stage_horizon].reshape(
            n_blocks, stage_horizon, -1
        )
        return BootstrapSampler(blocks)
    if kind == "external":
        timeout = float(spec.get("timeout", 120.0))
        if "command" in spec:
            return ExternalSampler.spawn(list(spec["command"]), timeout=timeout)
        if "host" in spec and "port" in spec:
            return ExternalSampler.connect(
                str(spec["host"]), int(spec["port"]), timeout=timeout
            )
        raise UsageError("external sampler needs a command or host/port")
    raise UsageError(f"unknown sampler kind {kind!r}")


# ---------------------------------------------------------------------------
# price data
# ---------------------------------------------------------------------------


def ingest_prices(
    path: str | Path, columns: list[str] | None = None
) -> tuple[np.ndarray, list[datetime], list[str]]:
    """Read an hourly price CSV: header `timestamp,<name_1>,...,<name_D>`.

    Timestamps must be ISO-8601, strictly increasing, and exactly hourly;
    gaps, duplicates, and unparsable cells are rejected.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise PriceDataError(f"{path}: empty file") from None
        if not header or header[0] != "timestamp" or len(header) < 2:
            raise PriceDataError(
                f"{path}: header must be 'timestamp,<name_1>,...', got {header!r}"
            )
        names = header[1:]
        if columns is not None:
            missing = [c for c in columns if c not in names]
            if missing:
                raise PriceDataError(f"{path}: columns {missing} not in {names}")
            select = [names.index(c) for c in columns]
            names = list(columns)
        else:
            select = list(range(len(header) - 1))
        rows: list[list[float]] = []
        stamps: list[datetime] = []
        prev: datetime | None = None
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise PriceDataError(
                    f"{path}:{line_no}: expected {len(header)} cells, got {len(row)}"
                )
            try:
                stamp = datetime.fromisoformat(row[0])
            except ValueError as exc:
                raise PriceDataError(
                    f"{path}:{line_no}: bad timestamp {row[0]!r}"
                ) from exc
            if prev is not None:
                if stamp == prev:
                    raise PriceDataError(
                        f"{path}:{line_no}: duplicate timestamp {row[0]}"
                    )
                if stamp < prev:
                    raise PriceDataError(
                        f"{path}:{line_no}: timestamps not increasing at {row[0]}"
                    )
                if stamp - prev != timedelta(hours=1):
                    raise PriceDataError(
                        f"{path}: missing hour(s) after "
                        f"{prev.isoformat()} (next row is {row[0]})"
                    )
            prev = stamp
            try:
                rows.append([float(row[1 + j]) for j in select])
            except ValueError as exc:
                raise PriceDataError(
                    f"{path}:{line_no}: non-numeric price cell"
                ) from exc
            stamps.append(stamp)
    if not rows:
        raise PriceDataError(f"{path}: no data rows")
    return np.asarray(rows, dtype=float), stamps, names


def _load_series(config: RunConfig) -> tuple[np.ndarray, list[datetime], int]:
    if config.data_path is None:
        raise UsageError("config has no data.path")
    columns = None
    matrix, stamps, names = ingest_prices(config.data_path, columns)
    if matrix.shape[1] != config.tree.series_dim:
        raise UsageError(
            f"data has {matrix.shape[1]} price columns, config.tree.series_dim "
            f"is {config.tree.series_dim}"
        )
    if config.trading_column is None:
        trading_dim = 0
    else:
        if config.trading_column not in names:
            raise UsageError(
                f"trading column {config.trading_column!r} not in {names}"
            )
        trading_dim = names.index(config.trading_column)
    return matrix, stamps, trading_dim


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_build_tree(args) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config.tree = replace(config.tree, master_seed=args.seed)
    series, _, _ = _load_series(config)
    start = config.start if config.start is not None else 1
    history = series[: start + config.tree.stage_horizon]
    sampler = make_sampler(
        config.sampler_spec, series=series, stage_horizon=config.tree.stage_horizon
    )
    tree = build_tree(sampler, history, config.tree)
    out = Path(args.out or config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    fmt = args.format or "json"
    wrote = []
    if fmt in ("json", "csv"):
        target = out / "tree.json"
        target.write_text(tree_to_json(tree), encoding="utf-8")
        wrote.append(target)
    if fmt in ("dot", "json", "csv"):
        target = out / "tree.dot"
        target.write_text(export_dot(tree), encoding="utf-8")
        wrote.append(target)
    for path in wrote:
        print(path)
    return 0


def _policy_objects(config: RunConfig, series, trading_dim) -> list[PolicyKind]:
    policies = []
    for entry in config.policies:
        kind = entry.get("kind")
        sampler = None
        if "sampler" in entry and entry["sampler"] is not None:
            sampler = make_sampler(
                entry["sampler"], series=series,
                stage_horizon=config.tree.stage_horizon,
            )
        try:
            policies.append(
                PolicyKind(kind=kind, sampler=sampler, label=entry.get("label"))
            )
        except InvalidInputError as exc:
            raise UsageError(str(exc)) from exc
    return policies


def cmd_plan(args) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config.tree = replace(config.tree, master_seed=args.seed)
    series, _, trading_dim = _load_series(config)
    sampler = make_sampler(
        config.sampler_spec, series=series, stage_horizon=config.tree.stage_horizon
    )
    policies = _policy_objects(config, series, trading_dim)
    if args.policy is not None:
        chosen = next((p for p in policies if p.name == args.policy), None)
        if chosen is None:
            chosen = PolicyKind(kind=args.policy)
    else:
        chosen = policies[0]
    start = config.start if config.start is not None else 1
    h = config.tree.stage_horizon
    horizon = start + h + config.tree.depth * h
    result = run_episode(
        chosen,
        series[:horizon],
        sampler,
        battery=config.battery,
        tree_config=config.tree,
        opt_config=config.optimizer,
        soc0=config.soc0,
        trading_dim=trading_dim,
        start=start,
    )
    plan = result.epoch_plans[0]
    if args.format == "csv":
        print("hour,p_charge,p_discharge")
        for j, act in enumerate(plan):
            print(f"{j},{act.p_c:.6f},{act.p_d:.6f}")
    else:
        print(
            json.dumps(
                {
                    "policy": chosen.name,
                    "first_stage": [[act.p_c, act.p_d] for act in plan],
                    "epoch_reward": result.epoch_rewards[0],
                }
            )
        )
    return 0


def _by_month(stamps: list[datetime]) -> dict[str, slice]:
    months: dict[str, slice] = {}
    current = None
    begin = 0
    for i, stamp in enumerate(stamps):
        label = f"{stamp.year:04d}-{stamp.month:02d}"
        if label != current:
            if current is not None:
                months[current] = slice(begin, i)
            current, begin = label, i
    if current is not None:
        months[current] = slice(begin, len(stamps))
    return months


def cmd_simulate(args) -> int:
    config = load_config(args.config)
    series, stamps, trading_dim = _load_series(config)
    out = Path(args.out or config.output_dir)
    (out / "logs").mkdir(parents=True, exist_ok=True)
    seeds = [args.seed] if args.seed is not None else config.seeds
    start = config.start if config.start is not None else 1
    h = config.tree.stage_horizon

    # One task per (month, policy, seed) episode; episodes are independent
    # and fully seeded, so they may run on any number of workers and the
    # merged results are identical.
    tasks = []
    month_index = 0
    for month, span in _by_month(stamps).items():
        month_series = series[span]
        if month_series.shape[0] < start + h:
            print(f"skipping {month}: too short for one epoch", file=sys.stderr)
            continue
        sampler = make_sampler(
            config.sampler_spec, series=month_series, stage_horizon=h
        )
        for seed in seeds:
            for policy in _policy_objects(config, month_series, trading_dim):
                cfg = replace(config.tree, master_seed=mix_seed(seed, month_index))
                log_path = out / "logs" / f"{month}_{policy.name}_{seed}.ndjson"
                tasks.append((month, policy, seed, month_series, sampler, cfg, log_path))
        month_index += 1

    def run_one(task):
        month, policy, seed, month_series, sampler, cfg, log_path = task
        episode = run_episode(
            policy,
            month_series,
            sampler,
            battery=config.battery,
            tree_config=cfg,
            opt_config=config.optimizer,
            soc0=config.soc0,
            trading_dim=trading_dim,
            start=start,
            log_path=log_path,
        )
        return month, policy.name, episode

    workers = max(1, args.workers)
    if workers > 1 and len(tasks) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(run_one, tasks))
    else:
        outcomes = [run_one(task) for task in tasks]

    results: dict[str, dict[str, list]] = {}
    for month, name, episode in outcomes:
        results.setdefault(month, {}).setdefault(name, []).append(episode)
    averaged = {
        month: {
            name: _mean_episode(episodes) for name, episodes in by_policy.items()
        }
        for month, by_policy in results.items()
    }
    report = aggregate_report(averaged)
    report_path = out / "report.csv"
    report_path.write_text(report, encoding="utf-8")
    print(report_path)
    sys.stdout.write(report)
    return 0


def _mean_episode(episodes):
    from .harness import EpisodeResult

    if len(episodes) == 1:
        return episodes[0]
    total = float(np.mean([e.total_reward for e in episodes]))
    return EpisodeResult(
        total_reward=total, epoch_rewards=[total], epoch_plans=[[]],
        final_soc=float(np.mean([e.final_soc for e in episodes])),
        epoch_seconds=[],
    )


def cmd_bench(args) -> int:
    config = load_config(args.config)
    sizes = [
        (1, 2, 2, 64),
        (2, 2, 2, 128),
        (2, 4, 2, 256),
        (3, 4, 2, 256),
    ]
    sampler_spec = config.sampler_spec
    if sampler_spec.get("kind") in ("replay", "bootstrap", "external"):
        raise UsageError("bench needs a synthetic sampler (gaussian_ar/regime_mixture)")
    print("depth,clusters,keep,samples,stage_horizon,nodes,build_seconds,solve_seconds")
    h = config.tree.stage_horizon
    history = np.full((h, config.tree.series_dim), 30.0)
    for depth, k, keep, m in sizes:
        sampler = make_sampler(sampler_spec)
        cfg = replace(
            config.tree, depth=depth, clusters=k, keep_children=keep,
            samples_per_node=m,
        )
        t0 = time.perf_counter()
        tree = build_tree(sampler, history, cfg)
        t1 = time.perf_counter()
        prog = formulate_tree_lp(
            tree, config.battery, config.optimizer,
            soc0=config.soc0 if config.soc0 is not None else config.battery.soc_min,
        )
        sol = solve_lp(prog, tol=config.optimizer.solver_tolerance)
        t2 = time.perf_counter()
        if sol.status != "optimal":
            raise SolverFailureError(f"bench solve came back {sol.status}")
        print(
            f"{depth},{k},{keep},{m},{h},{len(tree)},{t1 - t0:.4f},{t2 - t1:.4f}"
        )
    return 0


def cmd_synth(args) -> int:
    config = load_config(args.config)
    spec = config.sampler_spec
    if spec.get("kind") not in ("gaussian_ar", "regime_mixture", "constant"):
        raise UsageError("synth needs a synthetic sampler (gaussian_ar/regime_mixture)")
    sampler = make_sampler(spec)
    seed = args.seed if args.seed is not None else config.tree.master_seed
    hours = args.hours
    h = config.tree.stage_horizon
    d = config.tree.series_dim
    history = np.full((1, d), args.level)
    blocks = []
    total = 0
    block_idx = 0
    while total < hours:
        req = SamplerRequest(
            history=history, m=1, h=h, seed=mix_seed(seed, block_idx)
        )
        block = sampler.sample(req).samples[0]
        blocks.append(block)
        history = np.vstack([history, block])
        total += h
        block_idx += 1
    series = np.vstack(blocks)[:hours]
    t0 = datetime.fromisoformat(args.start_time)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    names = [config.trading_column or "price"]
    if d > 1:
        names = [f"price_{i}" for i in range(d)]
    with out.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp"] + names)
        for i in range(hours):
            stamp = t0 + timedelta(hours=i)
            writer.writerow(
                [stamp.isoformat(sep=" ", timespec="minutes")]
                + [f"{v:.6f}" for v in series[i]]
            )
    print(out)
    return 0


# ---------------------------------------------------------------------------
# argument parsing and dispatch
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit code 1 instead of argparse's 2
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="scentree", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="path to JSON run config")
        p.add_argument("--seed", type=int, default=None, help="master seed override")
        p.add_argument("--out", default=None, help="output directory override")

    p = sub.add_parser("build-tree", help="build a scenario tree, emit JSON + DOT")
    common(p)
    p.add_argument("--format", choices=["csv", "json", "dot"], default="json")
    p.set_defaults(func=cmd_build_tree)

    p = sub.add_parser("plan", help="plan one epoch, print the first-stage actions")
    common(p)
    p.add_argument("--policy", default=None)
    p.add_argument("--format", choices=["csv", "json"], default="json")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("simulate", help="run full episodes, write report CSV")
    common(p)
    p.add_argument("--workers", type=int, default=1,
                   help="episodes to run in parallel (results are identical)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("bench", help="time tree build + solve across sizes")
    common(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("synth", help="generate a synthetic price CSV")
    common(p)
    p.add_argument("--hours", type=int, default=96)
    p.add_argument("--level", type=float, default=30.0)
    p.add_argument("--start-time", default="2021-01-30 00:00")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        print(parser.format_usage(), file=sys.stderr, end="")
        return 1
    except InvalidInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (PriceDataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except SolverFailureError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 3


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
