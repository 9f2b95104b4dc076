"""Command-line front end.

Subcommands: gen-scenes, run, bench-budget, ablate, replay. Settings come from
built-in defaults, then ``--config`` (JSON, see :class:`RunConfig`), then flags;
later sources win.

Exit codes: 0 success, 1 usage error, 2 infeasible configuration, 3 internal
invariant violation.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from . import experiments
from .episode import ConfigError, read_log
from .kvstore import BudgetInfeasibleError
from .attention import tokenize
from .runconfig import RunConfig, build_id

log = logging.getLogger("navmem")

EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_INTERNAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run config file")
    p.add_argument("--seed", type=int, action="append", help="episode/scene seed (repeatable)")
    p.add_argument("--seeds", type=int, help="use seeds 0..N-1")
    p.add_argument("--mode", choices=["baseline-recompute", "offload-per-decode", "efficientnav"])
    p.add_argument("--budget-bytes", type=int)
    p.add_argument("--backend", choices=["semantic-oracle", "tiny-llm"])
    p.add_argument("--cluster-method", choices=["attention", "position"])
    p.add_argument("--retrieval-method", choices=["knapsack", "distance-baseline", "all-groups"])
    p.add_argument("--goal", action="append", help="goal category (repeatable)")
    p.add_argument("--jobs", type=int)
    p.add_argument("--out-dir")
    p.add_argument("--embed-endpoint", help="URL of a remote embedding service")
    p.add_argument("--explore-only", action="store_true", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="navmem", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-scenes", help="write scene JSON files and a manifest")
    _common(p)
    p.add_argument("--count", type=int, default=1, help="number of scenes (seeds start at --seed or 0)")

    p = sub.add_parser("run", help="run one episode per seed")
    _common(p)

    p = sub.add_parser("bench-budget", help="sweep device memory budgets")
    _common(p)
    p.add_argument("--budgets", type=int, nargs="+", help="budgets in bytes")
    p.add_argument("--fractions", type=float, nargs="+", help="budgets as fractions of each map's KV size")

    p = sub.add_parser("ablate", help="the four cumulative component configurations")
    _common(p)

    p = sub.add_parser("replay", help="re-run a logged episode and compare byte for byte")
    p.add_argument("log", help="episode JSONL log")
    p.add_argument("--out-dir")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Defaults, then the config file, then flags."""
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    system = {}
    for flag, key in (("mode", "mode"), ("budget_bytes", "budget_bytes"), ("backend", "backend"),
                      ("cluster_method", "cluster_method"), ("retrieval_method", "retrieval_method"),
                      ("embed_endpoint", "embed_endpoint")):
        value = getattr(args, flag, None)
        if value is not None:
            system[key] = value
    top = {}
    if getattr(args, "seeds", None) is not None:
        top["seeds"] = tuple(range(args.seeds))
    if getattr(args, "seed", None):
        top["seeds"] = tuple(args.seed)
    if getattr(args, "goal", None):
        top["goals"] = tuple(args.goal)
    for flag in ("jobs", "out_dir", "explore_only"):
        value = getattr(args, flag, None)
        if value is not None:
            top[flag] = value
    if getattr(args, "budgets", None):
        top["budgets"] = tuple(args.budgets)
    if getattr(args, "fractions", None):
        top["budget_fractions"] = tuple(args.fractions)
        top.setdefault("budgets", ())
    if system:
        top["system"] = cfg.system.replace(**system)
    cfg = cfg.replace(**top)
    cfg.validate()
    check_budget(cfg)
    return cfg


def check_budget(cfg: RunConfig) -> None:
    """Reject budgets that cannot hold even a one-object group; warn below the largest group."""
    system = cfg.system
    per_token = system.model.bytes_per_token()
    smallest = len(tokenize("Object Group 1: {object: x, position:(0,0,0)}")) * per_token
    if system.budget_bytes < smallest:
        raise BudgetInfeasibleError(f"budget {system.budget_bytes} bytes is smaller than any group ({smallest} bytes)")
    largest = system.cluster.max_group_tokens * per_token
    if system.retrieval_method == "knapsack" and system.budget_bytes < largest:
        log.warning("budget %d bytes is below the largest possible group (%d bytes)", system.budget_bytes, largest)


def _provenance(cfg: RunConfig) -> dict:
    return {"build": build_id(), "run_config": cfg.to_dict()}


def _write_csv(path: Path, rows: list[dict], cfg: RunConfig) -> None:
    """CSV with the resolved config and build id as leading ``#`` comment lines."""
    prov = _provenance(cfg)
    with open(path, "w", newline="") as fh:
        fh.write(f"# build: {prov['build']}\n")
        fh.write(f"# config: {json.dumps(prov['run_config'], sort_keys=True)}\n")
        if rows:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
            writer.writeheader()
            writer.writerows(rows)


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gen_scenes(cfg: RunConfig, count: int) -> int:
    from .scene import generate_scene
    out = _out_dir(cfg)
    first = cfg.seeds[0] if cfg.seeds else 0
    entries = []
    for seed in range(first, first + count):
        scene = generate_scene(seed, cfg.scene)
        path = out / f"scene_{seed}.json"
        scene.save(path)
        entries.append({"seed": seed, "file": path.name, "sha256": hashlib.sha256(path.read_bytes()).hexdigest()})
    manifest = {**_provenance(cfg), "scenes": entries}
    _write_json(out / "manifest.json", manifest)
    print(json.dumps({"scenes": entries}, sort_keys=True, indent=2))
    return EXIT_OK


def _write_logs(out: Path, outcomes, prefix: str = "episode") -> None:
    for o in outcomes:
        with open(out / f"{prefix}_{o.seed}.jsonl", "w") as fh:
            fh.write("\n".join(o.lines) + "\n")


def cmd_run(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    outcomes = experiments.run_many(cfg)
    _write_logs(out, outcomes)
    summary = experiments.summarize(outcomes)
    row = {k: summary[k] for k in ("episodes", "sr", "spl", "mean_rtl", "mean_e2el", "hit_rate")}
    _write_csv(out / "summary.csv", [row], cfg)
    _write_json(out / "config.json", _provenance(cfg))
    print(json.dumps(row, sort_keys=True))
    return EXIT_OK


def cmd_bench_budget(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    rows = experiments.bench_budget(cfg)
    fields = ("budget", "budget_fraction", "hit_rate", "hit_rate_pooled", "mean_rtl", "sr", "spl")
    rows = [{k: r[k] for k in fields} for r in rows]
    _write_csv(out / "bench_budget.csv", rows, cfg)
    for r in rows:
        print(json.dumps(r, sort_keys=True))
    return EXIT_OK


def cmd_ablate(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    rows = experiments.ablate(cfg)
    _write_csv(out / "ablation.csv", rows, cfg)
    for r in rows:
        print(json.dumps(r, sort_keys=True))
    return EXIT_OK


def replay_log(path: str | Path) -> tuple[bool, list[str], list[str]]:
    """Re-run the episode described by a log header; returns (identical, original, replayed)."""
    original = Path(path).read_text().splitlines()
    records = read_log(path)
    if not records or records[0].get("type") != "header":
        raise ConfigError(f"{path} has no header record")
    header = records[0]
    cfg = RunConfig.from_dict(header["run_config"])
    outcome = experiments.run_seed(cfg, int(header["seed"]))
    return outcome.lines == original, original, outcome.lines


def cmd_replay(path: str) -> int:
    same, original, replayed = replay_log(path)
    if same:
        print(f"replay identical: {len(original)} lines")
        return EXIT_OK
    for i, (a, b) in enumerate(zip(original, replayed)):
        if a != b:
            print(f"replay differs at line {i + 1}", file=sys.stderr)
            break
    else:
        print(f"replay differs in length: {len(original)} vs {len(replayed)} lines", file=sys.stderr)
    return EXIT_INTERNAL


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "replay":
            return cmd_replay(args.log)
        cfg = resolve_config(args)
        if args.command == "gen-scenes":
            return cmd_gen_scenes(cfg, args.count)
        if args.command == "run":
            return cmd_run(cfg)
        if args.command == "bench-budget":
            return cmd_bench_budget(cfg)
        if args.command == "ablate":
            return cmd_ablate(cfg)
    except (ConfigError, BudgetInfeasibleError) as exc:
        print(f"infeasible configuration: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # invariant violations and bugs
        log.exception("internal error")
        print(f"internal error: {exc!r}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
